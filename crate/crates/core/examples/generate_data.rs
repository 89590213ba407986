//! Draws one source/target problem and writes it as a dataset CSV.
//!
//! cargo run --release --example generate_data -- [out.csv] [label_ratio]

use std::path::PathBuf;

use spdim::generative::{simulate_problem, GenerativeConfig};
use spdim::io::{load_dataset, save_dataset, sidecar_path};

fn main() -> spdim::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(
        || std::env::temp_dir().join("spdim_data.csv"),
        PathBuf::from,
    );
    let label_ratio = args.next().map_or(0.2, |s| s.parse().expect("label ratio"));

    let cfg = GenerativeConfig {
        label_ratio,
        ..GenerativeConfig::default()
    };
    let problem = simulate_problem(&cfg)?;
    for ds in problem
        .sources
        .iter()
        .chain(std::iter::once(&problem.target))
    {
        println!(
            "domain {}: {} covariances, class counts {:?}",
            ds.domain_id,
            ds.len(),
            ds.class_counts(cfg.n_classes)
        );
    }

    let mut all = problem.sources.clone();
    all.push(problem.target.unlabeled());
    save_dataset(&out, &all, &cfg)?;
    let back = load_dataset(&out)?;
    let identical = all.iter().zip(&back).all(|(a, b)| {
        a.covariances
            .iter()
            .zip(&b.covariances)
            .all(|(x, y)| x.as_matrix() == y.as_matrix())
    });
    println!(
        "wrote {} and {}; reread identical: {identical}",
        out.display(),
        sidecar_path(&out).display()
    );
    Ok(())
}
