//! A small version of the label-ratio grid: mean balanced accuracy per method,
//! plus the paired sign test of SPDIM(bias) against RCT.
//!
//! cargo run --release --example label_shift_sweep -- [n_seeds] [results.csv]

use spdim::sim::{
    mean_accuracy, paired_sign_test, run_experiment, write_results_csv, ExperimentConfig, Method,
};

fn main() -> spdim::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds = args.next().map_or(10, |s| s.parse().expect("seed count"));
    let cfg = ExperimentConfig {
        methods: Method::ALL.to_vec(),
        n_seeds,
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(&cfg)?;

    print!("{:>12}", "label ratio");
    for m in &cfg.methods {
        print!("{m:>16}");
    }
    println!("{:>22}", "bias>RCT (p)");
    for &lr in &cfg.label_ratios {
        print!("{lr:>12}");
        for &m in &cfg.methods {
            print!("{:>16.4}", mean_accuracy(&rows, m, lr).unwrap_or(f64::NAN));
        }
        let (wins, trials, p) = paired_sign_test(&rows, Method::SpdimBias, Method::Rct, lr);
        println!("{:>22}", format!("{wins}/{trials} ({p:.3})"));
    }
    if let Some(path) = args.next() {
        write_results_csv(&rows, std::fs::File::create(&path)?)?;
        println!("rows written to {path}");
    }
    Ok(())
}
