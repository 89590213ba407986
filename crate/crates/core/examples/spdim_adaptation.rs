//! Fits SPDIM(bias) and SPDIM(geodesic) on one label-shifted target domain
//! and compares balanced accuracy against plain RCT.
//!
//! cargo run --release --example spdim_adaptation -- [seed] [label_ratio] [lr] [epochs]

use spdim::alignment::{fit_domain_mean, tsm_all, Bias, DomainAlignment};
use spdim::frechet::FrechetConfig;
use spdim::generative::{simulate_problem, GenerativeConfig};
use spdim::learner::{
    balanced_accuracy, fit_spdim_bias, fit_spdim_geodesic, ImConfig, ImMode, TrainConfig,
};
use spdim::sim::train_source_model;
use spdim::spd::{airm_distance, SpdMatrix};

fn main() -> spdim::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let label_ratio = args.next().map_or(0.2, |s| s.parse().expect("label ratio"));

    let cfg = GenerativeConfig {
        seed,
        label_ratio,
        ..GenerativeConfig::default()
    };
    let problem = simulate_problem(&cfg)?;
    let frechet = FrechetConfig::default();
    let source = train_source_model(&problem.sources, &frechet, &TrainConfig::default())?;
    let target = problem.target.unlabeled();
    let truth = problem
        .target
        .labels
        .as_ref()
        .expect("labels kept for scoring");
    let aligned = fit_domain_mean(&target, &frechet)?;

    let score = |bias: Bias| -> spdim::Result<f64> {
        let a = DomainAlignment {
            bias,
            ..aligned.clone()
        };
        let feats = target
            .covariances
            .iter()
            .map(|c| a.transform(c))
            .collect::<spdim::Result<Vec<_>>>()?;
        balanced_accuracy(truth, &source.classifier.predict(&feats)?)
    };
    let rct = balanced_accuracy(
        truth,
        &source
            .classifier
            .predict(&tsm_all(&target.covariances, &aligned.mean)?)?,
    )?;
    println!(
        "target counts {:?}",
        problem.target.class_counts(cfg.n_classes)
    );
    println!("RCT             BA {rct:.4}");

    let defaults = ImConfig::default();
    let im = ImConfig {
        learning_rate: args.next().map_or(defaults.learning_rate, |s| {
            s.parse().expect("learning rate")
        }),
        epochs: args
            .next()
            .map_or(defaults.epochs, |s| s.parse().expect("epochs")),
        ..defaults
    };
    let fit = fit_spdim_bias(&target, &aligned.mean, &source.classifier, &im)?;
    let moved = airm_distance(&fit.bias, &SpdMatrix::identity(cfg.dim))?;
    println!(
        "SPDIM(bias)     BA {:.4}  IM loss {:.5} -> {:.5}  δ(Φ, I) {moved:.4}",
        score(Bias::Spd(fit.bias.clone()))?,
        fit.loss_history[0],
        fit.loss
    );

    let geo = fit_spdim_geodesic(
        &target,
        &aligned.mean,
        &source.classifier,
        &im.with_mode(ImMode::GeodesicStep),
    )?;
    println!(
        "SPDIM(geodesic) BA {:.4}  IM loss {:.5} -> {:.5}  φ {:.4}",
        score(Bias::GeodesicStep(geo.step))?,
        geo.loss_history[0],
        geo.loss,
        geo.step
    );
    Ok(())
}
