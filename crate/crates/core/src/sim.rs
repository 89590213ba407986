//! Simulation grid, verification suites, and the result CSV.
//!
//! One run per grid point and seed: draw balanced source domains and one
//! label-shifted target, train the softmax head on pooled RCT+TSM source
//! features, then score each requested adaptation method on the target by
//! balanced accuracy.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    fit_domain_mean, fit_rct, loglog_slope, splitting_residual, tsm_all, DomainAlignment,
};
use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, frechet_variance, karcher_gradient, FrechetConfig};
use crate::generative::{
    antisymmetric_latents, build_domain, latent_to_source_covariance, sample_forward_models,
    sample_label_structure, sample_latents, simulate_problem, DomainDataset, GenerativeConfig,
    SimulatedProblem,
};
use crate::learner::{
    balanced_accuracy, fit_spdim, softmax_loss_and_grad, train_softmax, BiasObjective, ImConfig,
    ImMode, SoftmaxClassifier, TrainConfig,
};
use crate::random::{random_orthogonal, random_spd, random_symmetric, substream, Purpose};
use crate::spd::{
    airm_distance, airm_inner, exp_map, upper, upper_index_pairs, SpdMatrix, SymMatrix,
    TangentVector,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RCT")]
    Rct,
    #[serde(rename = "SPDIM_bias")]
    SpdimBias,
    #[serde(rename = "SPDIM_geodesic")]
    SpdimGeodesic,
    #[serde(rename = "TSM_global")]
    TsmGlobal,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Rct,
        Method::SpdimBias,
        Method::SpdimGeodesic,
        Method::TsmGlobal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rct => "RCT",
            Method::SpdimBias => "SPDIM_bias",
            Method::SpdimGeodesic => "SPDIM_geodesic",
            Method::TsmGlobal => "TSM_global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Settings not covered by a sweep axis.
    pub base: GenerativeConfig,
    pub label_ratios: Vec<f64>,
    pub class_seps: Vec<f64>,
    pub n_source_domains: Vec<usize>,
    pub samples_per_domain: Vec<usize>,
    pub dims: Vec<usize>,
    pub informative_dims: Vec<usize>,
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    /// Seed of run `s` is `seed + s`.
    pub seed: u64,
    pub frechet: FrechetConfig,
    pub train: TrainConfig,
    pub im: ImConfig,
    pub output_path: Option<PathBuf>,
    /// Wall times make the CSV non-reproducible; when off the column is 0.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = GenerativeConfig::default();
        Self {
            label_ratios: vec![1.0, 0.6, 0.33, 0.2],
            class_seps: vec![base.class_sep],
            n_source_domains: vec![base.n_source_domains],
            samples_per_domain: vec![base.samples_per_domain],
            dims: vec![base.dim],
            informative_dims: vec![base.informative_dim],
            base,
            methods: vec![Method::Rct, Method::SpdimBias, Method::SpdimGeodesic],
            n_seeds: 20,
            seed: 0,
            frechet: FrechetConfig::default(),
            train: TrainConfig::default(),
            im: ImConfig::default(),
            output_path: None,
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("label_ratios", self.label_ratios.is_empty()),
            ("class_seps", self.class_seps.is_empty()),
            ("n_source_domains", self.n_source_domains.is_empty()),
            ("samples_per_domain", self.samples_per_domain.is_empty()),
            ("dims", self.dims.is_empty()),
            ("informative_dims", self.informative_dims.is_empty()),
            ("methods", self.methods.is_empty()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!("sweep {name} is empty")));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        self.frechet.validate()
    }

    /// Grid points in a fixed nesting order, label ratio innermost.
    pub fn grid(&self) -> Vec<GenerativeConfig> {
        let mut out = Vec::new();
        for &class_sep in &self.class_seps {
            for &n_source_domains in &self.n_source_domains {
                for &samples_per_domain in &self.samples_per_domain {
                    for &dim in &self.dims {
                        for &informative_dim in &self.informative_dims {
                            for &label_ratio in &self.label_ratios {
                                out.push(GenerativeConfig {
                                    class_sep,
                                    n_source_domains,
                                    samples_per_domain,
                                    dim,
                                    informative_dim,
                                    label_ratio,
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub method: Method,
    pub seed: u64,
    pub label_ratio: f64,
    pub class_sep: f64,
    pub n_source_domains: usize,
    pub samples_per_domain: usize,
    #[serde(rename = "P")]
    pub dim: usize,
    #[serde(rename = "D")]
    pub informative_dim: usize,
    /// Empty when the run failed.
    pub balanced_accuracy: Option<f64>,
    pub wall_time_ms: f64,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

impl ResultRow {
    fn new(method: Method, seed: u64, cfg: &GenerativeConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            method,
            seed,
            label_ratio: cfg.label_ratio,
            class_sep: cfg.class_sep,
            n_source_domains: cfg.n_source_domains,
            samples_per_domain: cfg.samples_per_domain,
            dim: cfg.dim,
            informative_dim: cfg.informative_dim,
            balanced_accuracy: None,
            wall_time_ms: 0.0,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Source-side state shared by every adaptation method of one run.
pub struct SourceModel {
    pub params: crate::alignment::AlignmentParams,
    pub classifier: SoftmaxClassifier,
}

/// Fits per-domain RCT means on the sources and trains the head on pooled features.
pub fn train_source_model(
    sources: &[DomainDataset],
    frechet: &FrechetConfig,
    train: &TrainConfig,
) -> Result<SourceModel> {
    let params = fit_rct(sources, frechet)?;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for ds in sources {
        feats.extend(params.transform_dataset(ds)?);
        labels.extend(ds.labels.as_ref().ok_or_else(|| {
            Error::Argument(format!("source domain {} is unlabeled", ds.domain_id))
        })?);
    }
    let classifier = train_softmax(&feats, &labels, train)?;
    Ok(SourceModel { params, classifier })
}

/// Target predictions of one method.
pub fn adapt_and_predict(
    method: Method,
    problem: &SimulatedProblem,
    source: &SourceModel,
    target_mean: &DomainAlignment,
    frechet: &FrechetConfig,
    train: &TrainConfig,
    im: &ImConfig,
) -> Result<Vec<usize>> {
    let target = problem.target.unlabeled();
    match method {
        Method::Rct => source
            .classifier
            .predict(&tsm_all(&target.covariances, &target_mean.mean)?),
        Method::SpdimBias | Method::SpdimGeodesic => {
            let mode = if method == Method::SpdimBias {
                ImMode::SpdBias
            } else {
                ImMode::GeodesicStep
            };
            let bias = fit_spdim(
                &target,
                &target_mean.mean,
                &source.classifier,
                &im.with_mode(mode),
            )?;
            let params = DomainAlignment {
                bias,
                ..target_mean.clone()
            };
            let feats = target
                .covariances
                .iter()
                .map(|c| params.transform(c))
                .collect::<Result<Vec<_>>>()?;
            source.classifier.predict(&feats)
        }
        Method::TsmGlobal => {
            let pooled: Vec<SpdMatrix> = problem
                .sources
                .iter()
                .flat_map(|d| d.covariances.iter().cloned())
                .collect();
            let global = frechet_mean(&pooled, frechet)?.mean;
            let labels: Vec<usize> = problem
                .sources
                .iter()
                .flat_map(|d| d.labels.clone().unwrap_or_default())
                .collect();
            let clf = train_softmax(&tsm_all(&pooled, &global)?, &labels, train)?;
            clf.predict(&tsm_all(&target.covariances, &global)?)
        }
    }
}

fn run_point(cfg: &ExperimentConfig, point: &GenerativeConfig, seed_index: u64) -> Vec<ResultRow> {
    let started = Instant::now();
    let gen_cfg = GenerativeConfig {
        seed: cfg.seed.wrapping_add(seed_index),
        ..point.clone()
    };
    let shared = (|| -> Result<_> {
        let problem = simulate_problem(&gen_cfg)?;
        let source = train_source_model(&problem.sources, &cfg.frechet, &cfg.train)?;
        let target_mean = fit_domain_mean(&problem.target.unlabeled(), &cfg.frechet)?;
        Ok((problem, source, target_mean))
    })();
    let shared_ms = started.elapsed().as_secs_f64() * 1e3;

    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = ResultRow::new(method, seed_index, point);
            let t0 = Instant::now();
            let outcome =
                shared
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|(problem, source, mean)| {
                        let pred = adapt_and_predict(
                            method,
                            problem,
                            source,
                            mean,
                            &cfg.frechet,
                            &cfg.train,
                            &cfg.im,
                        )
                        .map_err(|e| e.to_string())?;
                        let truth = problem
                            .target
                            .labels
                            .as_ref()
                            .expect("target keeps labels for scoring");
                        balanced_accuracy(truth, &pred).map_err(|e| e.to_string())
                    });
            match outcome {
                Ok(ba) => row.balanced_accuracy = Some(ba),
                Err(msg) => row.status = format!("error: {msg}"),
            }
            if cfg.record_wall_time {
                row.wall_time_ms = shared_ms + t0.elapsed().as_secs_f64() * 1e3;
            }
            row
        })
        .collect()
}

/// Runs every grid point × seed in parallel; rows come back sorted by
/// `(grid index, seed, method)` regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let grid = cfg.grid();
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| (0..cfg.n_seeds as u64).map(move |s| (g, s)))
        .collect();
    let mut tagged: Vec<(usize, u64, Vec<ResultRow>)> = jobs
        .par_iter()
        .map(|&(g, s)| (g, s, run_point(cfg, &grid[g], s)))
        .collect();
    tagged.sort_by_key(|a| (a.0, a.1));
    Ok(tagged
        .into_iter()
        .flat_map(|(_, _, mut rows)| {
            rows.sort_by_key(|r| r.method);
            rows
        })
        .collect())
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

const CSV_HEADER: [&str; 12] = [
    "schema_version",
    "method",
    "seed",
    "label_ratio",
    "class_sep",
    "n_source_domains",
    "samples_per_domain",
    "P",
    "D",
    "balanced_accuracy",
    "wall_time_ms",
    "status",
];

/// Writes rows with a header; floats carry 17 significant digits.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.schema_version.to_string(),
            r.method.name().to_string(),
            r.seed.to_string(),
            fmt_float(r.label_ratio),
            fmt_float(r.class_sep),
            r.n_source_domains.to_string(),
            r.samples_per_domain.to_string(),
            r.dim.to_string(),
            r.informative_dim.to_string(),
            r.balanced_accuracy.map(fmt_float).unwrap_or_default(),
            fmt_float(r.wall_time_ms),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!(
            "unexpected result CSV header {header:?}"
        )));
    }
    let parse_f = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
    };
    let parse_u = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| Error::Config(format!("bad integer {s:?}: {e}")))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        rows.push(ResultRow {
            schema_version: parse_u(f(0))? as u32,
            method: Method::parse(f(1))?,
            seed: parse_u(f(2))?,
            label_ratio: parse_f(f(3))?,
            class_sep: parse_f(f(4))?,
            n_source_domains: parse_u(f(5))? as usize,
            samples_per_domain: parse_u(f(6))? as usize,
            dim: parse_u(f(7))? as usize,
            informative_dim: parse_u(f(8))? as usize,
            balanced_accuracy: if f(9).is_empty() {
                None
            } else {
                Some(parse_f(f(9))?)
            },
            wall_time_ms: parse_f(f(10))?,
            status: f(11).to_string(),
        });
    }
    Ok(rows)
}

/// Mean balanced accuracy of one method at one label ratio over successful rows.
pub fn mean_accuracy(rows: &[ResultRow], method: Method, label_ratio: f64) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.label_ratio == label_ratio)
        .filter_map(|r| r.balanced_accuracy)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// One-sided paired sign test that `better` beats `worse` per seed at a label
/// ratio. Ties are dropped. Returns `(wins, trials, p)` with
/// `p = P(X ≥ wins)`, `X ~ Binomial(trials, 1/2)`.
pub fn paired_sign_test(
    rows: &[ResultRow],
    better: Method,
    worse: Method,
    label_ratio: f64,
) -> (usize, usize, f64) {
    let pick = |m: Method| {
        let mut v: Vec<(u64, f64)> = rows
            .iter()
            .filter(|r| r.method == m && r.label_ratio == label_ratio)
            .filter_map(|r| r.balanced_accuracy.map(|a| (r.seed, a)))
            .collect();
        v.sort_by_key(|x| x.0);
        v
    };
    let (a, b) = (pick(better), pick(worse));
    let mut wins = 0;
    let mut trials = 0;
    for (sa, xa) in &a {
        if let Some((_, xb)) = b.iter().find(|(sb, _)| sb == sa) {
            if xa != xb {
                trials += 1;
                if xa > xb {
                    wins += 1;
                }
            }
        }
    }
    (wins, trials, binomial_upper_tail(trials, wins))
}

fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    use statrs::distribution::{Binomial, DiscreteCDF};
    if k == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("p = 1/2 is a valid probability");
    b.sf(k as u64 - 1)
}

/// One verification entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable pass condition, e.g. `< 1e-6`.
    pub threshold: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, value: f64, threshold: String, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            threshold,
            passed,
        });
    }

    fn push_result(
        &mut self,
        name: &str,
        value: Result<f64>,
        threshold: String,
        pass: impl Fn(f64) -> bool,
    ) {
        match value {
            Ok(v) => self.push(name, v, threshold, pass(v)),
            Err(e) => self.push(name, f64::NAN, format!("{threshold} (error: {e})"), false),
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {:<40} {:>14.6e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropositionConfig {
    pub seed: u64,
    pub frechet: FrechetConfig,
    pub stat_dim: usize,
    pub stat_seeds: usize,
    pub stat_samples: Vec<usize>,
    pub stat_threshold: f64,
    pub splitting_fixtures: usize,
    pub splitting_alphas: Vec<f64>,
}

impl Default for PropositionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frechet: FrechetConfig::default(),
            stat_dim: 4,
            stat_seeds: 20,
            stat_samples: vec![250, 1000, 4000],
            stat_threshold: 0.15,
            splitting_fixtures: 50,
            splitting_alphas: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

fn fixture_config(dim: usize, samples: usize, seed: u64) -> GenerativeConfig {
    GenerativeConfig {
        dim,
        informative_dim: dim,
        n_source_domains: 1,
        samples_per_domain: samples,
        diagonal_only: true,
        standardize: false,
        seed,
        ..GenerativeConfig::default()
    }
}

/// Two domains share one antisymmetric diagonal latent set and `Q` but differ
/// in `P_j` (`‖P_j‖₂ = 1`). Returns the largest elementwise gap between matched
/// RCT+TSM features.
pub fn rct_invariance_discrepancy(
    seed: u64,
    dim: usize,
    samples: usize,
    frechet: &FrechetConfig,
) -> Result<f64> {
    let cfg = GenerativeConfig {
        scaling_strength: 1.0,
        ..fixture_config(dim, samples, seed)
    };
    let structure = sample_label_structure(&cfg, &mut substream(seed, 0, Purpose::LabelStructure))?;
    let models = sample_forward_models(&cfg, &mut substream(seed, 0, Purpose::ForwardModel))?;
    let (latents, labels) = antisymmetric_latents(
        &cfg,
        &structure,
        0,
        &mut substream(seed, 0, Purpose::Latents),
    )?;
    let mut rng = substream(seed, 0, Purpose::TimeSeries);
    let a = build_domain(&cfg, &models, 0, latents.clone(), labels.clone(), &mut rng)?;
    let b = build_domain(&cfg, &models, 1, latents, labels, &mut rng)?;
    let params = fit_rct(&[a.clone(), b.clone()], frechet)?;
    let fa = params.transform_dataset(&a)?;
    let fb = params.transform_dataset(&b)?;
    Ok(fa
        .iter()
        .zip(&fb)
        .flat_map(|(x, y)| {
            x.coords()
                .iter()
                .zip(y.coords())
                .map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max))
}

/// `δ(frechet_mean({E_i}), I)` for an antisymmetric diagonal latent set.
pub fn antisymmetric_mean_distance(
    seed: u64,
    dim: usize,
    samples: usize,
    frechet: &FrechetConfig,
) -> Result<f64> {
    let cfg = fixture_config(dim, samples, seed);
    let structure = sample_label_structure(&cfg, &mut substream(seed, 0, Purpose::LabelStructure))?;
    let (latents, _) = antisymmetric_latents(
        &cfg,
        &structure,
        0,
        &mut substream(seed, 0, Purpose::Latents),
    )?;
    let set = latents
        .iter()
        .map(|s| latent_to_source_covariance(s))
        .collect::<Result<Vec<_>>>()?;
    airm_distance(
        &frechet_mean(&set, frechet)?.mean,
        &SpdMatrix::identity(dim),
    )
}

/// Mean over seeds of `δ(frechet_mean({E_i}), I)` with `M` samples from the
/// full (non-diagonal) model.
pub fn source_mean_distance(
    dim: usize,
    samples: usize,
    seeds: usize,
    base_seed: u64,
    frechet: &FrechetConfig,
) -> Result<f64> {
    let per_seed: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let seed = base_seed.wrapping_add(s);
            let cfg = GenerativeConfig {
                dim,
                informative_dim: dim,
                samples_per_domain: samples,
                noise_std: 1.0,
                standardize: false,
                seed,
                ..GenerativeConfig::default()
            };
            let structure =
                sample_label_structure(&cfg, &mut substream(seed, 0, Purpose::LabelStructure))?;
            let (latents, _) = sample_latents(
                &cfg,
                &structure,
                0,
                &mut substream(seed, 0, Purpose::Latents),
            );
            let set = latents
                .iter()
                .map(|s| latent_to_source_covariance(s))
                .collect::<Result<Vec<_>>>()?;
            airm_distance(
                &frechet_mean(&set, frechet)?.mean,
                &SpdMatrix::identity(dim),
            )
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.iter().sum::<f64>() / seeds as f64)
}

/// Log-log slopes of the splitting residual for random non-commuting fixtures.
pub fn splitting_slopes(n_fixtures: usize, alphas: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = substream(seed, 0, Purpose::Fixture);
    (0..n_fixtures)
        .map(|i| {
            let dim = 2 + i % 4;
            let q = random_orthogonal(dim, &mut rng);
            let e = random_spd(dim, 1.0, &mut rng);
            let p = random_symmetric(dim, &mut rng);
            let p = p.scale(1.0 / p.frobenius_norm());
            let res = alphas
                .iter()
                .map(|&a| splitting_residual(&e, &p, &q, a))
                .collect::<Result<Vec<_>>>()?;
            Ok(loglog_slope(alphas, &res))
        })
        .collect()
}

/// Per-class mean RCT+TSM features of two domains that share class-conditional
/// latents but have priors `pi_a` and `pi_b`. Returns
/// `(‖mean feature gap‖ averaged over classes, ‖B (π_a − π_b)‖)`.
pub fn label_shift_gap(
    seed: u64,
    pi_a: [f64; 2],
    pi_b: [f64; 2],
    frechet: &FrechetConfig,
) -> Result<(f64, f64)> {
    let cfg = fixture_config(3, 400, seed);
    let mut structure =
        sample_label_structure(&cfg, &mut substream(seed, 0, Purpose::LabelStructure))?;
    structure.set_priors(0, pi_a.to_vec())?;
    structure.set_priors(1, pi_b.to_vec())?;
    let models = sample_forward_models(&cfg, &mut substream(seed, 0, Purpose::ForwardModel))?;
    let mut noise_rng = substream(seed, 0, Purpose::Latents);

    // Each class gets noise in ± pairs, class sizes proportional to the priors,
    // so the empirical latent mean is exactly zero and the Fréchet mean of E is I.
    let n_pairs = 100;
    let noise: Vec<Vec<f64>> = (0..n_pairs)
        .map(|_| {
            upper_index_pairs(3)
                .map(|(a, b)| {
                    if a == b {
                        noise_rng.sample(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let build = |domain: u32, pi: [f64; 2]| -> Result<DomainDataset> {
        let mut latents = Vec::new();
        let mut labels = Vec::new();
        for (y, &p) in pi.iter().enumerate() {
            let pairs = (p * n_pairs as f64).round() as usize;
            let offset = structure.class_offset(y, domain);
            for eps in noise.iter().take(pairs) {
                for sign in [1.0, -1.0] {
                    latents.push(offset.iter().zip(eps).map(|(o, e)| o + sign * e).collect());
                    labels.push(y);
                }
            }
        }
        build_domain(
            &cfg,
            &models,
            domain,
            latents,
            labels,
            &mut substream(seed, domain, Purpose::TimeSeries),
        )
    };
    let a = build(0, pi_a)?;
    let b = build(1, pi_b)?;
    let params = fit_rct(&[a.clone(), b.clone()], frechet)?;

    let class_means = |ds: &DomainDataset| -> Result<Vec<Vec<f64>>> {
        let feats = params.transform_dataset(ds)?;
        let labels = ds.labels.as_ref().expect("labeled fixture");
        Ok((0..2)
            .map(|y| {
                let members: Vec<&TangentVector> = feats
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == y)
                    .map(|(f, _)| f)
                    .collect();
                let mut m = vec![0.0; members[0].len()];
                for f in &members {
                    for (acc, v) in m.iter_mut().zip(f.coords()) {
                        *acc += v / members.len() as f64;
                    }
                }
                m
            })
            .collect())
    };
    let (ma, mb) = (class_means(&a)?, class_means(&b)?);
    let gap = ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / 2.0;
    let diff: Vec<f64> = (0..structure.b.nrows())
        .map(|r| {
            structure.b[(r, 0)] * (pi_a[0] - pi_b[0]) + structure.b[(r, 1)] * (pi_a[1] - pi_b[1])
        })
        .collect();
    Ok((gap, diff.iter().map(|x| x * x).sum::<f64>().sqrt()))
}

/// Runs the proposition, splitting-error and label-shift verification suites.
pub fn check_propositions(cfg: &PropositionConfig) -> Report {
    let mut report = Report::default();

    report.push_result(
        "rct_invariance_max_discrepancy",
        rct_invariance_discrepancy(cfg.seed, 3, 200, &cfg.frechet),
        "< 1e-6".into(),
        |v| v < 1e-6,
    );
    report.push_result(
        "antisymmetric_source_mean_distance",
        antisymmetric_mean_distance(cfg.seed, 4, 200, &cfg.frechet),
        "< 1e-7".into(),
        |v| v < 1e-7,
    );

    let stat: Result<Vec<f64>> = cfg
        .stat_samples
        .iter()
        .map(|&m| source_mean_distance(cfg.stat_dim, m, cfg.stat_seeds, cfg.seed, &cfg.frechet))
        .collect();
    match stat {
        Ok(d) => {
            for (m, v) in cfg.stat_samples.iter().zip(&d) {
                report.push(
                    &format!("source_mean_distance_M{m}"),
                    *v,
                    "reported".into(),
                    true,
                );
            }
            let decreasing = d.windows(2).all(|w| w[1] < w[0]);
            report.push(
                "source_mean_distance_decreasing",
                f64::from(u8::from(decreasing)),
                "== 1".into(),
                decreasing,
            );
            let last = *d.last().unwrap_or(&f64::NAN);
            report.push(
                "source_mean_distance_at_largest_M",
                last,
                format!("< {}", cfg.stat_threshold),
                last < cfg.stat_threshold,
            );
        }
        Err(e) => report.push(
            "source_mean_distance",
            f64::NAN,
            format!("error: {e}"),
            false,
        ),
    }

    report.push_result(
        "splitting_slope_fraction_in_[2.7,3.3]",
        splitting_slopes(cfg.splitting_fixtures, &cfg.splitting_alphas, cfg.seed)
            .map(|s| s.iter().filter(|x| (2.7..=3.3).contains(*x)).count() as f64 / s.len() as f64),
        ">= 0.9".into(),
        |v| v >= 0.9,
    );

    let small = label_shift_gap(cfg.seed, [0.5, 0.5], [0.6, 0.4], &cfg.frechet);
    let large = label_shift_gap(cfg.seed, [0.5, 0.5], [0.8, 0.2], &cfg.frechet);
    match (small, large) {
        (Ok((g1, b1)), Ok((g2, b2))) => {
            let ratio = (g1 / b1).min(g2 / b2);
            report.push(
                "label_shift_gap_over_prior_term",
                ratio,
                ">= 0.99 and growing".into(),
                ratio >= 0.99 && g2 > g1,
            );
        }
        (Err(e), _) | (_, Err(e)) => {
            report.push("label_shift_gap", f64::NAN, format!("error: {e}"), false)
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub directions: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            directions: 5,
        }
    }
}

/// Max relative error of the Karcher gradient against central differences of
/// `ν_G / 2` along `Exp_G(εH)` for random tangent directions `H`.
pub fn karcher_gradient_error(
    seed: u64,
    dim: usize,
    n_points: usize,
    directions: usize,
) -> Result<f64> {
    let mut rng = substream(seed, 1, Purpose::Fixture);
    let set: Vec<SpdMatrix> = (0..n_points)
        .map(|_| random_spd(dim, 1.0, &mut rng))
        .collect();
    let g = random_spd(dim, 0.5, &mut rng);
    let grad = karcher_gradient(&g, &set)?;
    let h = 1e-5;
    let half_var = |p: &SpdMatrix| frechet_variance(p, &set).map(|v| 0.5 * v);
    let mut max_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..directions {
        let dir = random_symmetric(dim, &mut rng);
        let analytic = airm_inner(&g, &grad, &dir)?;
        let fd = (half_var(&exp_map(&g, &dir.scale(h))?)?
            - half_var(&exp_map(&g, &dir.scale(-h))?)?)
            / (2.0 * h);
        max_err = max_err.max((fd - analytic).abs());
        scale = scale.max(analytic.abs());
    }
    Ok(max_err / scale)
}

/// A small label-shifted target, a trained head and the target mean, for
/// exercising the bias objective.
pub fn bias_fixture(seed: u64) -> Result<(DomainDataset, SpdMatrix, SoftmaxClassifier)> {
    let cfg = GenerativeConfig {
        n_source_domains: 3,
        samples_per_domain: 200,
        label_ratio: 0.3,
        seed,
        ..GenerativeConfig::default()
    };
    let problem = simulate_problem(&cfg)?;
    let frechet = FrechetConfig::default();
    let source = train_source_model(&problem.sources, &frechet, &TrainConfig::default())?;
    let target = problem.target.unlabeled();
    let mean = fit_domain_mean(&target, &frechet)?.mean;
    Ok((target, mean, source.classifier))
}

/// Max relative error of `∂L_IM/∂Φ` at `Φ = I` against central differences
/// `(L(I + hH) − L(I − hH)) / 2h` of the Euclidean objective.
pub fn im_gradient_error(seed: u64, directions: usize) -> Result<f64> {
    let (target, mean, clf) = bias_fixture(seed)?;
    let objective = BiasObjective::new(
        &target.covariances,
        &mean,
        &clf,
        ImConfig::default().temperature_for(2),
    )?;
    let dim = mean.dim();
    let identity = SpdMatrix::identity(dim);
    let (_, grad) = objective.loss_and_grad(&identity)?;
    let mut rng = substream(seed, 2, Purpose::Fixture);
    let h = 1e-6;
    let mut max_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..directions {
        let dir = random_symmetric(dim, &mut rng);
        let plus = SpdMatrix::from_sym(&SymMatrix::identity(dim) + &dir.scale(h))?;
        let minus = SpdMatrix::from_sym(&SymMatrix::identity(dim) - &dir.scale(h))?;
        let fd = (objective.loss(&plus)? - objective.loss(&minus)?) / (2.0 * h);
        let analytic = grad.dot(&dir);
        max_err = max_err.max((fd - analytic).abs());
        scale = scale.max(analytic.abs());
    }
    Ok(max_err / scale)
}

/// Max relative error of the cross-entropy gradient against coordinate-wise central differences.
pub fn softmax_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = substream(seed, 3, Purpose::Fixture);
    let dim = 3;
    let feats: Vec<TangentVector> = (0..30)
        .map(|_| upper(&random_symmetric(dim, &mut rng)))
        .collect();
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let f = feats[0].len();
    let clf = SoftmaxClassifier::from_parts(
        crate::random::standard_normal_matrix(3, f, &mut rng) * 0.3,
        nalgebra::DVector::from_iterator(
            3,
            crate::random::standard_normal_matrix(3, 1, &mut rng)
                .iter()
                .copied(),
        ),
    )?;
    let l2 = 1e-3;
    let (_, gw, gb) = softmax_loss_and_grad(&clf, &feats, &labels, l2)?;
    let eval = |c: &SoftmaxClassifier| softmax_loss_and_grad(c, &feats, &labels, l2).map(|r| r.0);
    let h = 1e-6;
    let mut max_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for a in 0..3 {
        for b in 0..f {
            let mut p = clf.clone();
            p.weights[(a, b)] += h;
            let mut m = clf.clone();
            m.weights[(a, b)] -= h;
            let fd = (eval(&p)? - eval(&m)?) / (2.0 * h);
            max_err = max_err.max((fd - gw[(a, b)]).abs());
            scale = scale.max(gw[(a, b)].abs());
        }
        let mut p = clf.clone();
        p.intercepts[a] += h;
        let mut m = clf.clone();
        m.intercepts[a] -= h;
        let fd = (eval(&p)? - eval(&m)?) / (2.0 * h);
        max_err = max_err.max((fd - gb[a]).abs());
        scale = scale.max(gb[a].abs());
    }
    Ok(max_err / scale)
}

/// Finite-difference checks of the Karcher, IM and softmax gradients.
pub fn grad_check(cfg: &GradCheckConfig) -> Report {
    let mut report = Report::default();
    report.push_result(
        "karcher_gradient_rel_err",
        karcher_gradient_error(cfg.seed, 3, 12, cfg.directions),
        "< 1e-5".into(),
        |v| v < 1e-5,
    );
    report.push_result(
        "im_gradient_at_identity_rel_err",
        im_gradient_error(cfg.seed, cfg.directions),
        "< 1e-4".into(),
        |v| v < 1e-4,
    );
    report.push_result(
        "softmax_gradient_rel_err",
        softmax_gradient_error(cfg.seed),
        "< 1e-6".into(),
        |v| v < 1e-6,
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_tail_values() {
        assert_eq!(binomial_upper_tail(10, 0), 1.0);
        assert!((binomial_upper_tail(10, 9) - 11.0 / 1024.0).abs() < 1e-12);
        assert!((binomial_upper_tail(9, 9) - 1.0 / 512.0).abs() < 1e-12);
        assert!((binomial_upper_tail(4, 2) - 11.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!(Method::parse("EA").is_err());
    }
}
