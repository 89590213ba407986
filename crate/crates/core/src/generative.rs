//! Sampler for the log-linear covariance model with domain-specific forward models.
//!
//! ```text
//! s_i = B (1_{y_i} − π_j) + ε_i          latent log-space features
//! E_i = exp(upper⁻¹(s_i))                source covariance
//! A_j = Q exp(P_j)                       forward model (polar form)
//! C_i = A_j E_i A_jᵀ                     sensor covariance
//! ```
//!
//! Label information lives only in the coordinates of the leading `D×D` block
//! of `log(E_i)`. Domain ids `0..n_source_domains` are sources; the target is
//! `n_source_domains`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{
    random_orthogonal, random_symmetric, standard_normal_matrix, substream, Purpose,
};
use crate::spd::{
    tri_len, upper_index_pairs, upper_inv, SpdMatrix, SymMatrix, TangentVector, EIGEN_FLOOR,
};

pub type DomainId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerationMode {
    /// `C_i = A_j E_i A_jᵀ` exactly.
    ExactCovariance,
    /// Empirical covariance of `T` columns `x = A_j z`, `z ~ N(0, E_i)`.
    SampledTimeseries { samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerativeConfig {
    /// Sensor/source dimension `P`.
    pub dim: usize,
    /// Informative block dimension `D ≤ P`.
    pub informative_dim: usize,
    pub n_classes: usize,
    pub n_source_domains: usize,
    pub samples_per_domain: usize,
    /// ℓ2 norm of each column of `B`.
    pub class_sep: f64,
    /// Standard deviation of each coordinate of `ε_i`.
    pub noise_std: f64,
    /// Spectral norm of every `P_j`.
    pub scaling_strength: f64,
    /// Minority-to-majority class ratio in the target domain.
    pub label_ratio: f64,
    pub seed: u64,
    pub mode: GenerationMode,
    /// Restrict `B` and `ε` to diagonal coordinates, so all `E_i` commute.
    pub diagonal_only: bool,
    /// Standardize latent coordinates to zero mean and unit variance over the
    /// pooled data of all domains before building covariances.
    pub standardize: bool,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            informative_dim: 2,
            n_classes: 2,
            n_source_domains: 5,
            samples_per_domain: 500,
            class_sep: 2.0,
            noise_std: 1.0,
            scaling_strength: 1.0,
            label_ratio: 1.0,
            seed: 0,
            mode: GenerationMode::ExactCovariance,
            diagonal_only: false,
            standardize: true,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.informative_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.informative_dim > self.dim {
            return fail(format!(
                "informative_dim {} exceeds dim {}",
                self.informative_dim, self.dim
            ));
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.samples_per_domain < self.n_classes {
            return fail(format!(
                "samples_per_domain {} is smaller than n_classes {}",
                self.samples_per_domain, self.n_classes
            ));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return fail(format!(
                "label_ratio must be in (0, 1], got {}",
                self.label_ratio
            ));
        }
        if !(self.class_sep >= 0.0) || !(self.noise_std >= 0.0) || !(self.scaling_strength >= 0.0) {
            return fail("class_sep, noise_std and scaling_strength must be non-negative".into());
        }
        Ok(())
    }

    pub fn n_coords(&self) -> usize {
        tri_len(self.dim)
    }

    pub fn target_domain(&self) -> DomainId {
        self.n_source_domains as DomainId
    }

    /// Coordinates (in `upper` order) that may carry label information.
    pub fn informative_coords(&self) -> Vec<usize> {
        upper_index_pairs(self.dim)
            .enumerate()
            .filter(|(_, (a, b))| *b < self.informative_dim && (!self.diagonal_only || a == b))
            .map(|(k, _)| k)
            .collect()
    }

    fn noise_coords(&self) -> Vec<usize> {
        upper_index_pairs(self.dim)
            .enumerate()
            .filter(|(_, (a, b))| !self.diagonal_only || a == b)
            .map(|(k, _)| k)
            .collect()
    }
}

/// `B` and the class priors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelStructure {
    /// `P(P+1)/2 × K`.
    pub b: DMatrix<f64>,
    default_priors: Vec<f64>,
    domain_priors: BTreeMap<DomainId, Vec<f64>>,
}

impl LabelStructure {
    pub fn new(b: DMatrix<f64>) -> Self {
        let k = b.ncols();
        Self {
            b,
            default_priors: vec![1.0 / k as f64; k],
            domain_priors: BTreeMap::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.b.ncols()
    }

    pub fn priors(&self, domain: DomainId) -> &[f64] {
        self.domain_priors
            .get(&domain)
            .unwrap_or(&self.default_priors)
    }

    pub fn set_priors(&mut self, domain: DomainId, priors: Vec<f64>) -> Result<()> {
        if priors.len() != self.n_classes() {
            return Err(Error::Shape(format!(
                "priors have length {} but there are {} classes",
                priors.len(),
                self.n_classes()
            )));
        }
        let sum: f64 = priors.iter().sum();
        if priors.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "priors must be a probability vector, got {priors:?}"
            )));
        }
        self.domain_priors.insert(domain, priors);
        Ok(())
    }

    /// `B (1_y − π_j)`.
    pub fn class_offset(&self, label: usize, domain: DomainId) -> Vec<f64> {
        let pi = self.priors(domain);
        (0..self.b.nrows())
            .map(|r| {
                (0..self.n_classes())
                    .map(|k| self.b[(r, k)] * (f64::from(u8::from(k == label)) - pi[k]))
                    .sum()
            })
            .collect()
    }

    /// Numerical rank of `B` from the eigenvalues of `BᵀB`.
    pub fn rank(&self) -> usize {
        let gram = SymMatrix::symmetrize(self.b.transpose() * &self.b);
        let eig = gram.eig().expect("small Gram matrix");
        let max = eig.values()[0];
        if max <= 0.0 {
            return 0;
        }
        eig.values().iter().filter(|&&v| v > 1e-10 * max).count()
    }
}

/// Shared rotation `Q` plus per-domain log-scalings `P_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModel {
    pub q: DMatrix<f64>,
    pub scalings: BTreeMap<DomainId, SymMatrix>,
}

impl ForwardModel {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn scaling(&self, domain: DomainId) -> Result<&SymMatrix> {
        self.scalings
            .get(&domain)
            .ok_or_else(|| Error::Argument(format!("no forward model for domain {domain}")))
    }

    /// `A_j = Q exp(P_j)`.
    pub fn mixing(&self, domain: DomainId) -> Result<DMatrix<f64>> {
        let p = self.scaling(domain)?;
        Ok(&self.q * p.exp()?.as_matrix())
    }
}

/// Labeled (or unlabeled) covariances from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: DomainId,
    pub covariances: Vec<SpdMatrix>,
    pub labels: Option<Vec<usize>>,
    /// Latent `s_i`, kept for verification.
    pub latents: Option<Vec<Vec<f64>>>,
}

impl DomainDataset {
    pub fn new(
        domain_id: DomainId,
        covariances: Vec<SpdMatrix>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(first) = covariances.first() {
            if covariances.iter().any(|c| c.dim() != first.dim()) {
                return Err(Error::Shape("covariances of mixed dimension".into()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != covariances.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} covariances",
                    l.len(),
                    covariances.len()
                )));
            }
        }
        Ok(Self {
            domain_id,
            covariances,
            labels,
            latents: None,
        })
    }

    pub fn len(&self) -> usize {
        self.covariances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariances.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.covariances.first().map(SpdMatrix::dim)
    }

    /// Copy without labels or latents, as seen by an unsupervised adapter.
    pub fn unlabeled(&self) -> Self {
        Self {
            domain_id: self.domain_id,
            covariances: self.covariances.clone(),
            labels: None,
            latents: None,
        }
    }

    pub fn class_counts(&self, n_classes: usize) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut counts = vec![0; n_classes];
        for &y in labels {
            if y < n_classes {
                counts[y] += 1;
            }
        }
        Some(counts)
    }
}

/// Draws `B` with standard-normal entries on the informative coordinates, each
/// column rescaled to norm `class_sep`. Priors default to uniform.
pub fn sample_label_structure<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    rng: &mut R,
) -> Result<LabelStructure> {
    cfg.validate()?;
    let coords = cfg.informative_coords();
    if coords.len() < cfg.n_classes {
        return Err(Error::InfeasibleRank {
            needed: cfg.n_classes,
            available: coords.len(),
        });
    }
    for _ in 0..16 {
        let mut b = DMatrix::zeros(cfg.n_coords(), cfg.n_classes);
        for k in 0..cfg.n_classes {
            for &r in &coords {
                b[(r, k)] = rng.sample(StandardNormal);
            }
        }
        let mut structure = LabelStructure::new(b);
        if structure.rank() < cfg.n_classes {
            continue;
        }
        for mut col in structure.b.column_iter_mut() {
            let n = col.norm();
            col *= cfg.class_sep / n;
        }
        return Ok(structure);
    }
    Err(Error::numerical(
        "could not draw a full-rank label structure",
        None,
    ))
}

/// Draws the shared rotation `Q` and `P_j = scaling_strength · W / ‖W‖₂` for
/// every source domain and the target.
pub fn sample_forward_models<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    rng: &mut R,
) -> Result<ForwardModel> {
    cfg.validate()?;
    let q = random_orthogonal(cfg.dim, rng);
    let mut scalings = BTreeMap::new();
    for domain in 0..=cfg.n_source_domains as DomainId {
        let w = random_symmetric(cfg.dim, rng);
        let eig = w.eig()?;
        let spectral = eig.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let p = if spectral > 0.0 {
            w.scale(cfg.scaling_strength / spectral)
        } else {
            SymMatrix::zeros(cfg.dim)
        };
        scalings.insert(domain, p);
    }
    Ok(ForwardModel { q, scalings })
}

fn draw_label<R: Rng + ?Sized>(priors: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    priors.len() - 1
}

fn draw_latent<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    structure: &LabelStructure,
    noise_coords: &[usize],
    domain: DomainId,
    label: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut s = structure.class_offset(label, domain);
    for &r in noise_coords {
        let e: f64 = rng.sample(StandardNormal);
        s[r] += cfg.noise_std * e;
    }
    s
}

/// Labels `y_i ~ π_j` and latents `s_i = B(1_{y_i} − π_j) + ε_i`.
pub fn sample_latents<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    structure: &LabelStructure,
    domain: DomainId,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let noise_coords = cfg.noise_coords();
    let priors = structure.priors(domain).to_vec();
    let mut latents = Vec::with_capacity(cfg.samples_per_domain);
    let mut labels = Vec::with_capacity(cfg.samples_per_domain);
    for _ in 0..cfg.samples_per_domain {
        let y = draw_label(&priors, rng);
        latents.push(draw_latent(cfg, structure, &noise_coords, domain, y, rng));
        labels.push(y);
    }
    (latents, labels)
}

/// Shifts and rescales every coordinate to zero mean and unit variance over
/// all domains jointly. Constant coordinates are only centered.
pub fn standardize_pooled(domains: &mut [Vec<Vec<f64>>]) {
    let Some(n_coords) = domains.iter().flatten().next().map(Vec::len) else {
        return;
    };
    let total = domains.iter().map(Vec::len).sum::<usize>() as f64;
    for r in 0..n_coords {
        let mean = domains.iter().flatten().map(|s| s[r]).sum::<f64>() / total;
        let var = domains
            .iter()
            .flatten()
            .map(|s| (s[r] - mean).powi(2))
            .sum::<f64>()
            / total;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        for s in domains.iter_mut().flatten() {
            s[r] = (s[r] - mean) * scale;
        }
    }
}

/// `E = exp(upper⁻¹(s))`.
pub fn latent_to_source_covariance(latent: &[f64]) -> Result<SpdMatrix> {
    upper_inv(&TangentVector::new(latent.to_vec())?).exp()
}

/// Builds sensor covariances for given latents in domain `domain`.
pub fn build_domain<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    models: &ForwardModel,
    domain: DomainId,
    latents: Vec<Vec<f64>>,
    labels: Vec<usize>,
    rng: &mut R,
) -> Result<DomainDataset> {
    let mixing = models.mixing(domain)?;
    let mut covariances = Vec::with_capacity(latents.len());
    for s in &latents {
        let e = latent_to_source_covariance(s)?;
        let c = match cfg.mode {
            GenerationMode::ExactCovariance => e.congruence(&mixing)?,
            GenerationMode::SampledTimeseries { samples } => {
                sampled_covariance(&e, &mixing, samples, rng)?
            }
        };
        covariances.push(c);
    }
    let mut ds = DomainDataset::new(domain, covariances, Some(labels))?;
    ds.latents = Some(latents);
    Ok(ds)
}

fn sampled_covariance<R: Rng + ?Sized>(
    e: &SpdMatrix,
    mixing: &DMatrix<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let dim = e.dim();
    if samples < dim {
        return Err(Error::RankDeficient { samples, dim });
    }
    let factor = mixing * e.sqrt().as_matrix();
    for _ in 0..100 {
        let z = standard_normal_matrix(dim, samples, rng);
        let x = &factor * z;
        let c = SymMatrix::symmetrize(&x * x.transpose() / samples as f64);
        match SpdMatrix::from_sym(c) {
            Ok(c) if c.min_eigenvalue() >= EIGEN_FLOOR => return Ok(c),
            _ => continue,
        }
    }
    Err(Error::numerical(
        "sampled covariance repeatedly fell below the eigenvalue floor",
        None,
    ))
}

/// Samples one domain: latents, labels, covariances. No standardization.
pub fn generate_domain<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    structure: &LabelStructure,
    models: &ForwardModel,
    domain: DomainId,
    rng: &mut R,
) -> Result<DomainDataset> {
    cfg.validate()?;
    let (latents, labels) = sample_latents(cfg, structure, domain, rng);
    build_domain(cfg, models, domain, latents, labels, rng)
}

/// Keeps every example of class 0 (the majority) and subsamples every other
/// class without replacement to `⌈label_ratio · n_0⌉` examples. Order is preserved.
pub fn apply_label_shift<R: Rng + ?Sized>(
    ds: &DomainDataset,
    label_ratio: f64,
    rng: &mut R,
) -> Result<DomainDataset> {
    if !(label_ratio > 0.0 && label_ratio <= 1.0) {
        return Err(Error::Argument(format!(
            "label_ratio must be in (0, 1], got {label_ratio}"
        )));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Argument("label shift needs a labeled dataset".into()))?;
    if label_ratio == 1.0 {
        return Ok(ds.clone());
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let counts = ds.class_counts(n_classes).expect("labeled");
    let n_majority = counts[0];
    let quota = (label_ratio * n_majority as f64).ceil() as usize;

    let mut keep = vec![false; ds.len()];
    for (class, &count) in counts.iter().enumerate() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == class).collect();
        let chosen: Vec<usize> = if class == 0 || count <= quota {
            members
        } else {
            sample_indices(rng, count, quota)
                .into_iter()
                .map(|k| members[k])
                .collect()
        };
        if chosen.is_empty() {
            return Err(Error::DegenerateDataset(format!(
                "class {class} has no examples after label shift"
            )));
        }
        for i in chosen {
            keep[i] = true;
        }
    }

    let pick = |i: usize| keep[i];
    let covariances = (0..ds.len())
        .filter(|&i| pick(i))
        .map(|i| ds.covariances[i].clone())
        .collect();
    let new_labels = (0..ds.len())
        .filter(|&i| pick(i))
        .map(|i| labels[i])
        .collect();
    let latents = ds.latents.as_ref().map(|l| {
        (0..ds.len())
            .filter(|&i| pick(i))
            .map(|i| l[i].clone())
            .collect()
    });
    Ok(DomainDataset {
        domain_id: ds.domain_id,
        covariances,
        labels: Some(new_labels),
        latents,
    })
}

/// `M/2` latents followed by their negations, so `Σ s_i = 0` exactly. For two
/// classes with uniform priors a negated latent belongs to the other class;
/// otherwise it keeps its label.
pub fn antisymmetric_latents<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    structure: &LabelStructure,
    domain: DomainId,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if !cfg.samples_per_domain.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "antisymmetric construction needs an even sample count, got {}",
            cfg.samples_per_domain
        )));
    }
    let half = GenerativeConfig {
        samples_per_domain: cfg.samples_per_domain / 2,
        ..cfg.clone()
    };
    let (mut latents, mut labels) = sample_latents(&half, structure, domain, rng);
    let uniform_binary = structure.n_classes() == 2
        && structure
            .priors(domain)
            .iter()
            .all(|&p| (p - 0.5).abs() < 1e-15);
    let mirrored: Vec<Vec<f64>> = latents
        .iter()
        .map(|s| s.iter().map(|x| -x).collect())
        .collect();
    let mirrored_labels: Vec<usize> = labels
        .iter()
        .map(|&y| if uniform_binary { 1 - y } else { y })
        .collect();
    latents.extend(mirrored);
    labels.extend(mirrored_labels);
    Ok((latents, labels))
}

/// Domain built from [`antisymmetric_latents`].
pub fn make_antisymmetric_domain<R: Rng + ?Sized>(
    cfg: &GenerativeConfig,
    structure: &LabelStructure,
    models: &ForwardModel,
    domain: DomainId,
    rng: &mut R,
) -> Result<DomainDataset> {
    let (latents, labels) = antisymmetric_latents(cfg, structure, domain, rng)?;
    build_domain(cfg, models, domain, latents, labels, rng)
}

/// A full source/target problem drawn from one config.
#[derive(Clone, Debug)]
pub struct SimulatedProblem {
    pub config: GenerativeConfig,
    pub structure: LabelStructure,
    pub models: ForwardModel,
    pub sources: Vec<DomainDataset>,
    /// Target domain after label shift, labels retained for scoring.
    pub target: DomainDataset,
}

/// Draws the structure, forward models and all domains from substreams keyed by
/// `(seed, domain, purpose)`, standardizes latents over the pool when
/// configured, then applies the target label shift.
pub fn simulate_problem(cfg: &GenerativeConfig) -> Result<SimulatedProblem> {
    cfg.validate()?;
    let structure =
        sample_label_structure(cfg, &mut substream(cfg.seed, 0, Purpose::LabelStructure))?;
    let models = sample_forward_models(cfg, &mut substream(cfg.seed, 0, Purpose::ForwardModel))?;

    let n_domains = cfg.n_source_domains + 1;
    let mut all_latents = Vec::with_capacity(n_domains);
    let mut all_labels = Vec::with_capacity(n_domains);
    for d in 0..n_domains as DomainId {
        let (l, y) = sample_latents(
            cfg,
            &structure,
            d,
            &mut substream(cfg.seed, d, Purpose::Latents),
        );
        all_latents.push(l);
        all_labels.push(y);
    }
    if cfg.standardize {
        standardize_pooled(&mut all_latents);
    }

    let mut domains = Vec::with_capacity(n_domains);
    for (d, (latents, labels)) in all_latents.into_iter().zip(all_labels).enumerate() {
        let d = d as DomainId;
        let mut rng = substream(cfg.seed, d, Purpose::TimeSeries);
        domains.push(build_domain(cfg, &models, d, latents, labels, &mut rng)?);
    }
    let target = domains.pop().expect("at least one domain");
    let target = apply_label_shift(
        &target,
        cfg.label_ratio,
        &mut substream(cfg.seed, cfg.target_domain(), Purpose::LabelShift),
    )?;
    Ok(SimulatedProblem {
        config: cfg.clone(),
        structure,
        models,
        sources: domains,
        target,
    })
}
