//! Shared linear softmax head, information-maximization (IM) loss, and the
//! unsupervised per-domain bias fits.
//!
//! The IM loss of probabilities `p_ik = softmax(z_i / T)_k` is
//!
//! ```text
//! L = −(1/N) Σ_i Σ_k p_ik log p_ik  +  Σ_k p̂_k log p̂_k,    p̂_k = (1/N) Σ_i p_ik
//! ```
//!
//! The first term rewards confident predictions, the second rewards a diverse
//! marginal. `L ∈ [−log K, log K]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alignment::Bias;
use crate::error::{Error, Result};
use crate::generative::DomainDataset;
use crate::spd::{upper, upper_inv, SpdMatrix, SymMatrix, TangentVector};

/// Probability floor inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Linear softmax classifier on tangent-space features.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    /// `K × feature_dim`.
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
}

impl SoftmaxClassifier {
    pub fn zeros(n_classes: usize, feature_dim: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n_classes, feature_dim),
            intercepts: DVector::zeros(n_classes),
        }
    }

    pub fn from_parts(weights: DMatrix<f64>, intercepts: DVector<f64>) -> Result<Self> {
        if weights.nrows() != intercepts.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} intercepts",
                weights.nrows(),
                intercepts.len()
            )));
        }
        if weights
            .iter()
            .chain(intercepts.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::numerical(
                "classifier has non-finite parameters",
                None,
            ));
        }
        Ok(Self {
            weights,
            intercepts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn check_features(&self, features: &[TangentVector]) -> Result<()> {
        if let Some(f) = features.iter().find(|f| f.len() != self.feature_dim()) {
            return Err(Error::Shape(format!(
                "feature of length {} for a classifier on {} features",
                f.len(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// `N × K` logits.
    pub fn logits(&self, features: &[TangentVector]) -> Result<DMatrix<f64>> {
        self.check_features(features)?;
        let x = feature_matrix(features, self.feature_dim());
        let mut z = x * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.intercepts.transpose();
        }
        Ok(z)
    }

    pub fn predict(&self, features: &[TangentVector]) -> Result<Vec<usize>> {
        let z = self.logits(features)?;
        Ok(z.row_iter().map(|r| argmax(r.iter().copied())).collect())
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in it.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

fn feature_matrix(features: &[TangentVector], dim: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(features.len(), dim);
    for (i, f) in features.iter().enumerate() {
        for (j, v) in f.coords().iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    x
}

/// Row-wise `softmax(z / T)`.
pub fn softmax_rows(logits: &DMatrix<f64>, temperature: f64) -> Result<DMatrix<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite logits", None));
    }
    let mut p = logits / temperature;
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(p)
}

pub fn predict_proba(
    clf: &SoftmaxClassifier,
    features: &[TangentVector],
    temperature: f64,
) -> Result<DMatrix<f64>> {
    softmax_rows(&clf.logits(features)?, temperature)
}

fn xlogx(p: f64) -> f64 {
    p * p.max(PROB_FLOOR).ln()
}

/// Conditional-entropy and marginal-entropy terms `(L_CEM, L_MEM)`.
pub fn im_loss_terms(probs: &DMatrix<f64>) -> (f64, f64) {
    let n = probs.nrows() as f64;
    let cem = -probs.iter().map(|&p| xlogx(p)).sum::<f64>() / n;
    let mem = probs.column_iter().map(|c| xlogx(c.sum() / n)).sum::<f64>();
    (cem, mem)
}

/// `L_CEM + L_MEM`.
pub fn im_loss(probs: &DMatrix<f64>) -> f64 {
    let (cem, mem) = im_loss_terms(probs);
    cem + mem
}

/// Gradient of [`im_loss`] of `softmax(z/T)` with respect to the logits `z`.
pub fn im_loss_grad_logits(probs: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    let n = probs.nrows();
    let k = probs.ncols();
    let log_marginal: Vec<f64> = probs
        .column_iter()
        .map(|c| (c.sum() / n as f64).max(PROB_FLOOR).ln())
        .collect();
    let mut grad = DMatrix::zeros(n, k);
    for i in 0..n {
        let g: Vec<f64> = (0..k)
            .map(|c| (log_marginal[c] - probs[(i, c)].max(PROB_FLOOR).ln()) / n as f64)
            .collect();
        let mean_g: f64 = (0..k).map(|c| probs[(i, c)] * g[c]).sum();
        for c in 0..k {
            grad[(i, c)] = probs[(i, c)] * (g[c] - mean_g) / temperature;
        }
    }
    grad
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    /// Zero initialization makes training independent of the seed; kept so the
    /// config records the full run identity.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 300,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

/// Mean cross-entropy plus `l2 ‖W‖²`, with gradients `(loss, ∂W, ∂b)`.
pub fn softmax_loss_and_grad(
    clf: &SoftmaxClassifier,
    features: &[TangentVector],
    labels: &[usize],
    l2_penalty: f64,
) -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
    let probs = predict_proba(clf, features, 1.0)?;
    let n = features.len() as f64;
    let x = feature_matrix(features, clf.feature_dim());
    let mut residual = probs.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[(i, y)].max(PROB_FLOOR).ln();
        residual[(i, y)] -= 1.0;
    }
    loss = loss / n + l2_penalty * clf.weights.norm_squared();
    let grad_w = residual.transpose() * x / n + &clf.weights * (2.0 * l2_penalty);
    let grad_b = residual.row_sum().transpose() / n;
    Ok((loss, grad_w, grad_b))
}

/// Full-batch gradient descent on cross-entropy from zero init. The learning
/// rate halves (at most 10 times per epoch) whenever a step would increase the
/// loss, so the loss sequence is non-increasing.
pub fn train_softmax(
    features: &[TangentVector],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<SoftmaxClassifier> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let feature_dim = features
        .first()
        .map(TangentVector::len)
        .ok_or_else(|| Error::Argument("no training data".into()))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&y| seen[y] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 classes, found {distinct}"
        )));
    }
    if !(cfg.learning_rate > 0.0) || cfg.epochs == 0 {
        return Err(Error::Config(
            "learning_rate must be positive and epochs at least 1".into(),
        ));
    }

    let mut clf = SoftmaxClassifier::zeros(n_classes, feature_dim);
    let mut lr = cfg.learning_rate;
    let (mut loss, mut gw, mut gb) = softmax_loss_and_grad(&clf, features, labels, cfg.l2_penalty)?;
    for epoch in 0..cfg.epochs {
        let mut accepted = false;
        for _ in 0..=10 {
            let trial = SoftmaxClassifier {
                weights: &clf.weights - &gw * lr,
                intercepts: &clf.intercepts - &gb * lr,
            };
            let (trial_loss, tw, tb) =
                softmax_loss_and_grad(&trial, features, labels, cfg.l2_penalty)?;
            if !trial_loss.is_finite() {
                return Err(Error::numerical("non-finite training loss", Some(epoch)));
            }
            if trial_loss <= loss {
                clf = trial;
                loss = trial_loss;
                gw = tw;
                gb = tb;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(clf)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImMode {
    #[default]
    SpdBias,
    GeodesicStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImConfig {
    /// Softmax temperature; `None` picks 2.0 for binary problems and 0.8 otherwise.
    pub temperature: Option<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mode: ImMode,
}

impl Default for ImConfig {
    fn default() -> Self {
        Self {
            temperature: None,
            epochs: 50,
            learning_rate: 1e-2,
            mode: ImMode::SpdBias,
        }
    }
}

impl ImConfig {
    pub fn temperature_for(&self, n_classes: usize) -> f64 {
        self.temperature
            .unwrap_or(if n_classes == 2 { 2.0 } else { 0.8 })
    }

    pub fn with_mode(&self, mode: ImMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    fn validate(&self, expected: ImMode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::Argument(format!(
                "IM config mode is {:?} but {:?} was requested",
                self.mode, expected
            )));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return Err(Error::Config(format!(
                    "temperature must be positive, got {t}"
                )));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// IM loss of SPDIM(bias) features as a function of `Φ`, for one target domain.
pub struct BiasObjective<'a> {
    /// `C̄^{-1/2} C_i C̄^{-1/2}`.
    whitened: Vec<SpdMatrix>,
    clf: &'a SoftmaxClassifier,
    temperature: f64,
}

impl<'a> BiasObjective<'a> {
    pub fn new(
        covariances: &[SpdMatrix],
        mean: &SpdMatrix,
        clf: &'a SoftmaxClassifier,
        temperature: f64,
    ) -> Result<Self> {
        let w = mean.inv_sqrt()?;
        let whitened = covariances
            .iter()
            .map(|c| c.sandwich(&w))
            .collect::<Result<_>>()?;
        let dim = mean.dim();
        if clf.feature_dim() != crate::spd::tri_len(dim) {
            return Err(Error::Shape(format!(
                "classifier expects {} features but {dim}x{dim} matrices give {}",
                clf.feature_dim(),
                crate::spd::tri_len(dim)
            )));
        }
        Ok(Self {
            whitened,
            clf,
            temperature,
        })
    }

    pub fn dim(&self) -> usize {
        self.whitened[0].dim()
    }

    fn features(&self, phi: &SpdMatrix) -> Result<(Vec<SpdMatrix>, Vec<TangentVector>)> {
        let root = phi.sqrt();
        let inner: Vec<SpdMatrix> = self
            .whitened
            .iter()
            .map(|x| x.sandwich(&root))
            .collect::<Result<_>>()?;
        let feats = inner.iter().map(|y| upper(&y.log())).collect();
        Ok((inner, feats))
    }

    pub fn loss(&self, phi: &SpdMatrix) -> Result<f64> {
        let (_, feats) = self.features(phi)?;
        Ok(im_loss(&predict_proba(self.clf, &feats, self.temperature)?))
    }

    /// Loss and symmetrized Euclidean gradient `∂L/∂Φ`.
    ///
    /// Chain: `Φ → R = Φ^{1/2} → Y_i = R X_i R → F_i = log Y_i → f_i = upper(F_i) → z_i = W f_i + b`.
    /// Both spectral derivatives use the Daleckii–Krein form and are self-adjoint.
    pub fn loss_and_grad(&self, phi: &SpdMatrix) -> Result<(f64, SymMatrix)> {
        let root = phi.sqrt();
        let (inner, feats) = self.features(phi)?;
        let probs = predict_proba(self.clf, &feats, self.temperature)?;
        let loss = im_loss(&probs);
        let dz = im_loss_grad_logits(&probs, self.temperature);
        let df = dz * &self.clf.weights;

        let dim = self.dim();
        let mut grad_root = DMatrix::zeros(dim, dim);
        for (i, (y, x)) in inner.iter().zip(&self.whitened).enumerate() {
            let g_f = upper_inv(&TangentVector::new(df.row(i).iter().copied().collect())?);
            let g_y = y.eig().spectral_derivative(f64::ln, |v| 1.0 / v, &g_f);
            let rx = root.as_matrix() * x.as_matrix();
            grad_root += g_y.as_matrix() * &rx + rx.transpose() * g_y.as_matrix();
        }
        let grad_root = SymMatrix::symmetrize(grad_root);
        let grad = phi
            .eig()
            .spectral_derivative(f64::sqrt, |v| 0.5 / v.sqrt(), &grad_root);
        Ok((loss, grad))
    }
}

/// Result of a bias fit. `loss_history[0]` is the loss at the initial point.
#[derive(Clone, Debug)]
pub struct BiasFit {
    pub bias: SpdMatrix,
    pub loss: f64,
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GeodesicFit {
    pub step: f64,
    pub loss: f64,
    pub loss_history: Vec<f64>,
}

fn check_loss(loss: f64, n_classes: usize, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite IM loss", Some(epoch)));
    }
    let floor = -(n_classes as f64).ln();
    if loss < floor - 1e-9 {
        return Err(Error::numerical(
            format!("IM loss {loss} fell below its floor {floor}"),
            Some(epoch),
        ));
    }
    Ok(())
}

/// Riemannian gradient descent on `Φ ∈ S⁺` from `Φ = I`.
///
/// Each epoch takes the full-batch Euclidean gradient `G_E`, the AIRM gradient
/// `G_R = Φ G_E Φ`, and retracts `Φ ← Exp_Φ(−lr · G_R)`. Steps that increase the
/// loss halve the learning rate (up to 10 times per epoch). The lowest-loss
/// iterate is returned.
pub fn fit_spdim_bias(
    dataset: &DomainDataset,
    mean: &SpdMatrix,
    clf: &SoftmaxClassifier,
    cfg: &ImConfig,
) -> Result<BiasFit> {
    cfg.validate(ImMode::SpdBias)?;
    if dataset.is_empty() {
        return Err(Error::DegenerateDataset(format!(
            "domain {} is empty",
            dataset.domain_id
        )));
    }
    let k = clf.n_classes();
    let objective = BiasObjective::new(&dataset.covariances, mean, clf, cfg.temperature_for(k))?;
    let mut phi = SpdMatrix::identity(mean.dim());
    let (mut loss, mut grad) = objective.loss_and_grad(&phi)?;
    check_loss(loss, k, 0)?;
    let mut history = vec![loss];
    let mut lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        if grad.as_matrix().iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite bias gradient", Some(epoch)));
        }
        let root = phi.sqrt();
        // Exp_Φ(−lr Φ G_E Φ) = Φ^{1/2} exp(−lr Φ^{1/2} G_E Φ^{1/2}) Φ^{1/2}
        let whitened_grad = grad.congruence(root.as_matrix())?;
        let mut moved = false;
        for _ in 0..=10 {
            let candidate = whitened_grad.scale(-lr).exp()?.sandwich(&root)?;
            let (c_loss, c_grad) = objective.loss_and_grad(&candidate)?;
            check_loss(c_loss, k, epoch)?;
            if c_loss <= loss {
                phi = candidate;
                loss = c_loss;
                grad = c_grad;
                moved = true;
                break;
            }
            lr *= 0.5;
        }
        history.push(loss);
        if !moved {
            break;
        }
    }
    Ok(BiasFit {
        bias: phi,
        loss,
        loss_history: history,
    })
}

/// IM loss of SPDIM(geodesic) features as a function of the step `φ`.
pub struct GeodesicObjective<'a> {
    covariances: &'a [SpdMatrix],
    mean: &'a SpdMatrix,
    clf: &'a SoftmaxClassifier,
    temperature: f64,
}

/// Central-difference half-width for the geodesic step derivative.
pub const GEODESIC_FD_STEP: f64 = 1e-4;

impl<'a> GeodesicObjective<'a> {
    pub fn new(
        covariances: &'a [SpdMatrix],
        mean: &'a SpdMatrix,
        clf: &'a SoftmaxClassifier,
        temperature: f64,
    ) -> Self {
        Self {
            covariances,
            mean,
            clf,
            temperature,
        }
    }

    pub fn loss(&self, step: f64) -> Result<f64> {
        let w = self.mean.powf(-0.5 * step)?;
        let feats: Vec<TangentVector> = self
            .covariances
            .iter()
            .map(|c| Ok(upper(&c.sandwich(&w)?.log())))
            .collect::<Result<_>>()?;
        Ok(im_loss(&predict_proba(self.clf, &feats, self.temperature)?))
    }

    pub fn derivative(&self, step: f64) -> Result<f64> {
        let h = GEODESIC_FD_STEP;
        Ok((self.loss(step + h)? - self.loss(step - h)?) / (2.0 * h))
    }
}

/// Gradient descent on the scalar geodesic step from `φ = 1`, derivative by
/// central differences, with the same halving rule as [`fit_spdim_bias`].
pub fn fit_spdim_geodesic(
    dataset: &DomainDataset,
    mean: &SpdMatrix,
    clf: &SoftmaxClassifier,
    cfg: &ImConfig,
) -> Result<GeodesicFit> {
    cfg.validate(ImMode::GeodesicStep)?;
    if dataset.is_empty() {
        return Err(Error::DegenerateDataset(format!(
            "domain {} is empty",
            dataset.domain_id
        )));
    }
    let k = clf.n_classes();
    if clf.feature_dim() != crate::spd::tri_len(mean.dim()) {
        return Err(Error::Shape(
            "classifier feature dimension does not match the domain".into(),
        ));
    }
    let objective = GeodesicObjective::new(&dataset.covariances, mean, clf, cfg.temperature_for(k));
    let mut step = 1.0;
    let mut loss = objective.loss(step)?;
    check_loss(loss, k, 0)?;
    let mut history = vec![loss];
    let mut lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        let d = objective.derivative(step)?;
        if !d.is_finite() {
            return Err(Error::numerical(
                "non-finite geodesic-step derivative",
                Some(epoch),
            ));
        }
        let mut moved = false;
        for _ in 0..=10 {
            let candidate = step - lr * d;
            let c_loss = objective.loss(candidate)?;
            check_loss(c_loss, k, epoch)?;
            if c_loss <= loss {
                step = candidate;
                loss = c_loss;
                moved = true;
                break;
            }
            lr *= 0.5;
        }
        history.push(loss);
        if !moved {
            break;
        }
    }
    Ok(GeodesicFit {
        step,
        loss,
        loss_history: history,
    })
}

/// Runs the fit selected by `cfg.mode` and wraps the result as a [`Bias`].
pub fn fit_spdim(
    dataset: &DomainDataset,
    mean: &SpdMatrix,
    clf: &SoftmaxClassifier,
    cfg: &ImConfig,
) -> Result<Bias> {
    match cfg.mode {
        ImMode::SpdBias => Ok(Bias::Spd(fit_spdim_bias(dataset, mean, clf, cfg)?.bias)),
        ImMode::GeodesicStep => Ok(Bias::GeodesicStep(
            fit_spdim_geodesic(dataset, mean, clf, cfg)?.step,
        )),
    }
}

/// Mean per-class recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Argument("balanced accuracy of an empty set".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = y_true.iter().max().map_or(0, |m| m + 1);
    let mut total = vec![0usize; k];
    let mut hit = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        total[t] += 1;
        if t == p {
            hit[t] += 1;
        }
    }
    let present: Vec<f64> = total
        .iter()
        .zip(&hit)
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &h)| h as f64 / n as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
