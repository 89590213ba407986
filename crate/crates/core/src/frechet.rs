//! Fréchet (Karcher) mean and variance under the AIRM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{airm_distance, log_map, SpdMatrix, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrechetConfig {
    /// Stop once `‖(1/M) Σ log(G^{-1/2} C_i G^{-1/2})‖_F ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Karcher-flow step in `(0, 1]`; halved whenever the variance increases.
    pub step: f64,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            step: 1.0,
        }
    }
}

impl FrechetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "frechet tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!(
                "frechet step must be in (0, 1], got {}",
                self.step
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("frechet max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FrechetResult {
    pub mean: SpdMatrix,
    pub variance: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

fn check_set(set: &[SpdMatrix]) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::Argument("empty set of SPD matrices".into()))?;
    let dim = first.dim();
    if let Some(bad) = set.iter().find(|c| c.dim() != dim) {
        return Err(Error::Shape(format!(
            "set mixes dimensions {dim} and {}",
            bad.dim()
        )));
    }
    Ok(dim)
}

/// `−(1/M) Σ Log_G(C_i)`.
///
/// This is the Riemannian gradient of the half-variance `ν_G / 2`; the gradient
/// of `ν_G` itself is twice this. Vanishes exactly at the Fréchet mean.
pub fn karcher_gradient(g: &SpdMatrix, set: &[SpdMatrix]) -> Result<SymMatrix> {
    let dim = check_set(set)?;
    if g.dim() != dim {
        return Err(Error::Shape(format!(
            "base has dim {} but set has dim {dim}",
            g.dim()
        )));
    }
    let mut acc = SymMatrix::zeros(dim);
    for c in set {
        acc = &acc + &log_map(g, c)?;
    }
    Ok(acc.scale(-1.0 / set.len() as f64))
}

/// `(1/M) Σ δ²(G, C_i)`.
pub fn frechet_variance(g: &SpdMatrix, set: &[SpdMatrix]) -> Result<f64> {
    check_set(set)?;
    let mut acc = 0.0;
    for c in set {
        acc += airm_distance(g, c)?.powi(2);
    }
    Ok(acc / set.len() as f64)
}

/// Logs of the whitened set at `g`, their mean, and the variance at `g`.
fn whitened_logs(g: &SpdMatrix, set: &[SpdMatrix]) -> Result<(SymMatrix, f64)> {
    let inv_half = g.inv_sqrt()?;
    let mut mean = SymMatrix::zeros(g.dim());
    let mut variance = 0.0;
    for c in set {
        let l = c.sandwich(&inv_half)?.log();
        variance += l.dot(&l);
        mean = &mean + &l;
    }
    let m = set.len() as f64;
    Ok((mean.scale(1.0 / m), variance / m))
}

/// Karcher flow `G ← G^{1/2} exp(step · (1/M) Σ log(G^{-1/2} C_i G^{-1/2})) G^{1/2}`,
/// started from the arithmetic mean. The step is halved whenever the variance
/// would increase.
pub fn frechet_mean(set: &[SpdMatrix], cfg: &FrechetConfig) -> Result<FrechetResult> {
    cfg.validate()?;
    let dim = check_set(set)?;

    let mut sum = nalgebra::DMatrix::zeros(dim, dim);
    for c in set {
        sum += c.as_matrix();
    }
    let mut g = SpdMatrix::from_product(sum / set.len() as f64)?;
    let (mut direction, mut variance) = whitened_logs(&g, set)?;
    let mut step = cfg.step;

    for iteration in 0..=cfg.max_iter {
        let grad_norm = direction.frobenius_norm();
        if grad_norm <= cfg.tol {
            return Ok(FrechetResult {
                mean: g,
                variance,
                iterations: iteration,
                final_grad_norm: grad_norm,
            });
        }
        if iteration == cfg.max_iter {
            return Err(Error::NotConverged {
                iterations: iteration,
                grad_norm,
                last_iterate: Box::new(g),
            });
        }

        let mut halvings = 0;
        loop {
            let candidate = direction.scale(step).exp()?.sandwich(&g.sqrt())?;
            let (next_direction, next_variance) = whitened_logs(&candidate, set)?;
            // A small relative slack: near convergence roundoff makes the variance flat.
            if next_variance <= variance * (1.0 + 1e-12) || halvings >= 30 {
                g = candidate;
                direction = next_direction;
                variance = next_variance;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
    }
    unreachable!("loop returns on convergence or at max_iter")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_spd, substream, Purpose};
    use crate::spd::geodesic;

    #[test]
    fn gradient_vanishes_on_trivial_sets() {
        let c = SpdMatrix::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert!(karcher_gradient(&c, &[c.clone()]).unwrap().frobenius_norm() < 1e-12);
        let set = [
            SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[0.25, 1.0]).unwrap(),
        ];
        let g = karcher_gradient(&SpdMatrix::identity(2), &set).unwrap();
        assert!(g.frobenius_norm() < 1e-12);
        assert!(matches!(karcher_gradient(&c, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn mean_of_repeated_points() {
        let c = SpdMatrix::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let cfg = FrechetConfig::default();
        let r = frechet_mean(&[c.clone()], &cfg).unwrap();
        assert!((r.mean.as_matrix() - c.as_matrix()).norm() < 1e-12);
        let r = frechet_mean(&[c.clone(), c.clone()], &cfg).unwrap();
        assert!((r.mean.as_matrix() - c.as_matrix()).norm() < 1e-12);
        assert!(r.variance < 1e-20);
    }

    #[test]
    fn commuting_geometric_mean() {
        let set = [
            SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap(),
        ];
        let r = frechet_mean(&set, &FrechetConfig::default()).unwrap();
        let expected = nalgebra::DMatrix::from_diagonal_element(2, 2, 2.0);
        assert!((r.mean.as_matrix() - expected).norm() < 1e-9);
    }

    #[test]
    fn two_point_mean_is_geodesic_midpoint() {
        let mut rng = substream(11, 0, Purpose::Fixture);
        for dim in [2, 3, 5] {
            let a = random_spd(dim, 1.5, &mut rng);
            let b = random_spd(dim, 1.5, &mut rng);
            let r = frechet_mean(&[a.clone(), b.clone()], &FrechetConfig::default()).unwrap();
            let mid = geodesic(&a, &b, 0.5).unwrap().point;
            assert!((r.mean.as_matrix() - mid.as_matrix()).norm() < 1e-7);
        }
    }

    #[test]
    fn variance_simple_cases() {
        let c = SpdMatrix::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert!(frechet_variance(&c, &[c.clone()]).unwrap() < 1e-20);
        let e = std::f64::consts::E;
        let set = [
            SpdMatrix::from_diagonal(&[e, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[1.0 / e, 1.0]).unwrap(),
        ];
        let v = frechet_variance(&SpdMatrix::identity(2), &set).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_iter_exceeded_reports_last_iterate() {
        let mut rng = substream(5, 0, Purpose::Fixture);
        let set: Vec<_> = (0..10).map(|_| random_spd(3, 2.0, &mut rng)).collect();
        let cfg = FrechetConfig {
            tol: 1e-15,
            max_iter: 1,
            step: 1.0,
        };
        match frechet_mean(&set, &cfg) {
            Err(Error::NotConverged {
                iterations,
                grad_norm,
                last_iterate,
            }) => {
                assert_eq!(iterations, 1);
                assert!(grad_norm > 0.0);
                assert_eq!(last_iterate.dim(), 3);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let c = SpdMatrix::identity(2);
        for cfg in [
            FrechetConfig {
                tol: 0.0,
                ..Default::default()
            },
            FrechetConfig {
                step: 1.5,
                ..Default::default()
            },
            FrechetConfig {
                max_iter: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                frechet_mean(&[c.clone()], &cfg),
                Err(Error::Config(_))
            ));
        }
    }
}
