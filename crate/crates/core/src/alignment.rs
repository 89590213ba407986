//! Tangent-space alignment transforms.
//!
//! | transform          | features                                                    |
//! |--------------------|-------------------------------------------------------------|
//! | TSM / RCT+TSM      | `upper(log(C̄^{-1/2} C C̄^{-1/2}))`                            |
//! | SPDIM(bias)        | `upper(log(Φ^{1/2} C̄^{-1/2} C C̄^{-1/2} Φ^{1/2}))`             |
//! | SPDIM(geodesic)    | `upper(log(C̄^{-φ/2} C C̄^{-φ/2}))`                             |
//!
//! TSM uses one mean for all data; RCT fits one mean per domain.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, FrechetConfig};
use crate::generative::{DomainDataset, DomainId, LabelStructure};
use crate::spd::{transport_to_identity, upper, upper_inv, SpdMatrix, SymMatrix, TangentVector};

#[derive(Clone, Debug, PartialEq)]
pub enum Bias {
    None,
    Spd(SpdMatrix),
    GeodesicStep(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainAlignment {
    pub mean: SpdMatrix,
    pub bias: Bias,
    /// Fewer than `dim + 1` samples went into the mean.
    pub low_sample_warning: bool,
}

impl DomainAlignment {
    pub fn transform(&self, c: &SpdMatrix) -> Result<TangentVector> {
        match &self.bias {
            Bias::None => tsm(c, &self.mean),
            Bias::Spd(phi) => spdim_transform(c, &self.mean, phi),
            Bias::GeodesicStep(step) => spdim_geodesic_transform(c, &self.mean, *step),
        }
    }
}

/// Per-domain alignment parameters, keyed by domain id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignmentParams {
    pub domains: BTreeMap<DomainId, DomainAlignment>,
}

impl AlignmentParams {
    pub fn get(&self, domain: DomainId) -> Result<&DomainAlignment> {
        self.domains
            .get(&domain)
            .ok_or_else(|| Error::Argument(format!("no alignment parameters for domain {domain}")))
    }

    pub fn set_bias(&mut self, domain: DomainId, bias: Bias) -> Result<()> {
        let entry = self.domains.get_mut(&domain).ok_or_else(|| {
            Error::Argument(format!("no alignment parameters for domain {domain}"))
        })?;
        entry.bias = bias;
        Ok(())
    }

    /// Features of every covariance in `ds` using that domain's parameters.
    pub fn transform_dataset(&self, ds: &DomainDataset) -> Result<Vec<TangentVector>> {
        let params = self.get(ds.domain_id)?;
        ds.covariances
            .iter()
            .map(|c| params.transform(c))
            .collect::<Result<_>>()
            .map_err(|e| e.in_domain(ds.domain_id))
    }
}

/// `upper(log(mean^{-1/2} C mean^{-1/2}))`.
pub fn tsm(c: &SpdMatrix, mean: &SpdMatrix) -> Result<TangentVector> {
    Ok(upper(&c.sandwich(&mean.inv_sqrt()?)?.log()))
}

/// Batch [`tsm`] with a single inverse square root of `mean`.
pub fn tsm_all(set: &[SpdMatrix], mean: &SpdMatrix) -> Result<Vec<TangentVector>> {
    let w = mean.inv_sqrt()?;
    set.iter()
        .map(|c| Ok(upper(&c.sandwich(&w)?.log())))
        .collect()
}

/// Fits one Fréchet mean per dataset, no bias.
pub fn fit_rct(datasets: &[DomainDataset], cfg: &FrechetConfig) -> Result<AlignmentParams> {
    let mut params = AlignmentParams::default();
    for ds in datasets {
        let fitted = fit_domain_mean(ds, cfg)?;
        params.domains.insert(ds.domain_id, fitted);
    }
    Ok(params)
}

pub fn fit_domain_mean(ds: &DomainDataset, cfg: &FrechetConfig) -> Result<DomainAlignment> {
    if ds.is_empty() {
        return Err(Error::DegenerateDataset(format!(
            "domain {} is empty",
            ds.domain_id
        )));
    }
    let result = frechet_mean(&ds.covariances, cfg).map_err(|e| e.in_domain(ds.domain_id))?;
    let dim = result.mean.dim();
    Ok(DomainAlignment {
        mean: result.mean,
        bias: Bias::None,
        low_sample_warning: ds.len() < dim + 1,
    })
}

/// `upper(log(Φ^{1/2} mean^{-1/2} C mean^{-1/2} Φ^{1/2}))`.
pub fn spdim_transform(c: &SpdMatrix, mean: &SpdMatrix, bias: &SpdMatrix) -> Result<TangentVector> {
    let whitened = c.sandwich(&mean.inv_sqrt()?)?;
    Ok(upper(&whitened.sandwich(&bias.sqrt())?.log()))
}

/// `upper(log(mean^{-step/2} C mean^{-step/2}))`.
pub fn spdim_geodesic_transform(
    c: &SpdMatrix,
    mean: &SpdMatrix,
    step: f64,
) -> Result<TangentVector> {
    Ok(upper(&transport_to_identity(c, mean, step)?.log()))
}

/// Label-shift term `P̄_j = upper⁻¹(B π_j)`.
pub fn label_shift_split(structure: &LabelStructure, domain: DomainId) -> SymMatrix {
    let pi = nalgebra::DVector::from_column_slice(structure.priors(domain));
    let coords = (&structure.b * pi).as_slice().to_vec();
    upper_inv(&TangentVector::new(coords).expect("B has a triangular number of rows"))
}

/// Frobenius norm of
/// `exp(Q α log Ẽ Qᵀ − Q α P̄ Qᵀ) − Q e^{−αP̄/2} Qᵀ · Q e^{α log Ẽ} Qᵀ · Q e^{−αP̄/2} Qᵀ`,
/// the error of splitting the label-shift term out of the exponential.
pub fn splitting_residual(
    e_tilde: &SpdMatrix,
    p_bar: &SymMatrix,
    q: &DMatrix<f64>,
    alpha: f64,
) -> Result<f64> {
    let log_e = e_tilde.log();
    let lhs = (&log_e.scale(alpha) - &p_bar.scale(alpha))
        .congruence(q)?
        .exp()?;
    let half = p_bar.scale(-0.5 * alpha).exp()?.congruence(q)?;
    let middle = log_e.scale(alpha).exp()?.congruence(q)?;
    let rhs = half.as_matrix() * middle.as_matrix() * half.as_matrix();
    Ok((lhs.as_matrix() - rhs).norm())
}

/// Least-squares slope of `log(residual)` against `log(alpha)`.
pub fn loglog_slope(alphas: &[f64], residuals: &[f64]) -> f64 {
    let xs: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_orthogonal, random_spd, random_symmetric, substream, Purpose};
    use crate::spd::{airm_distance, geodesic};

    fn rng(tag: u32) -> rand_chacha::ChaCha20Rng {
        substream(42, tag, Purpose::Fixture)
    }

    #[test]
    fn tsm_basic_cases() {
        let c = SpdMatrix::from_row_slice(2, &[3.0, 1.0, 1.0, 2.0]).unwrap();
        assert!(tsm(&c, &c).unwrap().norm() < 1e-12);
        let at_identity = tsm(&c, &SpdMatrix::identity(2)).unwrap();
        let expected = upper(&c.log());
        for (a, b) in at_identity.coords().iter().zip(expected.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tsm_norm_is_distance() {
        let mut r = rng(0);
        for dim in [2, 3, 4, 6] {
            let c = random_spd(dim, 1.5, &mut r);
            let m = random_spd(dim, 1.5, &mut r);
            let f = tsm(&c, &m).unwrap();
            assert!((f.norm() - airm_distance(&c, &m).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn rct_single_and_duplicate_domains() {
        let c = SpdMatrix::from_row_slice(2, &[3.0, 1.0, 1.0, 2.0]).unwrap();
        let ds = DomainDataset::new(0, vec![c.clone()], None).unwrap();
        let p = fit_rct(&[ds.clone()], &FrechetConfig::default()).unwrap();
        assert!(p.get(0).unwrap().low_sample_warning);
        assert!(p.transform_dataset(&ds).unwrap()[0].norm() < 1e-9);

        let mut r = rng(1);
        let set: Vec<_> = (0..8).map(|_| random_spd(3, 1.0, &mut r)).collect();
        let a = DomainDataset::new(1, set.clone(), None).unwrap();
        let b = DomainDataset::new(2, set, None).unwrap();
        let p = fit_rct(&[a, b], &FrechetConfig::default()).unwrap();
        assert_eq!(p.get(1).unwrap().mean, p.get(2).unwrap().mean);
        assert!(!p.get(1).unwrap().low_sample_warning);
    }

    #[test]
    fn rct_rejects_empty_domain() {
        let ds = DomainDataset::new(3, vec![], None).unwrap();
        assert!(matches!(
            fit_rct(&[ds], &FrechetConfig::default()),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn spdim_reductions() {
        let mut r = rng(2);
        let c = random_spd(3, 1.0, &mut r);
        let m = random_spd(3, 1.0, &mut r);
        let phi = random_spd(3, 0.5, &mut r);
        let plain = tsm(&c, &m).unwrap();
        let with_identity = spdim_transform(&c, &m, &SpdMatrix::identity(3)).unwrap();
        for (a, b) in plain.coords().iter().zip(with_identity.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        let at_mean = spdim_transform(&m, &m, &phi).unwrap();
        for (a, b) in at_mean.coords().iter().zip(upper(&phi.log()).coords()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spdim_diagonal_hand_computed() {
        let m = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let c = SpdMatrix::from_diagonal(&[8.0, 1.0]).unwrap();
        let phi = SpdMatrix::from_diagonal(&[0.5, 1.0]).unwrap();
        assert!(spdim_transform(&c, &m, &phi).unwrap().norm() < 1e-14);
    }

    #[test]
    fn geodesic_transform_endpoints() {
        let m = SpdMatrix::from_diagonal(&[4.0, 2.0]).unwrap();
        let c = SpdMatrix::from_diagonal(&[3.0, 0.5]).unwrap();
        let one = spdim_geodesic_transform(&c, &m, 1.0).unwrap();
        let plain = tsm(&c, &m).unwrap();
        for (a, b) in one.coords().iter().zip(plain.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = spdim_geodesic_transform(&c, &m, 0.0).unwrap();
        for (a, b) in zero.coords().iter().zip(upper(&c.log()).coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn geodesic_transform_matches_induced_bias_when_commuting() {
        let m = SpdMatrix::from_diagonal(&[4.0, 0.7, 2.5]).unwrap();
        let c = SpdMatrix::from_diagonal(&[3.0, 0.5, 1.2]).unwrap();
        let i = SpdMatrix::identity(3);
        for step in [-0.5, 0.3, 1.0, 1.7] {
            let induced = geodesic(&m, &i, step).unwrap().point;
            let a = spdim_geodesic_transform(&c, &m, step).unwrap();
            let b = spdim_transform(&c, &m, &induced).unwrap();
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transport_to_identity_stays_on_geodesic() {
        let mut r = rng(3);
        let i = SpdMatrix::identity(3);
        for step in [-1.0, -0.2, 0.0, 0.4, 1.0, 2.5] {
            let m = random_spd(3, 1.2, &mut r);
            let moved = transport_to_identity(&m, &m, step).unwrap();
            let on = geodesic(&m, &i, step).unwrap().point;
            assert!(airm_distance(&moved, &on).unwrap() < 1e-9);
        }
    }

    #[test]
    fn label_shift_split_cases() {
        let zero = LabelStructure::new(DMatrix::zeros(3, 2));
        assert_eq!(label_shift_split(&zero, 0), SymMatrix::zeros(2));

        let b = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 0.2, 0.0, 0.3]);
        let mut s = LabelStructure::new(b);
        s.set_priors(1, vec![0.5, 0.5]).unwrap();
        assert_eq!(label_shift_split(&s, 0), label_shift_split(&s, 1));

        s.set_priors(2, vec![0.8, 0.2]).unwrap();
        let p_bar = label_shift_split(&s, 2);
        let eps = [0.1, -0.3, 0.2];
        for y in 0..2 {
            let offset = s.class_offset(y, 2);
            let log_e: Vec<f64> = offset.iter().zip(&eps).map(|(a, b)| a + b).collect();
            let raw: Vec<f64> = (0..3).map(|r| s.b[(r, y)] + eps[r]).collect();
            let log_tilde = upper_inv(&TangentVector::new(raw).unwrap());
            let lhs = upper_inv(&TangentVector::new(log_e).unwrap());
            assert!((&lhs - &(&log_tilde - &p_bar)).frobenius_norm() < 1e-15);
        }
    }

    #[test]
    fn splitting_residual_zero_cases() {
        let mut r = rng(4);
        let q = random_orthogonal(3, &mut r);
        let e = random_spd(3, 1.0, &mut r);
        let p = random_symmetric(3, &mut r);
        let r0 = splitting_residual(&e, &p, &q, 0.0).unwrap();
        assert!(r0 < 1e-13, "{r0}");
        let e_diag = SpdMatrix::from_diagonal(&[2.0, 0.5, 1.3]).unwrap();
        let p_diag = SymMatrix::from_diagonal(&[0.3, -0.7, 0.1]);
        for alpha in [0.05, 0.5, 2.0] {
            assert!(splitting_residual(&e_diag, &p_diag, &q, alpha).unwrap() < 1e-12);
        }
    }

    #[test]
    fn splitting_residual_decays_cubically() {
        let mut r = rng(5);
        let q = random_orthogonal(3, &mut r);
        let e = random_spd(3, 1.0, &mut r);
        let p = random_symmetric(3, &mut r);
        let p = p.scale(1.0 / p.frobenius_norm());
        let alphas = [0.4, 0.2, 0.1, 0.05];
        let res: Vec<f64> = alphas
            .iter()
            .map(|&a| splitting_residual(&e, &p, &q, a).unwrap())
            .collect();
        let slope = loglog_slope(&alphas, &res);
        assert!((2.7..=3.3).contains(&slope), "slope {slope}");
    }
}
