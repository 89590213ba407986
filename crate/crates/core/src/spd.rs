//! Dense kernel for the manifold of symmetric positive definite matrices under
//! the affine-invariant Riemannian metric (AIRM).
//!
//! Every matrix function here goes through a cyclic Jacobi eigendecomposition:
//! `f(S) = U diag(f(λ)) Uᵀ`. [`SpdMatrix`] caches its decomposition at
//! construction so that square roots, inverse square roots and logarithms of
//! the same point never re-run the solver.
//!
//! ```text
//! δ(C1, C2)      = ‖log(C1^{-1/2} C2 C1^{-1/2})‖_F
//! C1 #_t C2      = C1^{1/2} (C1^{-1/2} C2 C1^{-1/2})^t C1^{1/2}
//! Log_B(C)       = B^{1/2} log(B^{-1/2} C B^{-1/2}) B^{1/2}
//! Exp_B(S)       = B^{1/2} exp(B^{-1/2} S B^{-1/2}) B^{1/2}
//! Γ_{B→G}(S)     = Pᵀ S P,  P = (B⁻¹ G)^{1/2}
//! ```

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest eigenvalue accepted by [`SpdMatrix`]. Inputs below are rejected, never clamped.
pub const EIGEN_FLOOR: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SIGN_TOL: f64 = 1e-12;
const CONFLUENT_TOL: f64 = 1e-12;

/// A dense real symmetric matrix. Stored exactly symmetric.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{}", self.m)
    }
}

impl SymMatrix {
    /// Checks squareness and symmetry (within `1e-12` relative to the largest
    /// entry) and stores `(M + Mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Shape(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for a in 0..n {
            for b in (a + 1)..n {
                if (m[(a, b)] - m[(b, a)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({a}, {b}): {} vs {}",
                        m[(a, b)],
                        m[(b, a)]
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without checking. For products that are symmetric up to roundoff.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self { m: (m + t) * 0.5 }
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.m[(a, b)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    /// Frobenius inner product `Tr(A B)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.m.dot(&other.m)
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn eig(&self) -> Result<EigenDecomposition> {
        sym_eig(self)
    }

    /// Matrix exponential. Fails if an eigenvalue of the result falls below [`EIGEN_FLOOR`].
    pub fn exp(&self) -> Result<SpdMatrix> {
        let eig = self.eig()?;
        let values: Vec<f64> = eig.values.iter().map(|v| v.exp()).collect();
        SpdMatrix::from_spectrum(eig.vectors, values)
    }

    /// Congruence `A S Aᵀ`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<SymMatrix> {
        if a.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "cannot conjugate a {0}x{0} matrix by a {1}x{2} matrix",
                self.dim(),
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self::symmetrize(a * &self.m * a.transpose()))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self { m: &self.m * s }
    }

    fn check_same_dim(&self, other: &SymMatrix) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "symmetric matrix dimension mismatch"
        );
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.check_same_dim(rhs);
        SymMatrix {
            m: &self.m + &rhs.m,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.check_same_dim(rhs);
        SymMatrix {
            m: &self.m - &rhs.m,
        }
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix { m: -&self.m }
    }
}

/// `S = V diag(values) Vᵀ` with values sorted descending and each eigenvector's
/// first non-negligible entry positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl EigenDecomposition {
    fn canonical(mut vectors: DMatrix<f64>, values: Vec<f64>) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
        let sorted_values = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
        let mut sorted = DMatrix::zeros(vectors.nrows(), n);
        for (dst, &src) in order.iter().enumerate() {
            sorted.set_column(dst, &vectors.column(src));
        }
        vectors = sorted;
        for mut col in vectors.column_iter_mut() {
            if let Some(first) = col.iter().copied().find(|x| x.abs() > SIGN_TOL) {
                if first < 0.0 {
                    col.neg_mut();
                }
            }
        }
        Self {
            vectors,
            values: sorted_values,
        }
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        let m = scaled * self.vectors.transpose();
        SymMatrix::symmetrize(m).m
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_spectrum(|x| x)
    }

    /// Fréchet derivative of the spectral function `f` at the decomposed matrix,
    /// applied to a symmetric direction `H` (Daleckii–Krein):
    /// `Df[H] = V (K ∘ (Vᵀ H V)) Vᵀ` with `K_ab = (f(λ_a) − f(λ_b)) / (λ_a − λ_b)`
    /// and `K_aa = f'(λ_a)`. The map is self-adjoint under the Frobenius inner
    /// product, so the same call also backpropagates gradients.
    pub fn spectral_derivative(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        h: &SymMatrix,
    ) -> SymMatrix {
        let n = self.dim();
        let v = &self.vectors;
        let mut inner = v.transpose() * h.as_matrix() * v;
        let fv: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        for a in 0..n {
            for b in 0..n {
                let (la, lb) = (self.values[a], self.values[b]);
                let gap = la - lb;
                let k = if gap.abs() <= CONFLUENT_TOL * la.abs().max(lb.abs()) {
                    df(0.5 * (la + lb))
                } else {
                    (fv[a] - fv[b]) / gap
                };
                inner[(a, b)] *= k;
            }
        }
        SymMatrix::symmetrize(v * inner * v.transpose())
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps rows in order `(p, q), p < q`, until the off-diagonal Frobenius norm
/// drops below `1e-12 · ‖S‖_F`, for at most 100 sweeps.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomposition> {
    let n = s.dim();
    let mut a = s.m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let threshold = JACOBI_TOL * a.norm();

    let off_norm = |a: &DMatrix<f64>| {
        let mut acc = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                acc += 2.0 * a[(p, q)] * a[(p, q)];
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::EigenNonConvergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t);
            }
        }
    }

    let values: Vec<f64> = (0..n).map(|k| a[(k, k)]).collect();
    Ok(EigenDecomposition::canonical(v, values))
}

/// Applies `A ← Jᵀ A J`, `V ← V J` for the rotation in the `(p, q)` plane.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.nrows();
    let apq = a[(p, q)];
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// A point on the SPD manifold. All eigenvalues exceed [`EIGEN_FLOOR`].
#[derive(Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    eig: EigenDecomposition,
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdMatrix{}", self.m)
    }
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::new(m)?)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_row_slice(dim, data)?)
    }

    pub fn from_sym(s: SymMatrix) -> Result<Self> {
        let eig = sym_eig(&s)?;
        check_floor(&eig)?;
        Ok(Self { m: s.m, eig })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_diagonal(diag))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_sym(SymMatrix::identity(dim)).expect("identity is SPD")
    }

    /// Builds `V diag(values) Vᵀ` from an orthogonal `V`, reusing the known spectrum.
    pub(crate) fn from_spectrum(vectors: DMatrix<f64>, values: Vec<f64>) -> Result<Self> {
        let eig = EigenDecomposition::canonical(vectors, values);
        check_floor(&eig)?;
        let m = eig.reconstruct();
        Ok(Self { m, eig })
    }

    /// Symmetrizes a computed product and checks it is SPD.
    pub(crate) fn from_product(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::symmetrize(m))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn eig(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix { m: self.m.clone() }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig.values[self.dim() - 1]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Result<SpdMatrix> {
        let values = self.eig.values.iter().map(|&x| f(x)).collect();
        SpdMatrix::from_spectrum(self.eig.vectors.clone(), values)
    }

    pub fn log(&self) -> SymMatrix {
        SymMatrix {
            m: self.eig.map_spectrum(f64::ln),
        }
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.map(f64::sqrt).expect("square root of SPD is SPD")
    }

    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        self.map(|x| 1.0 / x.sqrt())
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        self.map(|x| 1.0 / x)
    }

    /// `C^t` for any real `t`.
    pub fn powf(&self, t: f64) -> Result<SpdMatrix> {
        self.map(|x| x.powf(t))
    }

    /// Congruence `A C Aᵀ`; `A` must be square and invertible.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<SpdMatrix> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "cannot conjugate a {0}x{0} SPD matrix by a {1}x{2} matrix",
                self.dim(),
                a.nrows(),
                a.ncols()
            )));
        }
        SpdMatrix::from_product(a * &self.m * a.transpose())
    }

    /// `W C W` for a symmetric `W`, typically `B^{-1/2}` of some base `B`.
    pub fn sandwich(&self, w: &SpdMatrix) -> Result<SpdMatrix> {
        check_dims(self.dim(), w.dim())?;
        SpdMatrix::from_product(&w.m * &self.m * &w.m)
    }
}

fn check_floor(eig: &EigenDecomposition) -> Result<()> {
    let min = eig.values[eig.dim() - 1];
    if !(min > EIGEN_FLOOR) {
        return Err(Error::Domain(format!(
            "smallest eigenvalue {min:e} is not above the floor {EIGEN_FLOOR:e}"
        )));
    }
    Ok(())
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// AIRM distance `‖log(C1^{-1/2} C2 C1^{-1/2})‖_F`.
pub fn airm_distance(c1: &SpdMatrix, c2: &SpdMatrix) -> Result<f64> {
    check_dims(c1.dim(), c2.dim())?;
    let w = c2.sandwich(&c1.inv_sqrt()?)?;
    Ok(w.eig
        .values
        .iter()
        .map(|x| x.ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

/// AIRM inner product `Tr(C⁻¹ S1 C⁻¹ S2)` on the tangent space at `base`.
pub fn airm_inner(base: &SpdMatrix, s1: &SymMatrix, s2: &SymMatrix) -> Result<f64> {
    check_dims(base.dim(), s1.dim())?;
    check_dims(base.dim(), s2.dim())?;
    let inv = base.inverse()?;
    Ok((&inv.m * &s1.m * &inv.m * &s2.m).trace())
}

/// A point on the geodesic through two SPD matrices.
#[derive(Clone, Debug)]
pub struct GeodesicPoint {
    pub point: SpdMatrix,
    /// `t` was outside `[0, 1]`.
    pub extrapolated: bool,
}

/// `C1 #_t C2 = C1^{1/2} (C1^{-1/2} C2 C1^{-1/2})^t C1^{1/2}`.
pub fn geodesic(c1: &SpdMatrix, c2: &SpdMatrix, t: f64) -> Result<GeodesicPoint> {
    check_dims(c1.dim(), c2.dim())?;
    if !t.is_finite() {
        return Err(Error::Argument(format!(
            "geodesic parameter must be finite, got {t}"
        )));
    }
    let w = c2.sandwich(&c1.inv_sqrt()?)?.powf(t)?;
    let point = w.sandwich(&c1.sqrt())?;
    Ok(GeodesicPoint {
        point,
        extrapolated: !(0.0..=1.0).contains(&t),
    })
}

/// Riemannian logarithm at `base`.
pub fn log_map(base: &SpdMatrix, c: &SpdMatrix) -> Result<SymMatrix> {
    check_dims(base.dim(), c.dim())?;
    let w = c.sandwich(&base.inv_sqrt()?)?.log();
    let half = base.sqrt();
    Ok(SymMatrix::symmetrize(&half.m * w.m * &half.m))
}

/// Riemannian exponential at `base`.
pub fn exp_map(base: &SpdMatrix, s: &SymMatrix) -> Result<SpdMatrix> {
    check_dims(base.dim(), s.dim())?;
    let inv_half = base.inv_sqrt()?;
    let inner = SymMatrix::symmetrize(&inv_half.m * &s.m * &inv_half.m).exp()?;
    inner.sandwich(&base.sqrt())
}

/// `(from⁻¹ · to)^{1/2}`, computed through the similar SPD matrix
/// `from^{-1/2} to from^{-1/2}`.
fn transport_factor(from: &SpdMatrix, to: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_dims(from.dim(), to.dim())?;
    let inv_half = from.inv_sqrt()?;
    let mid = to.sandwich(&inv_half)?.sqrt();
    Ok(&inv_half.m * &mid.m * from.sqrt().m)
}

/// Parallel transport `Γ_{from→to}(S) = Pᵀ S P` with `P = (from⁻¹ to)^{1/2}`.
pub fn parallel_transport(s: &SymMatrix, from: &SpdMatrix, to: &SpdMatrix) -> Result<SymMatrix> {
    check_dims(from.dim(), s.dim())?;
    let p = transport_factor(from, to)?;
    Ok(SymMatrix::symmetrize(p.transpose() * &s.m * p))
}

/// [`parallel_transport`] applied to an SPD matrix, `Pᵀ C P`.
pub fn parallel_transport_spd(
    c: &SpdMatrix,
    from: &SpdMatrix,
    to: &SpdMatrix,
) -> Result<SpdMatrix> {
    check_dims(from.dim(), c.dim())?;
    let p = transport_factor(from, to)?;
    c.congruence(&p.transpose())
}

/// `mean^{-t/2} C mean^{-t/2}`: transport along the geodesic from `mean` towards the identity.
pub fn transport_to_identity(c: &SpdMatrix, mean: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    check_dims(c.dim(), mean.dim())?;
    c.sandwich(&mean.powf(-0.5 * t)?)
}

/// Half-vectorization of a `D×D` symmetric matrix: `D(D+1)/2` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    dim: usize,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let dim = triangular_root(coords.len()).ok_or_else(|| {
            Error::Shape(format!(
                "length {} is not a triangular number",
                coords.len()
            ))
        })?;
        Ok(Self { dim, coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coords: vec![0.0; tri_len(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Number of half-vectorized coordinates of a `dim × dim` symmetric matrix.
pub fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// `D` such that `D(D+1)/2 == len`, if any.
pub fn triangular_root(len: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (tri_len(d) == len).then_some(d)
}

/// Row-major `(row, col)` pairs of the upper triangle, diagonal included.
/// This is the coordinate order of [`upper`].
pub fn upper_index_pairs(dim: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..dim).flat_map(move |a| (a..dim).map(move |b| (a, b)))
}

/// Norm-preserving half-vectorization: diagonal copied, strict upper triangle
/// scaled by `√2`, row-major.
pub fn upper(s: &SymMatrix) -> TangentVector {
    let dim = s.dim();
    let coords = upper_index_pairs(dim)
        .map(|(a, b)| {
            if a == b {
                s.m[(a, b)]
            } else {
                s.m[(a, b)] * std::f64::consts::SQRT_2
            }
        })
        .collect();
    TangentVector { dim, coords }
}

/// Inverse of [`upper`].
pub fn upper_inv(v: &TangentVector) -> SymMatrix {
    let dim = v.dim;
    let mut m = DMatrix::zeros(dim, dim);
    for ((a, b), &x) in upper_index_pairs(dim).zip(&v.coords) {
        if a == b {
            m[(a, b)] = x;
        } else {
            let y = x / std::f64::consts::SQRT_2;
            m[(a, b)] = y;
            m[(b, a)] = y;
        }
    }
    SymMatrix { m }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(e.vectors(), &DMatrix::identity(3, 3));

        let e = sym_eig(&SymMatrix::from_diagonal(&[4.0, 1.0])).unwrap();
        assert_eq!(e.values().as_slice(), &[4.0, 1.0]);
        assert_eq!(e.vectors(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn eig_two_by_two_hand_computed() {
        let s = SymMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = sym_eig(&s).unwrap();
        assert!((e.values()[0] - 3.0).abs() < 1e-14);
        assert!((e.values()[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(2, 2, &[r, r, r, -r]);
        assert!(close(e.vectors(), &expected, 1e-14));
    }

    #[test]
    fn eig_sorts_descending_with_sign_convention() {
        let e = sym_eig(&SymMatrix::from_diagonal(&[1.0, 5.0, 3.0])).unwrap();
        assert_eq!(e.values().as_slice(), &[5.0, 3.0, 1.0]);
        for col in e.vectors().column_iter() {
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn eig_reconstructs_dense_input() {
        let s = SymMatrix::from_row_slice(
            4,
            &[
                4.0, 1.0, -2.0, 0.5, 1.0, 3.0, 0.0, 1.5, -2.0, 0.0, 5.0, -1.0, 0.5, 1.5, -1.0, 2.0,
            ],
        )
        .unwrap();
        let e = sym_eig(&s).unwrap();
        let v = e.vectors();
        assert!(close(&(v * v.transpose()), &DMatrix::identity(4, 4), 1e-10));
        let rel = (e.reconstruct() - s.as_matrix()).norm() / s.frobenius_norm();
        assert!(rel < 1e-9);
    }

    #[test]
    fn eig_of_zero_matrix() {
        let e = sym_eig(&SymMatrix::zeros(3)).unwrap();
        assert!(e.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_asymmetric_and_non_spd_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(asym), Err(Error::Domain(_))));
        assert!(matches!(
            SpdMatrix::from_diagonal(&[1.0, 1e-11]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            SpdMatrix::from_diagonal(&[1.0, -1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            SymMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matrix_functions_on_simple_inputs() {
        assert_eq!(SpdMatrix::identity(3).log(), SymMatrix::zeros(3));
        let s = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap().sqrt();
        assert!(close(
            s.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]),
            1e-15
        ));

        let c = SpdMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let root = c.powf(0.5).unwrap();
        assert!(close(
            &(root.as_matrix() * root.as_matrix()),
            c.as_matrix(),
            1e-10
        ));
        let round = c.log().exp().unwrap();
        assert!((round.as_matrix() - c.as_matrix()).norm() / c.as_matrix().norm() < 1e-9);
    }

    #[test]
    fn distance_simple_cases() {
        let i = SpdMatrix::identity(2);
        assert_eq!(airm_distance(&i, &i).unwrap(), 0.0);
        let d = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        assert!((airm_distance(&d, &i).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            airm_distance(&d, &SpdMatrix::identity(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn geodesic_endpoints_and_midpoint() {
        let d = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let i = SpdMatrix::identity(2);
        let g0 = geodesic(&d, &i, 0.0).unwrap();
        assert!(close(g0.point.as_matrix(), d.as_matrix(), 1e-12));
        assert!(!g0.extrapolated);
        let mid = geodesic(&d, &i, 0.5).unwrap().point;
        assert!(close(
            mid.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            1e-12
        ));
        assert!(geodesic(&d, &i, 1.5).unwrap().extrapolated);
    }

    #[test]
    fn log_exp_at_identity_and_self() {
        let c = SpdMatrix::from_row_slice(2, &[3.0, 1.0, 1.0, 2.0]).unwrap();
        let i = SpdMatrix::identity(2);
        assert!(close(
            log_map(&i, &c).unwrap().as_matrix(),
            c.log().as_matrix(),
            1e-12
        ));
        assert!(log_map(&c, &c).unwrap().frobenius_norm() < 1e-12);
        let s = SymMatrix::from_row_slice(2, &[0.3, -0.2, -0.2, 0.1]).unwrap();
        assert!(close(
            exp_map(&i, &s).unwrap().as_matrix(),
            s.exp().unwrap().as_matrix(),
            1e-12
        ));
        assert!(close(
            exp_map(&c, &SymMatrix::zeros(2)).unwrap().as_matrix(),
            c.as_matrix(),
            1e-12
        ));
    }

    #[test]
    fn transport_hand_computed() {
        let from = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let to = SpdMatrix::identity(2);
        let s = SymMatrix::from_row_slice(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = parallel_transport(&s, &from, &to).unwrap();
        assert!(close(
            out.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
            1e-14
        ));
        let same = parallel_transport(&s, &from, &from).unwrap();
        assert!(close(same.as_matrix(), s.as_matrix(), 1e-12));
    }

    #[test]
    fn transport_to_identity_limits() {
        let c = SpdMatrix::from_row_slice(2, &[3.0, 1.0, 1.0, 2.0]).unwrap();
        let m = SpdMatrix::from_row_slice(2, &[2.0, -0.5, -0.5, 1.0]).unwrap();
        assert!(close(
            transport_to_identity(&c, &m, 0.0).unwrap().as_matrix(),
            c.as_matrix(),
            1e-12
        ));
        let id = transport_to_identity(&m, &m, 1.0).unwrap();
        assert!(close(id.as_matrix(), &DMatrix::identity(2, 2), 1e-12));
    }

    #[test]
    fn upper_conventions() {
        let s = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.0, 3.0]).unwrap();
        let v = upper(&s);
        assert_eq!(v.coords(), &[1.0, 2.0 * std::f64::consts::SQRT_2, 3.0]);
        assert!((v.norm() - 18f64.sqrt()).abs() < 1e-12);
        assert!(upper(&SymMatrix::zeros(3))
            .coords()
            .iter()
            .all(|&x| x == 0.0));
        assert_eq!(upper_inv(&v), s);
        assert!(matches!(
            TangentVector::new(vec![0.0; 4]),
            Err(Error::Shape(_))
        ));
        assert_eq!(TangentVector::new(vec![0.0; 6]).unwrap().dim(), 3);
    }

    #[test]
    fn spectral_derivative_of_log_matches_finite_difference() {
        let c =
            SpdMatrix::from_row_slice(3, &[3.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 1.0]).unwrap();
        let h = SymMatrix::from_row_slice(3, &[0.1, 0.4, -0.2, 0.4, -0.3, 0.05, -0.2, 0.05, 0.2])
            .unwrap();
        let analytic = c.eig().spectral_derivative(f64::ln, |x| 1.0 / x, &h);
        let eps = 1e-6;
        let plus = SpdMatrix::from_sym(&c.to_sym() + &h.scale(eps))
            .unwrap()
            .log();
        let minus = SpdMatrix::from_sym(&c.to_sym() - &h.scale(eps))
            .unwrap()
            .log();
        let fd = (&plus - &minus).scale(0.5 / eps);
        assert!((&fd - &analytic).frobenius_norm() < 1e-8);
    }

    #[test]
    fn spectral_derivative_confluent_limit() {
        let c = SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        let h = SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 0.0]).unwrap();
        let d = c.eig().spectral_derivative(f64::ln, |x| 1.0 / x, &h);
        assert!(close(d.as_matrix(), &(h.as_matrix() * 0.5), 1e-14));
    }
}
