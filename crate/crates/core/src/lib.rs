//! Riemannian statistics on symmetric positive definite matrices and
//! information-maximization alignment for source-free domain adaptation under
//! label shift.
//!
//! Modules, bottom-up:
//!
//! - [`spd`]: AIRM geometry kernel (Jacobi eigensolver, matrix functions,
//!   distance, geodesics, log/exp maps, parallel transport, half-vectorization).
//! - [`frechet`]: Karcher-flow Fréchet mean and variance.
//! - [`generative`]: log-linear covariance model with per-domain forward models
//!   and target label shift.
//! - [`alignment`]: TSM, RCT+TSM and the SPDIM feature transforms.
//! - [`learner`]: softmax head, IM loss, bias fitting, balanced accuracy.
//! - [`sim`]: simulation grid, verification reports, result CSV.
//! - [`io`]: dataset/parameter/classifier serialization.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod error;
pub mod frechet;
pub mod generative;
pub mod io;
pub mod learner;
pub mod random;
pub mod sim;
pub mod spd;

pub use error::{Error, Result};
