//! Optimal control of homogeneous discrete-time systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`dilation`]: dilation maps, input-sequence scalers and signed powers.
//! - [`systems`]: homogeneous system models, trajectories, homogeneity checks and
//!   the auxiliary-variable extension of polynomial dynamics.
//! - [`costs`]: homogeneous stage/terminal costs, the weighted cost and executable
//!   forms of the cost and value-function scaling identities.
//! - [`manifold`]: the sphere grid on which Bellman backups are solved and the ray
//!   decomposition of arbitrary states onto it.
//! - [`homvi`]: value iteration restricted to the manifold, producing lower and
//!   upper envelopes valid on the whole state space.
//! - [`classic_vi`]: rectangular-grid value iteration and a brute-force oracle.
//! - [`casestudy`]: the extended van der Pol case study, run configuration and
//!   the commands behind the `homdp` binary.

pub mod casestudy;
pub mod classic_vi;
pub mod costs;
pub mod dilation;
mod error;
pub mod homvi;
pub mod manifold;
pub mod riccati;
pub mod sampling;
pub mod systems;

pub use error::{Error, Result};

/// Componentwise relative residual `|a - b| / max(1, |a|, |b|)`.
///
/// Two equal infinities give zero; an infinity against a finite value, or any NaN,
/// gives infinity.
pub fn relative_residual(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a.is_nan() || b.is_nan() || a.is_infinite() || b.is_infinite() {
        return f64::INFINITY;
    }
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Maximum of [`relative_residual`] over paired components.
pub fn max_relative_residual(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_residual(*x, *y))
        .fold(0.0, f64::max)
}
