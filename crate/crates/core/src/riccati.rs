//! Discrete algebraic Riccati equation by fixed-point iteration, used to
//! justify the quadratic initial value of the case study.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub iterations: usize,
    /// Max-abs residual of the Riccati equation at `p`.
    pub residual: f64,
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at_p = a.transpose() * p;
    let s = r + b.transpose() * p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Domain("R + B'PB is singular".into()))?;
    let next = q + &at_p * a - &at_p * b * s_inv * b.transpose() * p * a;
    Ok((&next + next.transpose()) * 0.5)
}

/// Iterates `P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` from `P = Q` until
/// successive iterates differ by at most `tol` (max-abs).
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension {
            context: "Riccati data",
            expected: n,
            got: b.nrows(),
        });
    }
    let mut p = q.clone();
    for it in 1..=max_iter {
        let next = riccati_map(a, b, q, r, &p)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotANumber(format!("Riccati iterate diverged at step {it}")));
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol {
            let residual = (riccati_map(a, b, q, r, &p)? - &p).amax();
            return Ok(RiccatiSolution { p, iterations: it, residual });
        }
    }
    Err(Error::Range(format!(
        "Riccati iteration did not reach tolerance {tol} in {max_iter} steps"
    )))
}

/// Linearisation at the origin of the van der Pol step on the slice `x3 = 1`.
pub fn van_der_pol_linearization(a: f64, b: f64, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[1.0, t, -t * b, 1.0 + t * a]),
        DMatrix::from_row_slice(2, 1, &[0.0, t]),
    )
}

/// Pads an `n x n` matrix with a zero last row and column.
pub fn embed_with_zero_row(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(p);
    out
}

/// The case-study terminal weight matrix.
pub fn reference_terminal_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[6.8, 4.0, 0.0, 4.0, 11.5, 0.0, 0.0, 0.0, 0.0])
}
