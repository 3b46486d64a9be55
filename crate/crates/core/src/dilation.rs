//! Dilation maps and the scaling operators built on them.
//!
//! A dilation with weights `w` acts on a vector componentwise,
//! `x_i -> eps^{w_i} x_i`, for `eps > 0`. Everything else in the crate
//! (homogeneity of dynamics and costs, ray projection, envelope scaling) is
//! phrased in terms of these maps.

use crate::error::{check_dim, Error, Result};

/// Above this magnitude of `w_i * ln(eps)` the scaling is carried out in the
/// log domain so that `eps^{w_i}` never overflows before meeting `x_i`.
const LOG_DOMAIN_THRESHOLD: f64 = 500.0;

/// Strictly positive per-component dilation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationWeights(Vec<f64>);

impl DilationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Domain(format!(
                "dilation weights must be finite and strictly positive, got {w}"
            )));
        }
        Ok(Self(weights))
    }

    /// The standard dilation `c (1, ..., 1)`.
    pub fn standard(dim: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Common weight if every component carries the same weight.
    pub fn standard_weight(&self) -> Option<f64> {
        let first = *self.0.first()?;
        self.0.iter().all(|w| *w == first).then_some(first)
    }

    pub fn max_weight(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Copy with one extra weight appended (auxiliary state variable).
    pub fn appended(&self, weight: f64) -> Result<Self> {
        let mut w = self.0.clone();
        w.push(weight);
        Self::new(w)
    }
}

/// Weights and degrees parameterising every scaling law: state weights `r`,
/// input weights `q`, dynamics degree `nu` and cost degree `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationSpec {
    r: DilationWeights,
    q: DilationWeights,
    nu: f64,
    mu: f64,
}

impl DilationSpec {
    pub fn new(r: DilationWeights, q: DilationWeights, nu: f64, mu: f64) -> Result<Self> {
        if r.is_empty() || q.is_empty() {
            return Err(Error::Domain(
                "state and input dilation weights must be nonempty".into(),
            ));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Domain(format!("system degree nu must be > 0, got {nu}")));
        }
        if !mu.is_finite() {
            return Err(Error::Domain(format!("cost degree mu must be finite, got {mu}")));
        }
        Ok(Self { r, q, nu, mu })
    }

    pub fn r(&self) -> &DilationWeights {
        &self.r
    }

    pub fn q(&self) -> &DilationWeights {
        &self.q
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.r.clone(), self.q.clone(), self.nu, mu)
    }
}

/// Finite sequence of input vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    inputs: Vec<Vec<f64>>,
}

impl InputSequence {
    pub fn new(inputs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = inputs.first() {
            for u in &inputs {
                check_dim("input sequence element", first.len(), u.len())?;
            }
        }
        Ok(Self { inputs })
    }

    pub fn zeros(len: usize, input_dim: usize) -> Self {
        Self {
            inputs: vec![vec![0.0; input_dim]; len],
        }
    }

    /// Sequence of scalar inputs.
    pub fn scalar(values: &[f64]) -> Self {
        Self {
            inputs: values.iter().map(|v| vec![*v]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn get(&self, k: usize) -> Option<&[f64]> {
        self.inputs.get(k).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.iter().map(Vec::as_slice)
    }

    pub fn as_slice(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.inputs
    }
}

pub fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "dilation parameter must be finite and > 0, got {eps}"
        )))
    }
}

/// `factor * x` where `factor = exp(log_factor)`, carried out without forming
/// the factor when it would overflow or underflow.
fn scale_by_log(x: f64, log_factor: f64) -> f64 {
    if x == 0.0 {
        return x;
    }
    x.signum() * (log_factor + x.abs().ln()).exp()
}

/// `lambda^w(eps) x`, component `i` scaled by `eps^{w_i}`.
pub fn dilate(w: &DilationWeights, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("dilate", w.len(), x.len())?;
    check_eps(eps)?;
    let ln_eps = eps.ln();
    Ok(w.as_slice()
        .iter()
        .zip(x)
        .map(|(wi, xi)| {
            let log_factor = wi * ln_eps;
            if log_factor.abs() > LOG_DOMAIN_THRESHOLD {
                scale_by_log(*xi, log_factor)
            } else {
                xi * eps.powf(*wi)
            }
        })
        .collect())
}

/// Dilation with an explicit log-parameter, `lambda^w(exp(log_eps)) x`.
///
/// Used when `eps` itself is out of floating range, e.g. `eps^{nu^k}` for large `k`.
pub fn dilate_log(w: &DilationWeights, log_eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("dilate_log", w.len(), x.len())?;
    if !log_eps.is_finite() {
        return Err(Error::Range(format!("log dilation parameter {log_eps} is not finite")));
    }
    Ok(w.as_slice()
        .iter()
        .zip(x)
        .map(|(wi, xi)| scale_by_log(*xi, wi * log_eps))
        .collect())
}

/// Powered dilation `lambda^w(eps)^c x := lambda^w(eps^c) x`.
pub fn dilate_power(w: &DilationWeights, eps: f64, c: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_eps(eps)?;
    if !c.is_finite() {
        return Err(Error::Domain(format!("dilation power must be finite, got {c}")));
    }
    let powered = eps.powf(c);
    if powered.is_finite() && powered > 0.0 {
        dilate(w, powered, x)
    } else {
        dilate_log(w, c * eps.ln(), x)
    }
}

/// `Lambda^q_{c,k}(eps) u`: the `k`-th input is scaled by `lambda^q(eps)^{c^k}`.
pub fn scale_input_sequence(
    q: &DilationWeights,
    c: f64,
    eps: f64,
    u: &InputSequence,
) -> Result<InputSequence> {
    check_eps(eps)?;
    let scaled = u
        .iter()
        .enumerate()
        .map(|(k, uk)| dilate_power(q, eps, c.powi(k as i32), uk))
        .collect::<Result<Vec<_>>>()?;
    Ok(InputSequence { inputs: scaled })
}

/// Signed power `sign(x) |x|^a`.
pub fn signed_power(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    x.signum() * x.abs().powf(a)
}

/// `w^e` for the auxiliary variable: an ordinary integer power when `e` is
/// integral, otherwise the signed power so negative `w` stays defined.
pub fn aux_power(w: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() < i32::MAX as f64 {
        w.powi(e as i32)
    } else {
        signed_power(w, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weights(w: &[f64]) -> DilationWeights {
        DilationWeights::new(w.to_vec()).unwrap()
    }

    #[test]
    fn dilate_hand_values() {
        assert_eq!(dilate(&weights(&[1.0, 2.0]), 2.0, &[3.0, 5.0]).unwrap(), vec![6.0, 20.0]);
        assert_eq!(dilate(&weights(&[1.0, 1.0]), 1.0, &[7.0, -4.0]).unwrap(), vec![7.0, -4.0]);
        assert_eq!(dilate(&weights(&[0.3, 4.0]), 17.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dilate_rejects_bad_arguments() {
        let w = weights(&[1.0, 2.0]);
        assert!(matches!(dilate(&w, 2.0, &[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(dilate(&w, 0.0, &[1.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(dilate(&w, -1.0, &[1.0, 1.0]), Err(Error::Domain(_))));
        assert!(DilationWeights::new(vec![1.0, 0.0]).is_err());
        assert!(DilationWeights::new(vec![-2.0]).is_err());
    }

    #[test]
    fn dilate_power_hand_values() {
        let w = weights(&[1.0]);
        assert_eq!(dilate_power(&w, 2.0, 3.0, &[5.0]).unwrap(), vec![40.0]);
        assert_eq!(
            dilate_power(&w, 2.5, 1.0, &[5.0]).unwrap(),
            dilate(&w, 2.5, &[5.0]).unwrap()
        );
        assert_eq!(dilate_power(&w, 2.5, 0.0, &[5.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn dilate_power_survives_out_of_range_factors() {
        // 10^{-400} underflows and 10^{400} overflows on their own; applied to
        // vectors of the opposite magnitude the products are representable.
        let w = weights(&[1.0]);
        let small = dilate_power(&w, 10.0, -400.0, &[1e300]).unwrap();
        assert!((small[0].log10() + 100.0).abs() < 1e-9);
        let big = dilate_power(&w, 10.0, 400.0, &[-1e-300]).unwrap();
        assert!((big[0].abs().log10() - 100.0).abs() < 1e-9 && big[0] < 0.0);
    }

    #[test]
    fn scale_input_sequence_hand_values() {
        let q = weights(&[1.0]);
        let u = InputSequence::scalar(&[1.0, 1.0, 1.0]);
        let scaled = scale_input_sequence(&q, 2.0, 2.0, &u).unwrap();
        assert_eq!(scaled, InputSequence::scalar(&[2.0, 4.0, 16.0]));
        assert_eq!(scale_input_sequence(&q, 2.0, 1.0, &u).unwrap(), u);
    }

    #[test]
    fn scale_input_sequence_inverse_pair() {
        let q = weights(&[3.0]);
        let u = InputSequence::scalar(&[0.7, -1.2, 0.4]);
        let eps = 1.3;
        let there = scale_input_sequence(&q, 3.0, 1.0 / eps, &u).unwrap();
        let back = scale_input_sequence(&q, 3.0, eps, &there).unwrap();
        for (a, b) in back.iter().zip(u.iter()) {
            assert!(crate::relative_residual(a[0], b[0]) < 1e-12);
        }
    }

    #[test]
    fn input_sequence_rejects_ragged() {
        assert!(InputSequence::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn signed_power_hand_values() {
        assert_eq!(signed_power(-2.0, 3.0), -8.0);
        assert_eq!(signed_power(-2.5, 1.0), -2.5);
        assert_eq!(signed_power(0.0, 0.3), 0.0);
    }

    #[test]
    fn aux_power_is_one_at_one() {
        for e in [0.0, 1.0, 2.0, 4.5, 12.0, 1.0 / 3.0] {
            assert_eq!(aux_power(1.0, e), 1.0);
        }
        assert_eq!(aux_power(-2.0, 2.0), 4.0);
        assert_eq!(aux_power(-8.0, 1.0 / 3.0), -2.0);
    }

    fn weight_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.1f64..4.0, 1..5)
    }

    proptest! {
        #[test]
        fn group_law(w in weight_vec(), e1 in 0.1f64..10.0, e2 in 0.1f64..10.0, seed in prop::collection::vec(-5.0f64..5.0, 5)) {
            let w = DilationWeights::new(w).unwrap();
            let x = &seed[..w.len()];
            let twice = dilate(&w, e1, &dilate(&w, e2, x).unwrap()).unwrap();
            let once = dilate(&w, e1 * e2, x).unwrap();
            prop_assert!(crate::max_relative_residual(&twice, &once) < 1e-12);
        }

        #[test]
        fn inverse_law(w in weight_vec(), eps in 0.05f64..20.0, seed in prop::collection::vec(-5.0f64..5.0, 5)) {
            let w = DilationWeights::new(w).unwrap();
            let x = &seed[..w.len()];
            let back = dilate(&w, 1.0 / eps, &dilate(&w, eps, x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(x) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) || a == b);
            }
        }

        #[test]
        fn power_matches_dilate(w in weight_vec(), eps in 0.2f64..5.0, c in -3.0f64..3.0, seed in prop::collection::vec(-5.0f64..5.0, 5)) {
            let w = DilationWeights::new(w).unwrap();
            let x = &seed[..w.len()];
            let a = dilate_power(&w, eps, c, x).unwrap();
            let b = dilate(&w, eps.powf(c), x).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn standard_weights_scale_norm(eps in 0.05f64..20.0, x in prop::collection::vec(-5.0f64..5.0, 3)) {
            let w = DilationWeights::standard(3, 1.0).unwrap();
            let y = dilate(&w, eps, &x).unwrap();
            let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
            prop_assert!((norm(&y) - eps * norm(&x)).abs() <= 1e-12 * (1.0 + eps * norm(&x)));
        }

        #[test]
        fn signed_power_is_odd(x in -100.0f64..100.0, a in 0.05f64..5.0) {
            prop_assert_eq!(signed_power(-x, a), -signed_power(x, a));
        }
    }
}
