//! Homogeneous system models `x+ = f(x, u)`.
//!
//! Besides simulation this module hosts the numeric checks of the dynamics
//! homogeneity assumption, the solution scaling law along homogeneous rays,
//! and the auxiliary-variable construction that turns a sum of homogeneous
//! monomials of different degrees into a single homogeneous vector field.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dilation::{
    aux_power, dilate, dilate_power, scale_input_sequence, signed_power, DilationSpec,
    DilationWeights, InputSequence,
};
use crate::error::{check_dim, Error, Result};
use crate::sampling::SamplingOptions;
use crate::{max_relative_residual, relative_residual};

pub type StepFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ComponentFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Largest `|log factor|` a scaling check will form before capping its horizon.
const MAX_LOG_FACTOR: f64 = 700.0;

/// A discrete-time system together with the dilation pair it is homogeneous for.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    step: StepFn,
    spec: DilationSpec,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("spec", &self.spec)
            .finish()
    }
}

impl SystemModel {
    /// Wraps a step map. Dimensions come from the dilation weights; the map must
    /// send `(0, 0)` to exactly `0`.
    pub fn new(name: impl Into<String>, spec: DilationSpec, step: StepFn) -> Result<Self> {
        let state_dim = spec.r().len();
        let input_dim = spec.q().len();
        let origin = step(&vec![0.0; state_dim], &vec![0.0; input_dim]);
        check_dim("system step output", state_dim, origin.len())?;
        if origin.iter().any(|c| *c != 0.0) {
            return Err(Error::Construction(format!(
                "f(0, 0) must be 0 for a homogeneous system, got {origin:?}"
            )));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            input_dim,
            step,
            spec,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn spec(&self) -> &DilationSpec {
        &self.spec
    }

    /// Same dynamics with a different declared dilation pair (used to probe
    /// misdeclared degrees).
    pub fn with_spec(&self, spec: DilationSpec) -> Result<Self> {
        check_dim("replacement state weights", self.state_dim, spec.r().len())?;
        check_dim("replacement input weights", self.input_dim, spec.q().len())?;
        Ok(Self {
            spec,
            ..self.clone()
        })
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("system state", self.state_dim, x.len())?;
        check_dim("system input", self.input_dim, u.len())?;
        let next = (self.step)(x, u);
        check_dim("system step output", self.state_dim, next.len())?;
        Ok(next)
    }

    pub fn step_fn(&self) -> &StepFn {
        &self.step
    }
}

/// Extended van der Pol oscillator, Euler-discretised with an auxiliary third
/// state so that it is homogeneous of degree 3 for `r = (1, 1, 1)`, `q = (3)`.
pub fn van_der_pol_extended(a: f64, b: f64, t: f64) -> Result<SystemModel> {
    let spec = DilationSpec::new(
        DilationWeights::standard(3, 1.0)?,
        DilationWeights::new(vec![3.0])?,
        3.0,
        2.0,
    )?;
    let step: StepFn = Arc::new(move |x: &[f64], u: &[f64]| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let x3sq = x3 * x3;
        vec![
            x1 * x3sq + t * x2 * x3sq,
            x2 * x3sq + t * a * (x3sq - x1 * x1) * x2 - t * b * x1 * x3sq + t * u[0],
            x3sq * x3,
        ]
    });
    SystemModel::new("van_der_pol_extended", spec, step)
}

/// The original two-state Euler van der Pol step (not homogeneous).
pub fn van_der_pol_step(a: f64, b: f64, t: f64) -> impl Fn(&[f64], &[f64]) -> Vec<f64> + Clone {
    move |x: &[f64], u: &[f64]| {
        vec![
            x[0] + t * x[1],
            x[1] + t * (a * (1.0 - x[0] * x[0]) * x[1] - b * x[0] + u[0]),
        ]
    }
}

/// Monomial decomposition of the original van der Pol rows with respect to
/// `r = (1, 1)`, `q = (3)`: degree-1 linear terms and degree-3 terms.
pub fn van_der_pol_components(a: f64, b: f64, t: f64) -> Result<Vec<MonomialComponent>> {
    let r = DilationWeights::standard(2, 1.0)?;
    let q = DilationWeights::new(vec![3.0])?;
    Ok(vec![
        MonomialComponent::monomial(0, 1.0, &[1, 0], &[0], &r, &q)?,
        MonomialComponent::monomial(0, t, &[0, 1], &[0], &r, &q)?,
        MonomialComponent::monomial(1, 1.0, &[0, 1], &[0], &r, &q)?,
        MonomialComponent::monomial(1, t * a, &[0, 1], &[0], &r, &q)?,
        MonomialComponent::monomial(1, -t * a, &[2, 1], &[0], &r, &q)?,
        MonomialComponent::monomial(1, -t * b, &[1, 0], &[0], &r, &q)?,
        MonomialComponent::monomial(1, t, &[0, 0], &[1], &r, &q)?,
    ])
}

/// Linear system `x+ = A x + B u`, homogeneous of degree 1 for standard unit weights.
pub fn linear_system(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<SystemModel> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Domain(format!("A must be square, got {}x{}", n, a.ncols())));
    }
    check_dim("B rows", n, b.nrows())?;
    let m = b.ncols();
    let spec = DilationSpec::new(
        DilationWeights::standard(n, 1.0)?,
        DilationWeights::standard(m, 1.0)?,
        1.0,
        2.0,
    )?;
    let step: StepFn = Arc::new(move |x: &[f64], u: &[f64]| {
        (0..n)
            .map(|i| {
                let ax: f64 = (0..n).map(|j| a[(i, j)] * x[j]).sum();
                let bu: f64 = (0..m).map(|j| b[(i, j)] * u[j]).sum();
                ax + bu
            })
            .collect()
    });
    SystemModel::new("linear", spec, step)
}

/// States `phi(0..=k, x0, u)` of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: InputSequence,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds x0")
    }
}

pub fn simulate(sys: &SystemModel, x0: &[f64], u: &InputSequence, k: usize) -> Result<Trajectory> {
    check_dim("initial state", sys.state_dim(), x0.len())?;
    if k > u.len() {
        return Err(Error::Contract(format!(
            "horizon {k} exceeds input sequence length {}",
            u.len()
        )));
    }
    let mut states = Vec::with_capacity(k + 1);
    states.push(x0.to_vec());
    for uk in u.iter().take(k) {
        let next = sys.step(states.last().unwrap(), uk)?;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: u.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneitySample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub eps: f64,
}

/// Outcome of a randomized homogeneity check. Failure is a report outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    pub samples: usize,
    pub tol: f64,
    pub max_residual: f64,
    /// Output row with the largest residual.
    pub worst_row: Option<usize>,
    pub worst_sample: Option<HomogeneitySample>,
    pub passed: bool,
}

/// Both sides of `f(lambda^r(eps) x, lambda^q(eps) u) = lambda^r(eps)^nu f(x, u)`.
pub fn homogeneity_sides(
    sys: &SystemModel,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = sys.spec();
    let lhs = sys.step(&dilate(spec.r(), eps, x)?, &dilate(spec.q(), eps, u)?)?;
    let rhs = dilate_power(spec.r(), eps, spec.nu(), &sys.step(x, u)?)?;
    Ok((lhs, rhs))
}

pub fn verify_dynamics_homogeneity(
    sys: &SystemModel,
    opts: &SamplingOptions,
    tol: f64,
) -> Result<HomogeneityReport> {
    if opts.samples == 0 {
        return Err(Error::Contract("at least one sample is required".into()));
    }
    let mut sampler = opts.rng();
    let mut max_residual = 0.0;
    let mut worst_row = None;
    let mut worst_sample = None;
    for _ in 0..opts.samples {
        let x = sampler.state(sys.state_dim());
        let u = sampler.input(sys.input_dim());
        let eps = sampler.eps();
        let (lhs, rhs) = homogeneity_sides(sys, &x, &u, eps)?;
        for (row, (a, b)) in lhs.iter().zip(&rhs).enumerate() {
            let res = relative_residual(*a, *b);
            if res > max_residual || worst_sample.is_none() {
                max_residual = res;
                worst_row = Some(row);
                worst_sample = Some(HomogeneitySample {
                    x: x.clone(),
                    u: u.clone(),
                    eps,
                });
            }
        }
    }
    Ok(HomogeneityReport {
        samples: opts.samples,
        tol,
        max_residual,
        worst_row,
        worst_sample,
        passed: max_residual <= tol,
    })
}

/// Result of a scaling-law check over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCheck {
    pub max_residual: f64,
    /// Largest horizon actually checked.
    pub horizon: usize,
    pub requested: usize,
    /// True when `eps^{nu^k}` left floating range before `requested`.
    pub capped: bool,
}

pub(crate) fn log_factor_in_range(log_factor: f64) -> bool {
    log_factor.is_finite() && log_factor.abs() <= MAX_LOG_FACTOR
}

/// Compares `phi(k, lambda^r(eps) x, Lambda^q_nu(eps) u)` with
/// `lambda^r(eps)^{nu^k} phi(k, x, u)` for every `k` up to the horizon.
pub fn check_solution_scaling(
    sys: &SystemModel,
    x: &[f64],
    u: &InputSequence,
    eps: f64,
    k: usize,
) -> Result<ScalingCheck> {
    if k > u.len() {
        return Err(Error::Contract(format!(
            "horizon {k} exceeds input sequence length {}",
            u.len()
        )));
    }
    let spec = sys.spec();
    let scaled_u = scale_input_sequence(spec.q(), spec.nu(), eps, u)?;
    let base = simulate(sys, x, u, k)?;
    let scaled = simulate(sys, &dilate(spec.r(), eps, x)?, &scaled_u, k)?;
    let ln_eps = eps.ln();
    let mut max_residual: f64 = 0.0;
    let mut horizon = 0;
    let mut capped = false;
    for j in 0..=k {
        let power = spec.nu().powi(j as i32);
        let lhs = &scaled.states[j];
        let in_range = log_factor_in_range(power * spec.r().max_weight() * ln_eps)
            && lhs.iter().chain(&base.states[j]).all(|c| c.is_finite());
        if !in_range {
            capped = true;
            break;
        }
        let rhs = dilate_power(spec.r(), eps, power, &base.states[j])?;
        max_residual = max_residual.max(max_relative_residual(lhs, &rhs));
        horizon = j;
    }
    Ok(ScalingCheck {
        max_residual,
        horizon,
        requested: k,
        capped,
    })
}

/// One homogeneous summand `g_{i,j}` of row `i` of a vector field.
#[derive(Clone)]
pub struct MonomialComponent {
    row: usize,
    eval: ComponentFn,
    degree: f64,
}

impl fmt::Debug for MonomialComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonomialComponent")
            .field("row", &self.row)
            .field("degree", &self.degree)
            .finish()
    }
}

impl MonomialComponent {
    /// Wraps an evaluator with a declared degree, verified on random samples.
    pub fn new(
        row: usize,
        degree: f64,
        r: &DilationWeights,
        q: &DilationWeights,
        eval: ComponentFn,
    ) -> Result<Self> {
        let opts = SamplingOptions::default()
            .with_samples(64)
            .with_seed(0xC0FFEE + row as u64);
        let mut sampler = opts.rng();
        for _ in 0..opts.samples {
            let x = sampler.state(r.len());
            let u = sampler.input(q.len());
            let eps = sampler.eps();
            let lhs = eval(&dilate(r, eps, &x)?, &dilate(q, eps, &u)?);
            let rhs = eps.powf(degree) * eval(&x, &u);
            let res = relative_residual(lhs, rhs);
            if res.is_nan() || res > 1e-9 {
                return Err(Error::Construction(format!(
                    "component in row {row} is not homogeneous of degree {degree}: \
                     residual {res:.3e} at x={x:?}, u={u:?}, eps={eps}"
                )));
            }
        }
        Ok(Self { row, eval, degree })
    }

    /// `coef * prod x_i^{a_i} * prod u_j^{b_j}`, degree `sum r_i a_i + sum q_j b_j`.
    pub fn monomial(
        row: usize,
        coef: f64,
        x_exps: &[u32],
        u_exps: &[u32],
        r: &DilationWeights,
        q: &DilationWeights,
    ) -> Result<Self> {
        check_dim("monomial state exponents", r.len(), x_exps.len())?;
        check_dim("monomial input exponents", q.len(), u_exps.len())?;
        let degree = x_exps
            .iter()
            .zip(r.as_slice())
            .chain(u_exps.iter().zip(q.as_slice()))
            .map(|(e, w)| *e as f64 * w)
            .sum();
        let xe = x_exps.to_vec();
        let ue = u_exps.to_vec();
        let eval: ComponentFn = Arc::new(move |x: &[f64], u: &[f64]| {
            let mut v = coef;
            for (xi, e) in x.iter().zip(&xe) {
                v *= xi.powi(*e as i32);
            }
            for (uj, e) in u.iter().zip(&ue) {
                v *= uj.powi(*e as i32);
            }
            v
        });
        Self::new(row, degree, r, q, eval)
    }

    pub fn row(&self) -> usize {
        self.row
    }

    pub fn degree(&self) -> f64 {
        self.degree
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.eval)(x, u)
    }
}

/// The map `f_i(x, u) = sum_j g_{i,j}(x, u)`, summed in component order.
pub fn component_sum_step(
    components: &[MonomialComponent],
    state_dim: usize,
) -> impl Fn(&[f64], &[f64]) -> Vec<f64> + Clone + Send + Sync {
    let components = components.to_vec();
    move |x: &[f64], u: &[f64]| {
        let mut out = vec![0.0; state_dim];
        for c in &components {
            out[c.row] += c.eval(x, u);
        }
        out
    }
}

/// How the auxiliary variable `w` is weighted and which exponents it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionMode {
    /// `w` has dilation weight `1/nu`, term exponents `(r_i nu - nu_ij) nu`,
    /// default `nu = 1 + max nu_ij / r_i`.
    FractionalWeight,
    /// `w` has dilation weight `1`, term exponents `r_i nu - nu_ij`,
    /// default `nu = max nu_ij / r_i`.
    UnitWeight,
}

/// Builds the `(n_x + 1)`-dimensional homogeneous field
/// `f~_i(x, w, u) = sum_j w^{e_ij} g_ij(x, u)`, `w+ = [w]^nu`.
///
/// The returned model has passed [`verify_dynamics_homogeneity`] at `1e-9`.
pub fn extend_system(
    components: &[MonomialComponent],
    r: &DilationWeights,
    q: &DilationWeights,
    nu: Option<f64>,
    mode: ExtensionMode,
) -> Result<SystemModel> {
    let n_x = r.len();
    if let Some(c) = components.iter().find(|c| c.row >= n_x) {
        return Err(Error::Domain(format!(
            "component row {} out of range for {n_x} states",
            c.row
        )));
    }
    let max_ratio = components
        .iter()
        .map(|c| c.degree / r.as_slice()[c.row])
        .fold(0.0, f64::max);
    let nu = match (nu, mode) {
        (Some(nu), _) => nu,
        (None, ExtensionMode::FractionalWeight) => 1.0 + max_ratio,
        (None, ExtensionMode::UnitWeight) => max_ratio,
    };
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::Domain(format!("extension degree must be > 0, got {nu}")));
    }
    let (w_weight, scale) = match mode {
        ExtensionMode::FractionalWeight => (1.0 / nu, nu),
        ExtensionMode::UnitWeight => (1.0, 1.0),
    };
    let mut exponents = Vec::with_capacity(components.len());
    for c in components {
        let raw = (r.as_slice()[c.row] * nu - c.degree) * scale;
        if raw < -1e-12 * (1.0 + c.degree.abs()) {
            return Err(Error::Domain(format!(
                "negative w-exponent {raw} for a degree-{} term in row {}: nu = {nu} is below max(nu_ij / r_i) = {max_ratio}",
                c.degree, c.row
            )));
        }
        // Snap rounding noise so integer exponents take the integer-power path.
        let rounded = raw.round();
        exponents.push(if (raw - rounded).abs() < 1e-12 { rounded } else { raw.max(0.0) });
    }

    let comps = components.to_vec();
    let step: StepFn = Arc::new(move |xw: &[f64], u: &[f64]| {
        let (x, w) = (&xw[..n_x], xw[n_x]);
        let mut out = vec![0.0; n_x + 1];
        for (c, e) in comps.iter().zip(&exponents) {
            out[c.row] += aux_power(w, *e) * c.eval(x, u);
        }
        out[n_x] = signed_power(w, nu);
        out
    });
    let spec = DilationSpec::new(r.appended(w_weight)?, q.clone(), nu, 0.0)?;
    let name = match mode {
        ExtensionMode::FractionalWeight => "extended_fractional_weight",
        ExtensionMode::UnitWeight => "extended_unit_weight",
    };
    let sys = SystemModel::new(name, spec, step)?;

    let report = verify_dynamics_homogeneity(&sys, &SamplingOptions::default().with_samples(200), 1e-9)?;
    if !report.passed {
        return Err(Error::Construction(format!(
            "extended system fails the homogeneity self-check in row {} (residual {:.3e})",
            report.worst_row.unwrap_or(0),
            report.max_residual
        )));
    }
    Ok(sys)
}

/// Deviation between an original trajectory and the leading components of the
/// extended trajectory started at `w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatch {
    pub state_residual: f64,
    pub w_deviation: f64,
}

pub fn trajectory_match_with_w(
    original: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    extended: &SystemModel,
    x0: &[f64],
    u: &InputSequence,
) -> Result<TrajectoryMatch> {
    check_dim("original initial state", extended.state_dim() - 1, x0.len())?;
    let mut xw = x0.to_vec();
    xw.push(1.0);
    let ext = simulate(extended, &xw, u, u.len())?;
    let mut x = x0.to_vec();
    let mut state_residual: f64 = 0.0;
    let mut w_deviation: f64 = 0.0;
    for (k, ext_state) in ext.states.iter().enumerate() {
        if k > 0 {
            x = original(&x, u.get(k - 1).unwrap());
        }
        let n = x.len();
        for (a, b) in x.iter().zip(&ext_state[..n]) {
            state_residual = state_residual.max((a - b).abs());
        }
        w_deviation = w_deviation.max((ext_state[n] - 1.0).abs());
    }
    Ok(TrajectoryMatch {
        state_residual,
        w_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vdp() -> SystemModel {
        van_der_pol_extended(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn simulate_hand_values() {
        let sys = vdp();
        let traj = simulate(&sys, &[1.0, 0.0, 1.0], &InputSequence::scalar(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(traj.states[1], vec![1.0, -1.0, 1.0]);
        assert_eq!(traj.states[2], vec![0.0, -2.0, 1.0]);
        let zero = simulate(&sys, &[1.0, 0.0, 1.0], &InputSequence::scalar(&[0.0]), 0).unwrap();
        assert_eq!(zero.states, vec![vec![1.0, 0.0, 1.0]]);
    }

    #[test]
    fn simulate_rejects_long_horizon() {
        let sys = vdp();
        let err = simulate(&sys, &[1.0, 0.0, 1.0], &InputSequence::scalar(&[0.0]), 2);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn construction_requires_zero_fixed_point() {
        let spec = DilationSpec::new(
            DilationWeights::standard(1, 1.0).unwrap(),
            DilationWeights::standard(1, 1.0).unwrap(),
            1.0,
            2.0,
        )
        .unwrap();
        let err = SystemModel::new("affine", spec, Arc::new(|x: &[f64], u: &[f64]| vec![x[0] + u[0] + 1.0]));
        assert!(matches!(err, Err(Error::Construction(_))));
    }

    #[test]
    fn van_der_pol_is_homogeneous() {
        let report = verify_dynamics_homogeneity(
            &vdp(),
            &SamplingOptions::default().with_samples(500).with_input_bound(5.0),
            1e-9,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn linear_system_is_homogeneous() {
        let sys = linear_system(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -0.5, 2.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let report = verify_dynamics_homogeneity(&sys, &SamplingOptions::default(), 1e-12).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn mutated_van_der_pol_fails() {
        let spec = vdp().spec().clone();
        let mutated = SystemModel::new(
            "mutated",
            spec,
            Arc::new(|x: &[f64], u: &[f64]| {
                let x3sq = x[2] * x[2];
                vec![
                    x[0] + x[1] * x3sq,
                    x[1] * x3sq + (x3sq - x[0] * x[0]) * x[1] - x[0] * x3sq + u[0],
                    x3sq * x[2],
                ]
            }),
        )
        .unwrap();
        let (lhs, rhs) = homogeneity_sides(&mutated, &[1.0, 0.0, 1.0], &[0.0], 2.0).unwrap();
        assert_eq!(lhs[0], 2.0);
        assert_eq!(rhs[0], 8.0);
        let report = verify_dynamics_homogeneity(&mutated, &SamplingOptions::default(), 1e-9).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_row, Some(0));
    }

    #[test]
    fn solution_scaling_hand_cases() {
        let sys = vdp();
        let u = InputSequence::scalar(&[0.0, 0.0]);
        let x = [1.0, 0.0, 1.0];
        let one = check_solution_scaling(&sys, &x, &u, 1.0, 2).unwrap();
        assert_eq!(one.max_residual, 0.0);
        let c = check_solution_scaling(&sys, &x, &u, 1.1, 2).unwrap();
        assert!(c.max_residual <= 1e-12 && !c.capped && c.horizon == 2);
        let k0 = check_solution_scaling(&sys, &x, &u, 3.0, 0).unwrap();
        assert_eq!(k0.max_residual, 0.0);
    }

    #[test]
    fn solution_scaling_caps_out_of_range_horizon() {
        let sys = vdp();
        let u = InputSequence::scalar(&[0.1; 8]);
        let c = check_solution_scaling(&sys, &[0.3, 0.2, 1.0], &u, 10.0, 8).unwrap();
        assert!(c.capped);
        assert!(c.horizon < 8);
        // 3^k ln 10 <= 700 holds up to k = 5
        assert_eq!(c.horizon, 5);
    }

    #[test]
    fn extension_unit_weight_reproduces_extended_field() {
        let comps = van_der_pol_components(1.0, 1.0, 1.0).unwrap();
        let r = DilationWeights::standard(2, 1.0).unwrap();
        let q = DilationWeights::new(vec![3.0]).unwrap();
        let ext = extend_system(&comps, &r, &q, Some(3.0), ExtensionMode::UnitWeight).unwrap();
        assert_eq!(ext.spec().r().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(ext.spec().nu(), 3.0);
        let builtin = vdp();
        let opts = SamplingOptions::default().with_samples(50);
        let mut s = opts.rng();
        for _ in 0..50 {
            let x = s.state(3);
            let u = s.input(1);
            let a = ext.step(&x, &u).unwrap();
            let b = builtin.step(&x, &u).unwrap();
            assert!(max_relative_residual(&a, &b) < 1e-12, "{a:?} vs {b:?}");
        }
        // default nu for case-study mode is max(nu_ij / r_i) = 3
        let default = extend_system(&comps, &r, &q, None, ExtensionMode::UnitWeight).unwrap();
        assert_eq!(default.spec().nu(), 3.0);
    }

    #[test]
    fn extension_fractional_weight_defaults() {
        let comps = van_der_pol_components(1.0, 1.0, 1.0).unwrap();
        let r = DilationWeights::standard(2, 1.0).unwrap();
        let q = DilationWeights::new(vec![3.0]).unwrap();
        let ext = extend_system(&comps, &r, &q, None, ExtensionMode::FractionalWeight).unwrap();
        assert_eq!(ext.spec().nu(), 4.0);
        assert_eq!(ext.spec().r().as_slice(), &[1.0, 1.0, 0.25]);
    }

    #[test]
    fn extension_exponent_for_scalar_square() {
        let r = DilationWeights::standard(1, 1.0).unwrap();
        let q = DilationWeights::standard(1, 1.0).unwrap();
        let g = MonomialComponent::monomial(0, 1.0, &[2], &[0], &r, &q).unwrap();
        let ext = extend_system(&[g], &r, &q, Some(3.0), ExtensionMode::UnitWeight).unwrap();
        // w-exponent 1*3 - 2 = 1: f(x, w) = w x^2
        assert_eq!(ext.step(&[3.0, 2.0], &[0.0]).unwrap(), vec![18.0, 8.0]);
    }

    #[test]
    fn extension_of_homogeneous_row_keeps_dynamics() {
        let r = DilationWeights::standard(1, 1.0).unwrap();
        let q = DilationWeights::standard(1, 1.0).unwrap();
        let g = MonomialComponent::monomial(0, 0.5, &[1], &[0], &r, &q).unwrap();
        let ext = extend_system(&[g], &r, &q, Some(1.0), ExtensionMode::UnitWeight).unwrap();
        assert_eq!(ext.step(&[3.0, -7.0], &[0.0]).unwrap(), vec![1.5, -7.0]);
    }

    #[test]
    fn extension_rejects_small_nu() {
        let comps = van_der_pol_components(1.0, 1.0, 1.0).unwrap();
        let r = DilationWeights::standard(2, 1.0).unwrap();
        let q = DilationWeights::new(vec![3.0]).unwrap();
        let err = extend_system(&comps, &r, &q, Some(2.0), ExtensionMode::UnitWeight);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn monomial_degree_is_checked() {
        let r = DilationWeights::standard(1, 1.0).unwrap();
        let q = DilationWeights::standard(1, 1.0).unwrap();
        let wrong = MonomialComponent::new(0, 3.0, &r, &q, Arc::new(|x: &[f64], _: &[f64]| x[0] * x[0]));
        assert!(matches!(wrong, Err(Error::Construction(_))));
    }

    #[test]
    fn trajectory_match_hand_case() {
        let comps = van_der_pol_components(1.0, 1.0, 1.0).unwrap();
        let r = DilationWeights::standard(2, 1.0).unwrap();
        let q = DilationWeights::new(vec![3.0]).unwrap();
        let ext = extend_system(&comps, &r, &q, None, ExtensionMode::UnitWeight).unwrap();
        let original = van_der_pol_step(1.0, 1.0, 1.0);
        let m = trajectory_match_with_w(&original, &ext, &[1.0, 0.0], &InputSequence::scalar(&[0.0, 0.0])).unwrap();
        assert_eq!(m.state_residual, 0.0);
        assert_eq!(m.w_deviation, 0.0);
        let empty = trajectory_match_with_w(&original, &ext, &[1.0, 0.0], &InputSequence::scalar(&[])).unwrap();
        assert_eq!(empty.state_residual, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn extension_modes_agree_at_unit_w(
            x0 in prop::collection::vec(-0.5f64..0.5, 2),
            u in prop::collection::vec(-0.3f64..0.3, 0..6),
        ) {
            let comps = van_der_pol_components(1.0, 1.0, 1.0).unwrap();
            let r = DilationWeights::standard(2, 1.0).unwrap();
            let q = DilationWeights::new(vec![3.0]).unwrap();
            let a = extend_system(&comps, &r, &q, None, ExtensionMode::FractionalWeight).unwrap();
            let b = extend_system(&comps, &r, &q, None, ExtensionMode::UnitWeight).unwrap();
            let u = InputSequence::scalar(&u);
            let xw = [x0[0], x0[1], 1.0];
            let ta = simulate(&a, &xw, &u, u.len()).unwrap();
            let tb = simulate(&b, &xw, &u, u.len()).unwrap();
            for (sa, sb) in ta.states.iter().zip(&tb.states) {
                prop_assert_eq!(&sa[..2], &sb[..2]);
            }
        }

        #[test]
        fn powered_dilation_matches_repeated_powering(
            eps in 0.5f64..2.0,
            k in 0u32..4,
            x in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let r = DilationWeights::standard(3, 1.0).unwrap();
            let direct = dilate_power(&r, eps, 3f64.powi(k as i32), &x).unwrap();
            let mut e = eps;
            for _ in 0..k {
                e = e.powf(3.0);
            }
            let repeated = dilate(&r, e, &x).unwrap();
            prop_assert!(max_relative_residual(&direct, &repeated) < 1e-12);
        }
    }
}
