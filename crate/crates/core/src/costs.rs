//! Homogeneous stage and terminal costs, the weighted cost `J_{d,g1,g2}`,
//! and executable forms of the cost scaling identities.

use std::fmt;
use std::ops::Add;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dilation::{
    check_eps, dilate, scale_input_sequence, signed_power, DilationWeights,
    InputSequence,
};
use crate::error::{check_dim, Error, Result};
use crate::relative_residual;
use crate::sampling::SamplingOptions;
use crate::systems::{log_factor_in_range, simulate, ScalingCheck, SystemModel};

pub type StageFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MembershipFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A value in `[0, +inf]`. Never negative, never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtendedCost(f64);

impl ExtendedCost {
    pub const ZERO: Self = Self(0.0);
    pub const INFINITY: Self = Self(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::NotANumber("cost evaluated to NaN".into()));
        }
        if value < 0.0 {
            return Err(Error::Range(format!("cost value must be nonnegative, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Add for ExtendedCost {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl fmt::Display for ExtendedCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Stage cost `l(x, u)`, terminal cost `j(x)` and their common degree `mu`
/// with respect to the dilation pair `(lambda^r, lambda^q)` they were checked on.
#[derive(Clone)]
pub struct CostModel {
    name: String,
    stage: StageFn,
    terminal: TerminalFn,
    mu: f64,
    r: DilationWeights,
    q: DilationWeights,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("r", &self.r)
            .field("q", &self.q)
            .finish()
    }
}

/// Number of random samples used by the construction-time degree check.
const CONSTRUCTION_SAMPLES: usize = 100;
const CONSTRUCTION_TOL: f64 = 1e-9;

impl CostModel {
    /// Builds a cost and checks `l(0,0) = j(0) = 0` and the declared degree.
    pub fn new(
        name: impl Into<String>,
        r: DilationWeights,
        q: DilationWeights,
        mu: f64,
        stage: StageFn,
        terminal: TerminalFn,
    ) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("cost degree must be finite, got {mu}")));
        }
        let cost = Self {
            name: name.into(),
            stage,
            terminal,
            mu,
            r,
            q,
        };
        let zx = vec![0.0; cost.state_dim()];
        let zu = vec![0.0; cost.input_dim()];
        let (s0, t0) = (cost.stage(&zx, &zu)?, cost.terminal(&zx)?);
        if s0 != ExtendedCost::ZERO || t0 != ExtendedCost::ZERO {
            return Err(Error::Construction(format!(
                "cost '{}' must vanish at the origin, got l(0,0)={s0}, j(0)={t0}",
                cost.name
            )));
        }
        let report = verify_cost_homogeneity(
            &cost,
            &cost.r,
            &cost.q,
            &SamplingOptions::default().with_samples(CONSTRUCTION_SAMPLES),
            CONSTRUCTION_TOL,
        )?;
        if !report.passed {
            return Err(Error::Construction(format!(
                "cost '{}' is not homogeneous of degree {mu}: {report}",
                cost.name
            )));
        }
        Ok(cost)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r(&self) -> &DilationWeights {
        &self.r
    }

    pub fn q(&self) -> &DilationWeights {
        &self.q
    }

    pub fn state_dim(&self) -> usize {
        self.r.len()
    }

    pub fn input_dim(&self) -> usize {
        self.q.len()
    }

    pub fn stage(&self, x: &[f64], u: &[f64]) -> Result<ExtendedCost> {
        check_dim("stage cost state", self.state_dim(), x.len())?;
        check_dim("stage cost input", self.input_dim(), u.len())?;
        ExtendedCost::new((self.stage)(x, u))
    }

    pub fn terminal(&self, x: &[f64]) -> Result<ExtendedCost> {
        check_dim("terminal cost state", self.state_dim(), x.len())?;
        ExtendedCost::new((self.terminal)(x))
    }

    pub fn stage_fn(&self) -> &StageFn {
        &self.stage
    }

    pub fn terminal_fn(&self) -> &TerminalFn {
        &self.terminal
    }
}

/// Stage weight `gamma1^{gamma2^k}` of the weighted cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    gamma1: f64,
    gamma2: f64,
}

impl CostWeights {
    pub const UNIT: Self = Self {
        gamma1: 1.0,
        gamma2: 1.0,
    };

    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1.is_finite() && gamma1 > 0.0) {
            return Err(Error::Domain(format!("gamma1 must be positive, got {gamma1}")));
        }
        if !gamma2.is_finite() {
            return Err(Error::Domain(format!("gamma2 must be finite, got {gamma2}")));
        }
        Ok(Self { gamma1, gamma2 })
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn weight(&self, k: usize) -> f64 {
        let exponent = self.gamma2.powi(k as i32);
        let log_w = exponent * self.gamma1.ln();
        if log_w.abs() <= 500.0 {
            self.gamma1.powf(exponent)
        } else {
            log_w.exp()
        }
    }
}

/// `weight * value` with an infinite value absorbing and a zero value
/// contributing nothing, whatever the weight.
pub(crate) fn weighted(weight: f64, value: ExtendedCost) -> ExtendedCost {
    let v = value.value();
    if v.is_infinite() {
        ExtendedCost::INFINITY
    } else if v == 0.0 {
        ExtendedCost::ZERO
    } else {
        ExtendedCost(weight * v)
    }
}

/// A set closed under the dilation `lambda^t`.
#[derive(Clone)]
pub struct HomogeneousSet {
    membership: MembershipFn,
    t: DilationWeights,
}

impl fmt::Debug for HomogeneousSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousSet").field("t", &self.t).finish()
    }
}

impl HomogeneousSet {
    /// Spot-checks dilation closure on random samples and on the given
    /// `witnesses` (points expected to lie in the set).
    pub fn new(t: DilationWeights, membership: MembershipFn, witnesses: &[Vec<f64>]) -> Result<Self> {
        let mut sampler = SamplingOptions::default().with_seed(0x5E7).rng();
        let mut points: Vec<Vec<f64>> = witnesses.to_vec();
        points.extend((0..64).map(|_| sampler.state(t.len())));
        for x in &points {
            check_dim("homogeneous set sample", t.len(), x.len())?;
            let inside = membership(x);
            for _ in 0..4 {
                let eps = sampler.eps();
                if membership(&dilate(&t, eps, x)?) != inside {
                    return Err(Error::Construction(format!(
                        "set is not closed under dilation: membership of {x:?} changes at eps={eps}"
                    )));
                }
            }
        }
        Ok(Self { membership, t })
    }

    /// The singleton `{0}`.
    pub fn origin(t: DilationWeights) -> Result<Self> {
        let n = t.len();
        Self::new(
            t,
            Arc::new(|x: &[f64]| x.iter().all(|c| *c == 0.0)),
            &[vec![0.0; n]],
        )
    }

    /// `vect(e_i : i in indices)`: every other coordinate is exactly zero.
    pub fn span(t: DilationWeights, indices: &[usize]) -> Result<Self> {
        let n = t.len();
        if let Some(i) = indices.iter().find(|i| **i >= n) {
            return Err(Error::Domain(format!("span index {i} out of range for dimension {n}")));
        }
        let mut free = vec![false; n];
        for i in indices {
            free[*i] = true;
        }
        let witness: Vec<f64> = free.iter().map(|f| if *f { 0.7 } else { 0.0 }).collect();
        let mask = free.clone();
        Self::new(
            t,
            Arc::new(move |x: &[f64]| x.iter().zip(&mask).all(|(c, f)| *f || *c == 0.0)),
            &[witness],
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.membership)(x)
    }

    pub fn weights(&self) -> &DilationWeights {
        &self.t
    }
}

/// Symmetric positive-semidefinite weight matrices of a quadratic cost.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCostParams {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Domain(format!(
            "{name} must be a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::Domain(format!("{name} is not symmetric (max asymmetry {asym:e})")));
    }
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min_eig < -1e-10 {
        return Err(Error::Domain(format!(
            "{name} is not positive semidefinite (smallest eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// `|x|_P = x^T P x`, clamped at zero against rounding.
pub fn quadratic_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc.max(0.0)
}

impl QuadraticCostParams {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_psd("Q", &q)?;
        check_psd("R", &r)?;
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }
}

/// `l(x, u) = x^T Q x + u^T R u`, `j = 0`, degree `2 c` under the standard
/// dilation pair with common weight `c`.
pub fn quadratic_cost(params: &QuadraticCostParams, weight: f64) -> Result<CostModel> {
    let r = DilationWeights::standard(params.state_dim(), weight)?;
    let q = DilationWeights::standard(params.input_dim(), weight)?;
    quadratic_cost_on(params, &r, &q)
}

/// As [`quadratic_cost`] but for a caller-supplied pair, which must be
/// standard with one common weight for states and inputs.
pub fn quadratic_cost_on(
    params: &QuadraticCostParams,
    r: &DilationWeights,
    q: &DilationWeights,
) -> Result<CostModel> {
    check_dim("quadratic cost state weights", params.state_dim(), r.len())?;
    check_dim("quadratic cost input weights", params.input_dim(), q.len())?;
    let c = match (r.standard_weight(), q.standard_weight()) {
        (Some(a), Some(b)) if a == b => a,
        _ => {
            return Err(Error::Domain(format!(
                "quadratic_cost needs standard weights shared by states and inputs, got r={:?}, q={:?}; \
                 use signed_power_quadratic for general weights",
                r.as_slice(),
                q.as_slice()
            )))
        }
    };
    let (qm, rm) = (params.q.clone(), params.r.clone());
    CostModel::new(
        "quadratic",
        r.clone(),
        q.clone(),
        2.0 * c,
        Arc::new(move |x: &[f64], u: &[f64]| quadratic_form(&qm, x) + quadratic_form(&rm, u)),
        Arc::new(|_: &[f64]| 0.0),
    )
}

/// Quadratic cost on warped coordinates `[x_i]^{mu/(2 r_i)}`, `[u_j]^{mu/(2 q_j)}`,
/// homogeneous of degree `mu` for `(lambda^r, lambda^q)`.
pub fn signed_power_quadratic(
    params: &QuadraticCostParams,
    r: &DilationWeights,
    q: &DilationWeights,
    mu: f64,
) -> Result<CostModel> {
    check_dim("warped quadratic state weights", params.state_dim(), r.len())?;
    check_dim("warped quadratic input weights", params.input_dim(), q.len())?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("degree must be positive, got {mu}")));
    }
    let xe: Vec<f64> = r.as_slice().iter().map(|w| mu / (2.0 * w)).collect();
    let ue: Vec<f64> = q.as_slice().iter().map(|w| mu / (2.0 * w)).collect();
    let (qm, rm) = (params.q.clone(), params.r.clone());
    CostModel::new(
        "signed_power_quadratic",
        r.clone(),
        q.clone(),
        mu,
        Arc::new(move |x: &[f64], u: &[f64]| {
            let wx: Vec<f64> = x.iter().zip(&xe).map(|(v, e)| signed_power(*v, *e)).collect();
            let wu: Vec<f64> = u.iter().zip(&ue).map(|(v, e)| signed_power(*v, *e)).collect();
            quadratic_form(&qm, &wx) + quadratic_form(&rm, &wu)
        }),
        Arc::new(|_: &[f64]| 0.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostRole {
    Stage,
    Terminal,
}

/// `delta^c_S`: 0 on the set, `c` off it. Degree 0. In the stage role the
/// terminal cost is zero and vice versa.
pub fn indicator_cost(
    set: &HomogeneousSet,
    c: ExtendedCost,
    role: CostRole,
    q: &DilationWeights,
) -> Result<CostModel> {
    let s1 = set.clone();
    let s2 = set.clone();
    let cv = c.value();
    let delta = move |x: &[f64]| if s1.contains(x) { 0.0 } else { cv };
    let (stage, terminal): (StageFn, TerminalFn) = match role {
        CostRole::Stage => (
            Arc::new(move |x: &[f64], _: &[f64]| delta(x)),
            Arc::new(|_: &[f64]| 0.0),
        ),
        CostRole::Terminal => (
            Arc::new(|_: &[f64], _: &[f64]| 0.0),
            Arc::new(move |x: &[f64]| if s2.contains(x) { 0.0 } else { cv }),
        ),
    };
    CostModel::new("indicator", set.weights().clone(), q.clone(), 0.0, stage, terminal)
}

/// `l(x, u) = |u|_0`, the number of exactly nonzero input components.
pub fn l0_cost(r: &DilationWeights, q: &DilationWeights) -> Result<CostModel> {
    CostModel::new(
        "l0",
        r.clone(),
        q.clone(),
        0.0,
        Arc::new(|_: &[f64], u: &[f64]| u.iter().filter(|v| **v != 0.0).count() as f64),
        Arc::new(|_: &[f64]| 0.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// All parts share one degree; the result is their plain sum.
    SameDegree,
    /// Mixed degrees: part `i` is multiplied by `|w|^{mu - mu_i}` where `w`
    /// is an extra last state coordinate with dilation weight 1.
    WPadded,
}

/// Sums costs defined on the same pair `(r, q)`. An empty list gives the zero
/// cost of degree `empty_degree`.
pub fn combine_costs(
    r: &DilationWeights,
    q: &DilationWeights,
    parts: &[CostModel],
    mode: CombineMode,
    empty_degree: f64,
) -> Result<CostModel> {
    for p in parts {
        if p.r() != r || p.q() != q {
            return Err(Error::Domain(format!(
                "cost '{}' is defined for a different dilation pair",
                p.name()
            )));
        }
    }
    let mu = parts
        .iter()
        .map(|p| p.mu())
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))
        .unwrap_or(empty_degree);
    let stages: Vec<StageFn> = parts.iter().map(|p| p.stage.clone()).collect();
    let terminals: Vec<TerminalFn> = parts.iter().map(|p| p.terminal.clone()).collect();
    match mode {
        CombineMode::SameDegree => {
            if let Some(p) = parts.iter().find(|p| p.mu() != mu) {
                return Err(Error::Domain(format!(
                    "cost '{}' has degree {} but same-degree mode needs {mu}; use the padded mode",
                    p.name(),
                    p.mu()
                )));
            }
            CostModel::new(
                "sum",
                r.clone(),
                q.clone(),
                mu,
                Arc::new(move |x: &[f64], u: &[f64]| stages.iter().map(|s| s(x, u)).sum()),
                Arc::new(move |x: &[f64]| terminals.iter().map(|t| t(x)).sum()),
            )
        }
        CombineMode::WPadded => {
            let pads: Vec<f64> = parts.iter().map(|p| mu - p.mu()).collect();
            let pads2 = pads.clone();
            let n = r.len();
            let pad = |w: f64, e: f64| if e == 0.0 { 1.0 } else { w.abs().powf(e) };
            CostModel::new(
                "padded_sum",
                r.appended(1.0)?,
                q.clone(),
                mu,
                Arc::new(move |xw: &[f64], u: &[f64]| {
                    let (x, w) = (&xw[..n], xw[n]);
                    stages.iter().zip(&pads).map(|(s, e)| weighted(pad(w, *e), ExtendedCost(s(x, u))).value()).sum()
                }),
                Arc::new(move |xw: &[f64]| {
                    let (x, w) = (&xw[..n], xw[n]);
                    terminals.iter().zip(&pads2).map(|(t, e)| weighted(pad(w, *e), ExtendedCost(t(x))).value()).sum()
                }),
            )
        }
    }
}

/// `J_{d,g1,g2}(x, u) = sum_{k<d} g1^{g2^k} l(phi(k), u_k) + g1^{g2^d} j(phi(d))`.
pub fn eval_cost(
    sys: &SystemModel,
    cost: &CostModel,
    weights: CostWeights,
    d: usize,
    x: &[f64],
    u: &InputSequence,
) -> Result<ExtendedCost> {
    let traj = simulate(sys, x, u, d)?;
    let mut total = ExtendedCost::ZERO;
    for k in 0..d {
        let stage = cost.stage(&traj.states[k], u.get(k).unwrap())?;
        total = total + weighted(weights.weight(k), stage);
    }
    let terminal = cost.terminal(&traj.states[d])?;
    let total = total + weighted(weights.weight(d), terminal);
    ExtendedCost::new(total.value())
}

/// Per-step check of
/// `l(phi(k, lambda x, Lambda u), lambda^q(eps)^{nu^k} u_k) = eps^{mu nu^k} l(phi(k, x, u), u_k)`
/// and the terminal analogue at `k = d`.
pub fn check_cost_scaling(
    sys: &SystemModel,
    cost: &CostModel,
    x: &[f64],
    u: &InputSequence,
    eps: f64,
    d: usize,
) -> Result<ScalingCheck> {
    check_eps(eps)?;
    if d > u.len() {
        return Err(Error::Contract(format!(
            "horizon {d} exceeds input sequence length {}",
            u.len()
        )));
    }
    let spec = sys.spec();
    let nu = spec.nu();
    let scaled_u = scale_input_sequence(spec.q(), nu, eps, u)?;
    let base = simulate(sys, x, u, d)?;
    let scaled = simulate(sys, &dilate(spec.r(), eps, x)?, &scaled_u, d)?;
    let ln_eps = eps.ln();
    let mut max_residual: f64 = 0.0;
    let mut horizon = 0;
    let mut capped = false;
    for k in 0..=d {
        let power = nu.powi(k as i32);
        let log_factor = cost.mu() * power * ln_eps;
        let states_ok = scaled.states[k].iter().all(|c| c.is_finite())
            && log_factor_in_range(power * spec.r().max_weight() * ln_eps);
        if !(states_ok && log_factor_in_range(log_factor)) {
            capped = true;
            break;
        }
        let factor = log_factor.exp();
        let (lhs, rhs) = if k < d {
            (
                cost.stage(&scaled.states[k], scaled_u.get(k).unwrap())?,
                cost.stage(&base.states[k], u.get(k).unwrap())?,
            )
        } else {
            (cost.terminal(&scaled.states[k])?, cost.terminal(&base.states[k])?)
        };
        max_residual = max_residual.max(relative_residual(lhs.value(), weighted(factor, rhs).value()));
        horizon = k;
    }
    Ok(ScalingCheck {
        max_residual,
        horizon,
        requested: d,
        capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueIdentityCheck {
    /// `J_{d, eps^{-mu}, nu}(lambda^r(eps) x, Lambda^q_{nu,d}(eps) u)`
    pub scaled: ExtendedCost,
    /// `J_{d,1,1}(x, u)`
    pub base: ExtendedCost,
    pub residual: f64,
}

/// Largest horizon whose scaling factors stay inside floating range.
pub fn safe_horizon(sys: &SystemModel, mu: f64, eps: f64) -> usize {
    let spec = sys.spec();
    let scale = spec.r().max_weight().max(mu.abs()) * eps.ln().abs();
    let mut d = 0;
    while d < 64 && log_factor_in_range(spec.nu().powi(d as i32 + 1) * scale) {
        d += 1;
    }
    d
}

/// Evaluates both sides of the weighted-cost identity for an arbitrary sequence.
pub fn check_value_identity(
    sys: &SystemModel,
    cost: &CostModel,
    x: &[f64],
    u: &InputSequence,
    eps: f64,
    d: usize,
) -> Result<ValueIdentityCheck> {
    check_eps(eps)?;
    let safe = safe_horizon(sys, cost.mu(), eps);
    if d > safe {
        return Err(Error::Range(format!(
            "horizon {d} overflows floating range at eps={eps}; largest safe horizon is {safe}"
        )));
    }
    let spec = sys.spec();
    let weights = CostWeights::new((-cost.mu() * eps.ln()).exp(), spec.nu())?;
    let scaled_u = scale_input_sequence(spec.q(), spec.nu(), eps, u)?;
    let scaled = eval_cost(sys, cost, weights, d, &dilate(spec.r(), eps, x)?, &scaled_u)?;
    let base = eval_cost(sys, cost, CostWeights::UNIT, d, x, u)?;
    Ok(ValueIdentityCheck {
        scaled,
        base,
        residual: relative_residual(scaled.value(), base.value()),
    })
}

/// Outcome of a randomized cost-degree check.
#[derive(Debug, Clone, PartialEq)]
pub struct CostHomogeneityReport {
    pub samples: usize,
    pub tol: f64,
    pub max_stage_residual: f64,
    pub max_terminal_residual: f64,
    /// `(x, u, eps)` where the larger residual was observed.
    pub worst: Option<(Vec<f64>, Vec<f64>, f64)>,
    pub passed: bool,
}

impl fmt::Display for CostHomogeneityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage residual {:.3e}, terminal residual {:.3e} over {} samples (tol {:.1e})",
            self.max_stage_residual, self.max_terminal_residual, self.samples, self.tol
        )?;
        if let (false, Some((x, u, eps))) = (self.passed, &self.worst) {
            write!(f, "; worst at x={x:?}, u={u:?}, eps={eps}")?;
        }
        Ok(())
    }
}

/// Shared sampling loop. `accept(lhs, base, eps)` returns the residual of one sample.
fn sample_cost_residuals(
    cost: &CostModel,
    r: &DilationWeights,
    q: &DilationWeights,
    opts: &SamplingOptions,
    tol: f64,
    residual: impl Fn(f64, f64, f64) -> f64,
) -> Result<CostHomogeneityReport> {
    check_dim("cost state weights", cost.state_dim(), r.len())?;
    check_dim("cost input weights", cost.input_dim(), q.len())?;
    if opts.samples == 0 {
        return Err(Error::Contract("at least one sample is required".into()));
    }
    let mut sampler = opts.rng();
    let mut stage_max: f64 = 0.0;
    let mut terminal_max: f64 = 0.0;
    let mut worst = None;
    let mut worst_value = -1.0;
    for _ in 0..opts.samples {
        let x = sampler.state(r.len());
        let u = sampler.input(q.len());
        let eps = sampler.eps();
        let (dx, du) = (dilate(r, eps, &x)?, dilate(q, eps, &u)?);
        let s = residual(cost.stage(&dx, &du)?.value(), cost.stage(&x, &u)?.value(), eps);
        let t = residual(cost.terminal(&dx)?.value(), cost.terminal(&x)?.value(), eps);
        stage_max = stage_max.max(s);
        terminal_max = terminal_max.max(t);
        if s.max(t) > worst_value {
            worst_value = s.max(t);
            worst = Some((x, u, eps));
        }
    }
    Ok(CostHomogeneityReport {
        samples: opts.samples,
        tol,
        max_stage_residual: stage_max,
        max_terminal_residual: terminal_max,
        worst,
        passed: stage_max.max(terminal_max) <= tol,
    })
}

/// Checks `l(lambda^r x, lambda^q u) = eps^mu l(x, u)` and `j(lambda^r x) = eps^mu j(x)`
/// for a given pair, which need not be the one the cost was built on.
pub fn verify_cost_homogeneity(
    cost: &CostModel,
    r: &DilationWeights,
    q: &DilationWeights,
    opts: &SamplingOptions,
    tol: f64,
) -> Result<CostHomogeneityReport> {
    let mu = cost.mu();
    sample_cost_residuals(cost, r, q, opts, tol, |lhs, base, eps| {
        relative_residual(lhs, weighted(eps.powf(mu), ExtendedCost(base)).value())
    })
}

/// Weaker check: the scaled cost lies between `min` and `max` of
/// `{eps^mu, eps^{mu nu}}` times the unscaled cost. Residual is the relative
/// distance outside that bracket.
pub fn verify_cost_degree_bracket(
    cost: &CostModel,
    r: &DilationWeights,
    q: &DilationWeights,
    nu: f64,
    opts: &SamplingOptions,
    tol: f64,
) -> Result<CostHomogeneityReport> {
    let mu = cost.mu();
    sample_cost_residuals(cost, r, q, opts, tol, |lhs, base, eps| {
        let a = weighted(eps.powf(mu), ExtendedCost(base)).value();
        let b = weighted(eps.powf(mu * nu), ExtendedCost(base)).value();
        let (lo, hi) = (a.min(b), a.max(b));
        if lhs >= lo && lhs <= hi {
            0.0
        } else if lhs < lo {
            relative_residual(lhs, lo)
        } else {
            relative_residual(lhs, hi)
        }
    })
}
