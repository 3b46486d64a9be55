//! Value iteration restricted to a compact manifold, extended to the whole
//! state space by ray scaling. Each iterate is a pair of node tables whose
//! extensions bound the classical iterate from below and above.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::costs::{quadratic_form, weighted, CostModel, ExtendedCost, TerminalFn};
use crate::dilation::{dilate_power, DilationWeights};
use crate::error::{check_dim, Error, Result};
use crate::manifold::{interpolate_unchecked, RayDecomposition, RayManifold};
use crate::relative_residual;
use crate::sampling::SamplingOptions;
use crate::systems::SystemModel;

/// Finite set of quantized inputs. Always contains the zero input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    inputs: Vec<Vec<f64>>,
}

impl InputGrid {
    pub fn from_values(inputs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match inputs.first() {
            Some(u) if !u.is_empty() => u.len(),
            _ => return Err(Error::Domain("input grid must be nonempty".into())),
        };
        for u in &inputs {
            check_dim("input grid entry", dim, u.len())?;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("input grid entry {u:?} is not finite")));
            }
        }
        if !inputs.iter().any(|u| u.iter().all(|v| *v == 0.0)) {
            return Err(Error::Domain("input grid must contain the zero input".into()));
        }
        Ok(Self { inputs })
    }

    /// Tensor product of `count` equally spaced values per dimension over
    /// `[min_j, max_j]`. Zero is snapped in (or inserted) when the interval
    /// contains it.
    pub fn uniform(min: &[f64], max: &[f64], count: usize) -> Result<Self> {
        check_dim("input grid bounds", min.len(), max.len())?;
        if min.is_empty() {
            return Err(Error::Domain("input grid needs at least one dimension".into()));
        }
        if count == 0 {
            return Err(Error::Domain("input grid count must be positive".into()));
        }
        let mut axes = Vec::with_capacity(min.len());
        for (lo, hi) in min.iter().zip(max) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && *lo <= 0.0 && *hi >= 0.0) {
                return Err(Error::Domain(format!(
                    "input interval [{lo}, {hi}] must be finite and contain 0"
                )));
            }
            let mut axis: Vec<f64> = if count == 1 {
                vec![0.0]
            } else {
                (0..count)
                    .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                    .collect()
            };
            let snap = 1e-12 * (hi - lo).max(1.0);
            for v in axis.iter_mut() {
                if v.abs() <= snap {
                    *v = 0.0;
                }
            }
            if !axis.contains(&0.0) {
                let pos = axis.partition_point(|v| *v < 0.0);
                axis.insert(pos, 0.0);
            }
            axes.push(axis);
        }
        let mut inputs = vec![Vec::new()];
        for axis in &axes {
            inputs = inputs
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        Self::from_values(inputs)
    }

    /// Every entry mapped through `lambda^q(eps)^c`.
    pub fn scaled(&self, q: &DilationWeights, eps: f64, c: f64) -> Result<Self> {
        let inputs = self
            .inputs
            .iter()
            .map(|u| dilate_power(q, eps, c, u))
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(inputs)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn as_slice(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.iter().map(Vec::as_slice)
    }

    /// Smallest and largest value per input dimension.
    pub fn range(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for u in &self.inputs {
            for j in 0..d {
                lo[j] = lo[j].min(u[j]);
                hi[j] = hi[j].max(u[j]);
            }
        }
        (lo, hi)
    }
}

/// Initial value function `V_0`, homogeneous of degree `mu`.
#[derive(Clone)]
pub struct InitialValue {
    name: String,
    eval: TerminalFn,
    mu: f64,
}

impl fmt::Debug for InitialValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialValue")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .finish()
    }
}

impl InitialValue {
    pub fn new(name: impl Into<String>, mu: f64, eval: TerminalFn) -> Self {
        Self {
            name: name.into(),
            eval,
            mu,
        }
    }

    /// `x -> x^T P x`, of degree `mu` under the intended dilation.
    pub fn quadratic(p: DMatrix<f64>, mu: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::Domain("P must be square".into()));
        }
        Ok(Self::new("quadratic", mu, Arc::new(move |x: &[f64]| quadratic_form(&p, x))))
    }

    pub fn zero(mu: f64) -> Self {
        Self::new("zero", mu, Arc::new(|_: &[f64]| 0.0))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eval(&self, x: &[f64]) -> Result<ExtendedCost> {
        ExtendedCost::new((self.eval)(x))
    }

    pub fn eval_fn(&self) -> &TerminalFn {
        &self.eval
    }

    /// Checks `V_0(lambda^r(eps) x) = eps^mu V_0(x)` on random samples.
    pub fn check_degree(&self, r: &DilationWeights, tol: f64) -> Result<f64> {
        let mut sampler = SamplingOptions::default().with_seed(0x7A10).rng();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = sampler.state(r.len());
            let eps = sampler.eps();
            let lhs = self.eval(&crate::dilation::dilate(r, eps, &x)?)?;
            let rhs = weighted(eps.powf(self.mu), self.eval(&x)?);
            worst = worst.max(relative_residual(lhs.value(), rhs.value()));
        }
        if worst > tol {
            return Err(Error::Construction(format!(
                "initial value '{}' is not homogeneous of degree {} (residual {worst:.3e})",
                self.name, self.mu
            )));
        }
        Ok(worst)
    }
}

/// Validated settings for a value-iteration run.
#[derive(Debug, Clone)]
pub struct VIConfig {
    pub inputs: InputGrid,
    pub iterations: usize,
    pub v0: InitialValue,
}

impl VIConfig {
    pub fn new(inputs: InputGrid, iterations: usize, v0: InitialValue, r: &DilationWeights) -> Result<Self> {
        v0.check_degree(r, 1e-9)?;
        Ok(Self {
            inputs,
            iterations,
            v0,
        })
    }
}

/// Lower and upper node tables at one iteration, queryable anywhere.
#[derive(Debug, Clone)]
pub struct ValueEnvelope {
    iteration: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    manifold: Arc<dyn RayManifold>,
    r: DilationWeights,
    nu: f64,
    mu: f64,
}

/// Both envelope values at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeValue {
    pub lower: ExtendedCost,
    pub upper: ExtendedCost,
}

impl EnvelopeValue {
    /// Midpoint of the two bounds.
    pub fn mid(&self) -> ExtendedCost {
        let (a, b) = (self.lower.value(), self.upper.value());
        if a.is_infinite() || b.is_infinite() {
            ExtendedCost::INFINITY
        } else {
            ExtendedCost::new(0.5 * (a + b)).unwrap_or(ExtendedCost::INFINITY)
        }
    }
}

impl ValueEnvelope {
    /// Iteration-0 envelope: both tables sample `V_0` at the nodes.
    pub fn initial(
        manifold: Arc<dyn RayManifold>,
        sys: &SystemModel,
        mu: f64,
        v0: &InitialValue,
    ) -> Result<Self> {
        check_dim("manifold dimension", sys.state_dim(), manifold.state_dim())?;
        if v0.mu() != mu {
            return Err(Error::Domain(format!(
                "initial value has degree {} but the cost has degree {mu}",
                v0.mu()
            )));
        }
        let table = (0..manifold.node_count())
            .map(|i| v0.eval(manifold.node(i)).map(ExtendedCost::value))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(manifold, sys.spec().r().clone(), sys.spec().nu(), mu, 0, table.clone(), table)
    }

    pub fn from_tables(
        manifold: Arc<dyn RayManifold>,
        r: DilationWeights,
        nu: f64,
        mu: f64,
        iteration: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        check_dim("lower table", manifold.node_count(), lower.len())?;
        check_dim("upper table", manifold.node_count(), upper.len())?;
        check_dim("envelope weights", manifold.state_dim(), r.len())?;
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || *lo < 0.0 || lo > hi {
                return Err(Error::Contract(format!(
                    "envelope order violated at node {i}: lower {lo}, upper {hi}"
                )));
            }
        }
        Ok(Self {
            iteration,
            lower,
            upper,
            manifold,
            r,
            nu,
            mu,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn manifold(&self) -> &Arc<dyn RayManifold> {
        &self.manifold
    }

    pub fn r(&self) -> &DilationWeights {
        &self.r
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `(min, max)` of `{eps^mu, eps^{mu nu^i}}` for `ln eps = log_eps`.
    pub fn scale_factors(&self, log_eps: f64) -> (f64, f64) {
        let a = self.mu * log_eps;
        let b = self.mu * self.nu.powi(self.iteration as i32) * log_eps;
        (a.min(b).exp(), a.max(b).exp())
    }

    fn value_at(&self, d: &RayDecomposition) -> EnvelopeValue {
        let (lo_f, hi_f) = self.scale_factors(d.log_eps);
        let lo = interpolate_unchecked(&self.lower, d);
        let hi = interpolate_unchecked(&self.upper, d);
        EnvelopeValue {
            lower: weighted(lo_f, ExtendedCost::new(lo).unwrap_or(ExtendedCost::INFINITY)),
            upper: weighted(hi_f, ExtendedCost::new(hi).unwrap_or(ExtendedCost::INFINITY)),
        }
    }

    pub fn query(&self, x: &[f64]) -> Result<EnvelopeValue> {
        check_dim("envelope query", self.r.len(), x.len())?;
        if x.iter().all(|c| *c == 0.0) {
            return Ok(EnvelopeValue {
                lower: ExtendedCost::ZERO,
                upper: ExtendedCost::ZERO,
            });
        }
        if x.iter().any(|c| c.is_nan()) {
            return Err(Error::NotANumber(format!("envelope query at {x:?}")));
        }
        let d = self.manifold.decompose(&self.r, x)?;
        Ok(self.value_at(&d))
    }

    pub fn query_lower(&self, x: &[f64]) -> Result<ExtendedCost> {
        Ok(self.query(x)?.lower)
    }

    pub fn query_upper(&self, x: &[f64]) -> Result<ExtendedCost> {
        Ok(self.query(x)?.upper)
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStats {
    pub iteration: usize,
    pub elapsed: Duration,
    pub nodes: usize,
    pub inputs: usize,
    pub min_lower: f64,
    pub max_lower: f64,
    pub min_upper: f64,
    pub max_upper: f64,
    /// Arc length of the coarsest manifold cell, a proxy for interpolation error.
    pub cell_size: f64,
}

struct NodeBackup {
    lower: f64,
    upper: f64,
}

fn nan_error(what: &str, x: &[f64], u: &[f64]) -> Error {
    Error::NotANumber(format!("{what} is NaN at x={x:?}, u={u:?}"))
}

/// One Bellman sweep over the manifold nodes, separately for each table.
/// Successor values are read from the current envelope by ray projection.
pub fn hom_vi_iterate(
    env: &ValueEnvelope,
    sys: &SystemModel,
    cost: &CostModel,
    inputs: &InputGrid,
) -> Result<(ValueEnvelope, SweepStats)> {
    let start = Instant::now();
    let manifold = env.manifold.clone();
    check_dim("system dimension", manifold.state_dim(), sys.state_dim())?;
    check_dim("cost dimension", sys.state_dim(), cost.state_dim())?;
    check_dim("input grid dimension", sys.input_dim(), inputs.input_dim())?;
    let backups: Vec<NodeBackup> = (0..manifold.node_count())
        .into_par_iter()
        .map(|idx| {
            let x = manifold.node(idx);
            let mut best_lo = f64::INFINITY;
            let mut best_hi = f64::INFINITY;
            for u in inputs.iter() {
                let stage = cost.stage(x, u)?.value();
                let y = sys.step(x, u)?;
                if y.iter().any(|c| c.is_nan()) {
                    return Err(nan_error("successor", x, u));
                }
                let next = env.query(&y)?;
                let lo = stage + next.lower.value();
                let hi = stage + next.upper.value();
                if lo.is_nan() || hi.is_nan() {
                    return Err(nan_error("backup objective", x, u));
                }
                if lo < best_lo {
                    best_lo = lo;
                }
                if hi < best_hi {
                    best_hi = hi;
                }
            }
            Ok(NodeBackup {
                lower: best_lo,
                upper: best_hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lower: Vec<f64> = backups.iter().map(|b| b.lower).collect();
    let upper: Vec<f64> = backups.iter().map(|b| b.upper).collect();
    let minmax = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
    };
    let (min_lower, max_lower) = minmax(&lower);
    let (min_upper, max_upper) = minmax(&upper);
    let next = ValueEnvelope::from_tables(
        manifold.clone(),
        env.r.clone(),
        env.nu,
        env.mu,
        env.iteration + 1,
        lower,
        upper,
    )?;
    let stats = SweepStats {
        iteration: next.iteration,
        elapsed: start.elapsed(),
        nodes: manifold.node_count(),
        inputs: inputs.len(),
        min_lower,
        max_lower,
        min_upper,
        max_upper,
        cell_size: manifold.cell_size(),
    };
    log::info!(
        "sweep {}: {:.3}s, lower in [{:.6e}, {:.6e}], upper in [{:.6e}, {:.6e}]",
        stats.iteration,
        stats.elapsed.as_secs_f64(),
        min_lower,
        max_lower,
        min_upper,
        max_upper
    );
    Ok((next, stats))
}

/// Runs `iterations` sweeps from the `V_0` envelope. Index `i` of the result
/// holds iteration `i`.
pub fn run_hom_vi(
    manifold: Arc<dyn RayManifold>,
    sys: &SystemModel,
    cost: &CostModel,
    config: &VIConfig,
) -> Result<(Vec<ValueEnvelope>, Vec<SweepStats>)> {
    let mut envs = vec![ValueEnvelope::initial(manifold, sys, cost.mu(), &config.v0)?];
    let mut stats = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (next, s) = hom_vi_iterate(envs.last().unwrap(), sys, cost, &config.inputs)?;
        envs.push(next);
        stats.push(s);
    }
    Ok((envs, stats))
}

/// Outcome of comparing an envelope against a reference value function.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub samples: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Largest `(lower - V) / (1 + |V|)`; positive values are violations.
    pub max_lower_excess: f64,
    /// Largest `(V - upper) / (1 + |V|)`; positive values are violations.
    pub max_upper_excess: f64,
    /// Largest `(upper - lower) / (1 + |V|)`.
    pub max_gap: f64,
    pub violating_states: Vec<Vec<f64>>,
}

impl BoundsReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.violating_states.len() as f64 / self.samples as f64
        }
    }
}

/// Counts states where `lower <= V <= upper` fails by more than `tol (1 + |V|)`.
pub fn check_bounds(
    env: &ValueEnvelope,
    reference: &dyn Fn(&[f64]) -> Result<f64>,
    states: &[Vec<f64>],
    tol: f64,
) -> Result<BoundsReport> {
    let mut rep = BoundsReport {
        samples: states.len(),
        lower_violations: 0,
        upper_violations: 0,
        max_lower_excess: f64::NEG_INFINITY,
        max_upper_excess: f64::NEG_INFINITY,
        max_gap: 0.0,
        violating_states: Vec::new(),
    };
    for x in states {
        let v = reference(x)?;
        let e = env.query(x)?;
        let scale = 1.0 + v.abs();
        let lo_ex = excess(e.lower.value(), v) / scale;
        let hi_ex = excess(v, e.upper.value()) / scale;
        rep.max_lower_excess = rep.max_lower_excess.max(lo_ex);
        rep.max_upper_excess = rep.max_upper_excess.max(hi_ex);
        let gap = excess(e.upper.value(), e.lower.value()) / scale;
        if gap.is_finite() {
            rep.max_gap = rep.max_gap.max(gap);
        }
        let lo_bad = lo_ex > tol;
        let hi_bad = hi_ex > tol;
        rep.lower_violations += lo_bad as usize;
        rep.upper_violations += hi_bad as usize;
        if lo_bad || hi_bad {
            rep.violating_states.push(x.clone());
        }
    }
    Ok(rep)
}

/// `a - b` with equal infinities giving 0.
fn excess(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyMode {
    #[default]
    Mid,
    Lower,
    Upper,
}

/// `argmin_u l(x, u) + V_hat(f(x, u))` over the input grid, smallest index on ties.
/// Returns the input index and the minimal objective.
pub fn extract_policy(
    env: &ValueEnvelope,
    sys: &SystemModel,
    cost: &CostModel,
    inputs: &InputGrid,
    x: &[f64],
    mode: PolicyMode,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, u) in inputs.iter().enumerate() {
        let stage = cost.stage(x, u)?.value();
        let v = env.query(&sys.step(x, u)?)?;
        let tail = match mode {
            PolicyMode::Mid => v.mid(),
            PolicyMode::Lower => v.lower,
            PolicyMode::Upper => v.upper,
        };
        let obj = stage + tail.value();
        if obj.is_nan() {
            return Err(nan_error("policy objective", x, u));
        }
        if obj.is_finite() && best.is_none_or(|(_, b)| obj < b) {
            best = Some((k, obj));
        }
    }
    best.ok_or_else(|| Error::NoFeasibleInput(x.to_vec()))
}
