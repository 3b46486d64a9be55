//! Classical value iteration on a rectangular state grid, and an exhaustive
//! finite-horizon search used as an independent oracle.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use crate::costs::{weighted, CostModel, CostWeights, ExtendedCost};
use crate::dilation::{dilate, DilationWeights, InputSequence};
use crate::error::{check_dim, Error, Result};
use crate::homvi::{InitialValue, InputGrid};
use crate::manifold::format_value;
use crate::relative_residual;
use crate::systems::SystemModel;

/// One coordinate of a [`StateGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    /// `count >= 2` equally spaced nodes on `[lo, hi]`.
    Free { lo: f64, hi: f64, count: usize },
    /// Pinned coordinate.
    Fixed(f64),
}

/// Regular lattice over a box, with optionally pinned coordinates. Nodes are
/// ordered row-major: the last free coordinate varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    axes: Vec<Axis>,
    free: Vec<usize>,
    node_count: usize,
}

impl StateGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Domain("state grid needs at least one axis".into()));
        }
        let mut free = Vec::new();
        let mut node_count = 1usize;
        for (i, a) in axes.iter().enumerate() {
            match *a {
                Axis::Free { lo, hi, count } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) || count < 2 {
                        return Err(Error::Domain(format!(
                            "axis {i} needs lo < hi and at least 2 nodes, got [{lo}, {hi}] x {count}"
                        )));
                    }
                    free.push(i);
                    node_count = node_count.checked_mul(count).ok_or_else(|| {
                        Error::Domain("state grid has too many nodes".into())
                    })?;
                }
                Axis::Fixed(v) => {
                    if !v.is_finite() {
                        return Err(Error::Domain(format!("axis {i} pinned to non-finite {v}")));
                    }
                }
            }
        }
        Ok(Self {
            axes,
            free,
            node_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    fn spacing(lo: f64, hi: f64, count: usize) -> f64 {
        (hi - lo) / (count - 1) as f64
    }

    pub fn node(&self, mut index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.axes.len()];
        for (i, a) in self.axes.iter().enumerate().rev() {
            x[i] = match *a {
                Axis::Fixed(v) => v,
                Axis::Free { lo, hi, count } => {
                    let k = index % count;
                    index /= count;
                    if k == count - 1 {
                        hi
                    } else {
                        lo + k as f64 * Self::spacing(lo, hi, count)
                    }
                }
            };
        }
        x
    }

    /// Whether `x` lies in the box (free coordinates within bounds, pinned
    /// coordinates equal to their value up to rounding).
    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.iter().zip(x).all(|(a, v)| match *a {
            Axis::Fixed(p) => (v - p).abs() <= 1e-12 * p.abs().max(1.0),
            Axis::Free { lo, hi, .. } => {
                let slack = 1e-12 * (hi - lo);
                *v >= lo - slack && *v <= hi + slack
            }
        })
    }

    /// Nearest point of the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(x)
            .map(|(a, v)| match *a {
                Axis::Fixed(p) => p,
                Axis::Free { lo, hi, .. } => v.clamp(lo, hi),
            })
            .collect()
    }

    /// Multilinear interpolation weights of a point inside the box.
    pub fn weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        let mut stride = 1usize;
        for &i in self.free.iter().rev() {
            let Axis::Free { lo, hi, count } = self.axes[i] else { unreachable!() };
            let f = ((x[i] - lo) / Self::spacing(lo, hi, count)).clamp(0.0, (count - 1) as f64);
            let k0 = (f.floor() as usize).min(count - 2);
            let t = f - k0 as f64;
            let mut next = Vec::with_capacity(out.len() * 2);
            for (idx, w) in &out {
                if 1.0 - t != 0.0 {
                    next.push((idx + k0 * stride, w * (1.0 - t)));
                }
                if t != 0.0 {
                    next.push((idx + (k0 + 1) * stride, w * t));
                }
            }
            out = next;
            stride *= count;
        }
        out
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        check_dim("grid value table", self.node_count, values.len())?;
        check_dim("grid query", self.dim(), x.len())?;
        Ok(self.weights(x).iter().map(|(i, w)| w * values[*i]).sum())
    }
}

/// How a successor outside the grid box is valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfDomain {
    /// Interpolate at the nearest box point.
    Clamp,
    /// Evaluate the closed-form `V_0` at the exact successor.
    #[default]
    V0Extend,
    /// `+inf`.
    Penalty,
}

/// Values and greedy policy on the grid nodes at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValueTable {
    pub iteration: usize,
    pub values: Vec<f64>,
    /// Minimising input index per node; `None` at iteration 0 and where every
    /// input has infinite cost.
    pub policy: Vec<Option<usize>>,
    pub out_of_domain: OutOfDomain,
    /// Fraction of (node, input) pairs whose successor left the box.
    pub out_of_domain_fraction: f64,
}

impl GridValueTable {
    pub fn initial(grid: &StateGrid, v0: &InitialValue, mode: OutOfDomain) -> Result<Self> {
        let values = (0..grid.node_count())
            .map(|i| v0.eval(&grid.node(i)).map(ExtendedCost::value))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            iteration: 0,
            policy: vec![None; values.len()],
            values,
            out_of_domain: mode,
            out_of_domain_fraction: 0.0,
        })
    }
}

/// `V_{i+1}(x) = min_u l(x, u) + V_i(f(x, u))` at every node.
pub fn classic_vi_iterate(
    table: &GridValueTable,
    grid: &StateGrid,
    sys: &SystemModel,
    cost: &CostModel,
    inputs: &InputGrid,
    v0: &InitialValue,
) -> Result<GridValueTable> {
    check_dim("grid table", grid.node_count(), table.values.len())?;
    check_dim("grid dimension", sys.state_dim(), grid.dim())?;
    let mode = table.out_of_domain;
    let rows: Vec<(f64, Option<usize>, usize)> = (0..grid.node_count())
        .into_par_iter()
        .map(|idx| {
            let x = grid.node(idx);
            let mut best = (f64::INFINITY, None);
            let mut outside = 0usize;
            for (k, u) in inputs.iter().enumerate() {
                let stage = cost.stage(&x, u)?.value();
                let y = sys.step(&x, u)?;
                let tail = if grid.contains(&y) {
                    grid.interpolate(&table.values, &y)?
                } else {
                    outside += 1;
                    match mode {
                        OutOfDomain::Clamp => grid.interpolate(&table.values, &grid.clamp(&y))?,
                        OutOfDomain::V0Extend => v0.eval(&y)?.value(),
                        OutOfDomain::Penalty => f64::INFINITY,
                    }
                };
                let obj = stage + tail;
                if obj.is_nan() {
                    return Err(Error::NotANumber(format!("backup objective at x={x:?}, u={u:?}")));
                }
                if obj < best.0 {
                    best = (obj, Some(k));
                }
            }
            Ok((best.0, best.1, outside))
        })
        .collect::<Result<Vec<_>>>()?;
    let outside: usize = rows.iter().map(|r| r.2).sum();
    Ok(GridValueTable {
        iteration: table.iteration + 1,
        values: rows.iter().map(|r| r.0).collect(),
        policy: rows.iter().map(|r| r.1).collect(),
        out_of_domain: mode,
        out_of_domain_fraction: outside as f64 / (grid.node_count() * inputs.len()) as f64,
    })
}

/// Tables for iterations `0..=iterations`.
pub fn run_classic_vi(
    grid: &StateGrid,
    sys: &SystemModel,
    cost: &CostModel,
    inputs: &InputGrid,
    v0: &InitialValue,
    mode: OutOfDomain,
    iterations: usize,
) -> Result<Vec<GridValueTable>> {
    let mut tables = vec![GridValueTable::initial(grid, v0, mode)?];
    for _ in 0..iterations {
        let next = classic_vi_iterate(tables.last().unwrap(), grid, sys, cost, inputs, v0)?;
        log::info!(
            "classic sweep {}: {:.2}% of successors left the grid",
            next.iteration,
            100.0 * next.out_of_domain_fraction
        );
        tables.push(next);
    }
    Ok(tables)
}

/// Writes `x1,...,xn,value,policy_input` rows in node order.
pub fn write_grid_value_table(path: &Path, grid: &StateGrid, table: &GridValueTable, inputs: &InputGrid) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    if inputs.input_dim() == 1 {
        header.push("policy_input".into());
    } else {
        header.extend((1..=inputs.input_dim()).map(|j| format!("policy_input{j}")));
    }
    w.write_record(&header)?;
    for idx in 0..grid.node_count() {
        let mut row: Vec<String> = grid.node(idx).into_iter().map(format_value).collect();
        row.push(format_value(table.values[idx]));
        match table.policy[idx] {
            Some(k) => row.extend(inputs.get(k).iter().map(|v| format_value(*v))),
            None => row.extend((0..inputs.input_dim()).map(|_| "nan".to_string())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Exhaustive search result: the minimum and the first minimising sequence in
/// lexicographic input-index order (absent when every sequence costs `+inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub value: ExtendedCost,
    pub indices: Option<Vec<usize>>,
    pub sequence: Option<InputSequence>,
}

/// Default enumeration budget.
pub const BRUTE_FORCE_BUDGET: usize = 1_000_000;

/// Minimises `sum_k w_k l(phi(k), u_k) + w_d terminal(phi(d))` over all
/// sequences with `u_k` drawn from `step_inputs[k]`.
pub fn brute_force_search(
    sys: &SystemModel,
    cost: &CostModel,
    x: &[f64],
    step_inputs: &[&InputGrid],
    weights: CostWeights,
    terminal: &dyn Fn(&[f64]) -> Result<ExtendedCost>,
    budget: usize,
) -> Result<BruteForceResult> {
    check_dim("brute-force state", sys.state_dim(), x.len())?;
    let needed: f64 = step_inputs.iter().map(|g| g.len() as f64).product();
    if needed > budget as f64 {
        return Err(Error::Budget { needed, budget });
    }
    let d = step_inputs.len();
    let step_weights: Vec<f64> = (0..=d).map(|k| weights.weight(k)).collect();
    let mut best = BruteForceResult {
        value: ExtendedCost::INFINITY,
        indices: None,
        sequence: None,
    };
    let mut path = Vec::with_capacity(d);
    search(sys, cost, x, step_inputs, &step_weights, terminal, ExtendedCost::ZERO, &mut path, &mut best)?;
    if let Some(idx) = &best.indices {
        best.sequence = Some(InputSequence::new(
            idx.iter().enumerate().map(|(k, i)| step_inputs[k].get(*i).to_vec()).collect(),
        )?);
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn search(
    sys: &SystemModel,
    cost: &CostModel,
    x: &[f64],
    step_inputs: &[&InputGrid],
    w: &[f64],
    terminal: &dyn Fn(&[f64]) -> Result<ExtendedCost>,
    acc: ExtendedCost,
    path: &mut Vec<usize>,
    best: &mut BruteForceResult,
) -> Result<()> {
    let k = path.len();
    if k == step_inputs.len() {
        let total = acc + weighted(w[k], terminal(x)?);
        if total.value().is_finite() && (best.indices.is_none() || total < best.value) {
            best.value = total;
            best.indices = Some(path.clone());
        }
        return Ok(());
    }
    for (i, u) in step_inputs[k].iter().enumerate() {
        let stage = weighted(w[k], cost.stage(x, u)?);
        let next = sys.step(x, u)?;
        path.push(i);
        search(sys, cost, &next, step_inputs, w, terminal, acc + stage, path, best)?;
        path.pop();
    }
    Ok(())
}

/// `min over U^horizon` of `sum_k l(phi(k), u_k) + V_0(phi(horizon))`.
pub fn brute_force_value(
    sys: &SystemModel,
    cost: &CostModel,
    x: &[f64],
    inputs: &InputGrid,
    horizon: usize,
    v0: &InitialValue,
) -> Result<BruteForceResult> {
    let grids = vec![inputs; horizon];
    brute_force_search(sys, cost, x, &grids, CostWeights::UNIT, &|y| v0.eval(y), BRUTE_FORCE_BUDGET)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayScalingProbe {
    /// Optimum at `x` over the base grid.
    pub base: ExtendedCost,
    /// Optimum at `lambda^r(eps) x` over the scaled per-step grids.
    pub scaled: ExtendedCost,
    /// `eps^mu * base`.
    pub expected: ExtendedCost,
    pub residual: f64,
}

/// Compares the unit-weight optimum at `lambda^r(eps) x`, searched over the
/// grids `lambda^q(eps)^{nu^k} U`, with `eps^mu` times the optimum at `x`
/// over `U`. Requires `nu = 1` or `mu = 0`.
pub fn ray_scaling_probe(
    sys: &SystemModel,
    cost: &CostModel,
    v0: &InitialValue,
    x: &[f64],
    eps: f64,
    inputs: &InputGrid,
    horizon: usize,
) -> Result<RayScalingProbe> {
    let nu = sys.spec().nu();
    let mu = cost.mu();
    if nu != 1.0 && mu != 0.0 {
        return Err(Error::Domain(format!(
            "proportionality along rays needs nu = 1 or mu = 0, got nu = {nu}, mu = {mu}"
        )));
    }
    let base = brute_force_value(sys, cost, x, inputs, horizon, v0)?.value;
    let scaled_grids = (0..horizon)
        .map(|k| inputs.scaled(sys.spec().q(), eps, nu.powi(k as i32)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&InputGrid> = scaled_grids.iter().collect();
    let scaled = brute_force_search(
        sys,
        cost,
        &dilate(sys.spec().r(), eps, x)?,
        &refs,
        CostWeights::UNIT,
        &|y| v0.eval(y),
        BRUTE_FORCE_BUDGET,
    )?
    .value;
    let expected = weighted(eps.powf(mu), base);
    Ok(RayScalingProbe {
        base,
        scaled,
        expected,
        residual: relative_residual(scaled.value(), expected.value()),
    })
}

/// One-dimensional grid toy `x+ = clamp(x + u, -3, 3)` whose successors from
/// integer nodes with inputs in `{-1, 0, 1}` are again integer nodes.
pub fn saturated_integrator() -> Result<SystemModel> {
    use std::sync::Arc;
    let spec = crate::dilation::DilationSpec::new(
        DilationWeights::standard(1, 1.0)?,
        DilationWeights::standard(1, 1.0)?,
        1.0,
        2.0,
    )?;
    SystemModel::new(
        "saturated_integrator",
        spec,
        Arc::new(|x: &[f64], u: &[f64]| vec![(x[0] + u[0]).clamp(-3.0, 3.0)]),
    )
}
