//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so every line is printed; exits nonzero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use homdp::casestudy::{
    cmd_compare, cmd_riccati, cmd_scale_demo, CaseStudy, CostKind, OutOfDomainKind, RunConfig,
};
use homdp::classic_vi::{
    brute_force_value, ray_scaling_probe, run_classic_vi, saturated_integrator, Axis,
    OutOfDomain, StateGrid,
};
use homdp::costs::{
    check_value_identity, indicator_cost, quadratic_cost, quadratic_cost_on, signed_power_quadratic,
    CostModel, CostRole, ExtendedCost, HomogeneousSet, QuadraticCostParams,
};
use homdp::dilation::{DilationSpec, DilationWeights, InputSequence};
use homdp::homvi::{run_hom_vi, InitialValue, InputGrid, VIConfig};
use homdp::manifold::{ManifoldGrid, RayManifold};
use homdp::riccati::reference_terminal_matrix;
use homdp::sampling::SamplingOptions;
use homdp::systems::{
    check_solution_scaling, component_sum_step, extend_system, linear_system, van_der_pol_components,
    van_der_pol_extended, verify_dynamics_homogeneity, ExtensionMode, SystemModel,
};
use homdp::Result;
use nalgebra::DMatrix;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn criterion(n: usize, title: &str, budget: Duration, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(o) => (o.passed && elapsed <= budget, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let over = if elapsed > budget {
        format!(", over the {budget:?} budget")
    } else {
        String::new()
    };
    println!(
        "{} criterion {n:>2} ({title}): {detail} [{elapsed:.2?}{over}]",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn vdp() -> SystemModel {
    van_der_pol_extended(1.0, 1.0, 1.0).unwrap()
}

fn fractional_vdp() -> Result<SystemModel> {
    let r = DilationWeights::standard(2, 1.0)?;
    let q = DilationWeights::new(vec![3.0])?;
    extend_system(&van_der_pol_components(1.0, 1.0, 1.0)?, &r, &q, None, ExtensionMode::FractionalWeight)
}

/// `x'Qx + R |u|^{2/3}`: the case-study weights on signed powers, which makes
/// the stage cost homogeneous of degree 2 for `r = (1, 1, 1)`, `q = (3)`.
fn warped_case_cost(sys: &SystemModel) -> Result<CostModel> {
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]));
    let params = QuadraticCostParams::new(q, DMatrix::identity(1, 1))?;
    signed_power_quadratic(&params, sys.spec().r(), sys.spec().q(), 2.0)
}

fn c1() -> Result<Outcome> {
    let rep = verify_dynamics_homogeneity(&vdp(), &SamplingOptions::default().with_samples(1000), 1e-9)?;
    outcome(
        rep.passed && rep.samples >= 1000,
        format!("max residual {:.2e} over {} samples", rep.max_residual, rep.samples),
    )
}

fn c2() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut capped = 0;
    let mut cases = 0;
    for sys in [vdp(), fractional_vdp()?] {
        let opts = SamplingOptions::default().with_seed(0xC2).with_eps_range(0.5, 2.0);
        let mut s = opts.rng();
        for _ in 0..100 {
            let k = s.index(5);
            let x = s.state(sys.state_dim());
            let u = InputSequence::new((0..k).map(|_| s.input(sys.input_dim())).collect())?;
            let chk = check_solution_scaling(&sys, &x, &u, s.eps(), k)?;
            worst = worst.max(chk.max_residual);
            capped += usize::from(chk.capped);
            cases += 1;
        }
    }
    outcome(
        worst <= 1e-9 && capped == 0,
        format!("max residual {worst:.2e} over {cases} cases on the van der Pol step and its auxiliary-state extension, {capped} capped"),
    )
}

fn c3() -> Result<Outcome> {
    let sys = vdp();
    let cost = warped_case_cost(&sys)?;
    let mut s = SamplingOptions::default().with_seed(0xC3).with_eps_range(0.5, 2.0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = s.index(4);
        let x = s.state(3);
        let u = InputSequence::new((0..d).map(|_| s.input(1)).collect())?;
        worst = worst.max(check_value_identity(&sys, &cost, &x, &u, s.eps(), d)?.residual);
    }

    let mut cfg = RunConfig::default();
    cfg.cost.kind = CostKind::SignedPowerQuadratic;
    let cs = CaseStudy::new(cfg)?;
    let mut transfer_ok = true;
    let mut transfer_worst: f64 = 0.0;
    for (x, eps) in [([1.0, 0.0, 1.0], 2.0), ([0.3, -0.6, 0.9], 0.7), ([-0.5, 0.25, 1.2], 1.5)] {
        let demo = cmd_scale_demo(&cs, &x, eps, 2, None, 5)?;
        let o = &demo.optimal;
        transfer_ok &= o.grid_size == 5 && o.same_minimiser() && o.residual <= 1e-12;
        transfer_worst = transfer_worst.max(o.residual);
    }
    outcome(
        worst <= 1e-9 && transfer_ok,
        format!(
            "identity residual {worst:.2e} over 100 sequences (d <= 3); optimality transfer over 5^2 sequences: same minimiser {transfer_ok}, residual {transfer_worst:.2e}"
        ),
    )
}

fn c4() -> Result<Outcome> {
    // (a) nu = 1: x+ = 0.8 x + u, l = x^2 + u^2, V_0 = x^2.
    let lin = linear_system(DMatrix::from_element(1, 1, 0.8), DMatrix::identity(1, 1))?;
    let p = QuadraticCostParams::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?;
    let lq = quadratic_cost_on(&p, lin.spec().r(), lin.spec().q())?;
    let v0 = InitialValue::quadratic(DMatrix::identity(1, 1), 2.0)?;
    let grid = InputGrid::uniform(&[-1.0], &[1.0], 5)?;
    let mut worst_a: f64 = 0.0;
    for x in [1.0, -0.7, 2.5] {
        for eps in [0.5, 1.7, 3.0] {
            let probe = ray_scaling_probe(&lin, &lq, &v0, &[x], eps, &grid, 3)?;
            worst_a = worst_a.max(probe.residual);
        }
    }

    // (b) mu = 0: minimum time to the origin for x+ = x^3 + u (r = 1, q = 3, nu = 3).
    let spec = DilationSpec::new(DilationWeights::new(vec![1.0])?, DilationWeights::new(vec![3.0])?, 3.0, 0.0)?;
    let cubic = SystemModel::new("cubic", spec, Arc::new(|x: &[f64], u: &[f64]| vec![x[0] * x[0] * x[0] + u[0]]))?;
    let target = HomogeneousSet::origin(cubic.spec().r().clone())?;
    let time = indicator_cost(&target, ExtendedCost::new(1.0)?, CostRole::Stage, cubic.spec().q())?;
    let miss = InitialValue::new("miss", 0.0, Arc::new(|x: &[f64]| if x[0] == 0.0 { 0.0 } else { 10.0 }));
    let inputs = InputGrid::from_values(vec![vec![-1.0], vec![0.0], vec![1.0], vec![-0.125]])?;
    let mut exact_b = true;
    for x in [1.0, -1.0, 0.5, 0.75] {
        for eps in [0.5, 2.0, 4.0] {
            let probe = ray_scaling_probe(&cubic, &time, &miss, &[x], eps, &inputs, 3)?;
            exact_b &= probe.scaled == probe.base;
        }
    }
    outcome(
        worst_a <= 1e-10 && exact_b,
        format!("(a) max residual {worst_a:.2e}; (b) degree-0 values equal exactly: {exact_b}"),
    )
}

fn matched_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.classic.input_min = cfg.vi.input_min.clone();
    cfg.classic.input_max = cfg.vi.input_max.clone();
    cfg.classic.input_count = cfg.vi.input_count;
    cfg.classic.out_of_domain = OutOfDomainKind::V0Extend;
    cfg
}

fn c5() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cmp = cmd_compare(&CaseStudy::new(matched_config())?, dir.path())?;
    let s = &cmp.summary;
    let edge = s.violations.iter().filter(|v| v.interp_nodes < 4).count();
    let ring = s
        .violations
        .iter()
        .filter(|v| (v.x[0].hypot(v.x[1]) - 1.25f64.sqrt()).abs() <= 0.05)
        .count();
    outcome(
        s.lower_ok_fraction() >= 0.999 && s.upper_ok_fraction() >= 0.999,
        format!(
            "lower holds at {:.3}% and upper at {:.3}% of {} samples; min relative diffs {:.2e} / {:.2e}; {} violations, {} on node or cell edges, {} within 0.05 of the radius-1.118 circle",
            100.0 * s.lower_ok_fraction(),
            100.0 * s.upper_ok_fraction(),
            s.samples,
            s.min_rel_diff_lower,
            s.min_rel_diff_upper,
            s.violations.len(),
            edge,
            ring
        ),
    )
}

fn collapse(sys: &SystemModel, cost: &CostModel, v0: InitialValue, inputs: InputGrid) -> Result<bool> {
    let grid: Arc<dyn RayManifold> = Arc::new(ManifoldGrid::new(1.5, 21, 11)?.with_mirror_x3(true));
    let cfg = VIConfig::new(inputs, 3, v0, sys.spec().r())?;
    let (envs, _) = run_hom_vi(grid, sys, cost, &cfg)?;
    let last = &envs[3];
    Ok(last.lower().iter().zip(last.upper()).all(|(a, b)| a.to_bits() == b.to_bits()))
}

fn c6() -> Result<Outcome> {
    // mu = 0: the van der Pol step with a degree-0 cost counting steps off the x3 axis.
    let sys = vdp();
    let axis = HomogeneousSet::span(sys.spec().r().clone(), &[2])?;
    let cost = indicator_cost(&axis, ExtendedCost::new(1.0)?, CostRole::Stage, sys.spec().q())?;
    let sys0 = sys.with_spec(sys.spec().with_mu(0.0)?)?;
    let mu0 = collapse(&sys0, &cost, InitialValue::zero(0.0), InputGrid::uniform(&[-2.0], &[2.0], 9)?)?;

    // nu = 1: a three-state linear system with a quadratic cost.
    let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.1, 1.1, 0.3, 0.0, 0.0, 0.8]);
    let b = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.5]);
    let lin = linear_system(a, b)?;
    let p = QuadraticCostParams::new(DMatrix::identity(3, 3), DMatrix::identity(1, 1))?;
    let lq = quadratic_cost(&p, 1.0)?;
    let v0 = InitialValue::quadratic(DMatrix::identity(3, 3), 2.0)?;
    let nu1 = collapse(&lin, &lq, v0, InputGrid::uniform(&[-2.0], &[2.0], 9)?)?;
    outcome(mu0 && nu1, format!("bitwise equal after 3 iterations: mu = 0 {mu0}, nu = 1 {nu1}"))
}

fn c7() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cmp = cmd_compare(&CaseStudy::van_der_pol()?, dir.path())?;
    let s = &cmp.summary;
    let (ol, ou) = s.origin.unwrap_or((f64::NAN, f64::NAN));
    let structure = s.mean_abs_lower_inside < s.mean_abs_lower_outside;
    let origin = ol.abs() <= 1e-9 && ou.abs() <= 1e-9;
    // Outside splits into the disk inside the annulus and the corners beyond it.
    let (mut disk, mut corners) = (Vec::new(), Vec::new());
    for r in &cmp.surface.rows {
        let rho = r.x[0].hypot(r.x[1]);
        if rho < s.annulus[0] {
            disk.push(r.diff_lower.abs());
        } else if rho > s.annulus[1] {
            corners.push(r.diff_lower.abs());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    outcome(
        structure && origin,
        format!(
            "mean |V1 - lower| in annulus {:.4} vs outside {:.4} (inner disk {:.4}, beyond annulus {:.4}); mean |upper - V1| in annulus {:.4} vs outside {:.4}; origin diffs {:.1e} / {:.1e}",
            s.mean_abs_lower_inside,
            s.mean_abs_lower_outside,
            mean(&disk),
            mean(&corners),
            s.mean_abs_upper_inside,
            s.mean_abs_upper_outside,
            ol,
            ou
        ),
    )
}

fn c8() -> Result<Outcome> {
    let sys = saturated_integrator()?;
    let p = QuadraticCostParams::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?;
    let cost = quadratic_cost_on(&p, sys.spec().r(), sys.spec().q())?;
    let v0 = InitialValue::new("abs", 1.0, Arc::new(|x: &[f64]| x[0].abs()));
    let grid = StateGrid::new(vec![Axis::Free { lo: -3.0, hi: 3.0, count: 7 }])?;
    let inputs = InputGrid::from_values(vec![vec![-1.0], vec![0.0], vec![1.0]])?;
    let tables = run_classic_vi(&grid, &sys, &cost, &inputs, &v0, OutOfDomain::Clamp, 2)?;
    let mut equal = true;
    for i in 0..grid.node_count() {
        let bf = brute_force_value(&sys, &cost, &grid.node(i), &inputs, 2, &v0)?;
        equal &= bf.value.value() == tables[2].values[i];
    }
    outcome(equal, format!("two sweeps equal the exhaustive horizon-2 value at all {} nodes: {equal}", grid.node_count()))
}

fn c9() -> Result<Outcome> {
    let r = DilationWeights::standard(2, 1.0)?;
    let q = DilationWeights::new(vec![3.0])?;
    let comps = van_der_pol_components(1.0, 1.0, 1.0)?;
    let original = component_sum_step(&comps, 2);
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [ExtensionMode::FractionalWeight, ExtensionMode::UnitWeight] {
        let ext = extend_system(&comps, &r, &q, None, mode)?;
        let rep = verify_dynamics_homogeneity(&ext, &SamplingOptions::default().with_samples(1000), 1e-9)?;
        let mut s = SamplingOptions::default().with_seed(0xC9).rng();
        let (mut state, mut w): (f64, f64) = (0.0, 0.0);
        for _ in 0..20 {
            let x0: Vec<f64> = s.state(2).iter().map(|v| 0.15 * v).collect();
            let u = InputSequence::new((0..10).map(|_| vec![0.05 * s.input(1)[0]]).collect())?;
            let m = homdp::systems::trajectory_match_with_w(&original, &ext, &x0, &u)?;
            state = state.max(m.state_residual);
            w = w.max(m.w_deviation);
        }
        ok &= rep.passed && state == 0.0 && w == 0.0;
        lines.push(format!(
            "{mode:?}: nu {}, homogeneity residual {:.1e}, trajectory residual {state:e}, w deviation {w:e}",
            ext.spec().nu(),
            rep.max_residual
        ));
    }
    outcome(ok, lines.join("; "))
}

fn c10() -> Result<Outcome> {
    let v0 = InitialValue::quadratic(reference_terminal_matrix(), 2.0)?;
    let at = v0.eval(&[1.0, 0.0, 0.0])?.value();
    let rep = cmd_riccati(&CaseStudy::van_der_pol()?)?;
    let dev = rep.max_deviation.unwrap_or(f64::INFINITY);
    outcome(at == 6.8 && dev <= 0.05, format!("|(1,0,0)|_P = {at}; Riccati P deviates by {dev:.4} entrywise"))
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        criterion(1, "dynamics homogeneity", s(1), c1),
        criterion(2, "solution scaling", s(1), c2),
        criterion(3, "weighted cost identity and optimality transfer", s(10), c3),
        criterion(4, "proportional values along rays", s(10), c4),
        criterion(5, "envelope sandwich at desk scale", s(300), c5),
        criterion(6, "envelope collapse", s(60), c6),
        criterion(7, "error-surface structure", s(300), c7),
        criterion(8, "grid VI equals exhaustive search", s(1), c8),
        criterion(9, "auxiliary-state extension", s(1), c9),
        criterion(10, "initial value and Riccati matrix", s(1), c10),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
