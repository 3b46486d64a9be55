//! The extended van der Pol case study and the commands behind the `homdp`
//! binary. Every command takes a validated [`RunConfig`]; file-producing
//! commands write CSV tables with `key=value` metadata sidecars.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

pub use config::{
    ClassicSection, CostKind, CostSection, DilationSection, Extension, InitialKind, ManifoldSection,
    MonomialEntry, OutOfDomainKind, OutputSection, ReadBackKind, RunConfig, SystemKind,
    SystemSection, ViSection,
};

use crate::classic_vi::{
    brute_force_search, run_classic_vi, write_grid_value_table, Axis, GridValueTable, OutOfDomain,
    StateGrid, BRUTE_FORCE_BUDGET,
};
use crate::costs::{
    check_cost_scaling, check_value_identity, combine_costs, quadratic_cost, safe_horizon,
    signed_power_quadratic, verify_cost_degree_bracket, verify_cost_homogeneity, CombineMode,
    CostModel, CostWeights, ExtendedCost, QuadraticCostParams, ValueIdentityCheck,
};
use crate::dilation::{dilate, scale_input_sequence, DilationSpec, DilationWeights, InputSequence};
use crate::error::{Error, Result};
use crate::homvi::{run_hom_vi, EnvelopeValue, InitialValue, InputGrid, SweepStats, VIConfig, ValueEnvelope};
use crate::manifold::{
    coverage_check, format_value, read_table, write_grid_table, write_metadata, ManifoldGrid,
    RayManifold, ReadBack,
};
use crate::riccati::{embed_with_zero_row, solve_dare, van_der_pol_linearization, RiccatiSolution};
use crate::sampling::SamplingOptions;
use crate::systems::{
    check_solution_scaling, component_sum_step, extend_system, linear_system, van_der_pol_extended,
    verify_dynamics_homogeneity, ExtensionMode, MonomialComponent, SystemModel,
};
use crate::relative_residual;

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn matrix_text(rows: &[Vec<f64>]) -> String {
    rows.iter().map(|r| list(r)).collect::<Vec<_>>().join(";")
}

/// System, cost and initial value assembled from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub config: RunConfig,
    pub system: SystemModel,
    pub cost: CostModel,
    pub v0: InitialValue,
}

impl CaseStudy {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let d = &config.dilation;
        let r = DilationWeights::new(d.r.clone())?;
        let q = DilationWeights::new(d.q.clone())?;
        let spec = DilationSpec::new(r.clone(), q.clone(), d.nu, d.mu)?;
        let system = build_system(&config.system)?.with_spec(spec)?;

        let c = &config.cost;
        let cost = match c.kind {
            CostKind::Quadratic => {
                let params = QuadraticCostParams::new(matrix(&c.q_matrix), matrix(&c.r_matrix))?;
                quadratic_cost(&params, d.mu / 2.0)?
            }
            CostKind::SignedPowerQuadratic => {
                let params = QuadraticCostParams::new(matrix(&c.q_matrix), matrix(&c.r_matrix))?;
                signed_power_quadratic(&params, &r, &q, d.mu)?
            }
            CostKind::Zero => combine_costs(&r, &q, &[], CombineMode::SameDegree, d.mu)?,
        };
        let v0 = match c.v0 {
            InitialKind::Quadratic => InitialValue::quadratic(matrix(&c.p_matrix), d.mu)?,
            InitialKind::Zero => InitialValue::zero(d.mu),
        };
        Ok(Self {
            config,
            system,
            cost,
            v0,
        })
    }

    /// Default configuration (desk-scale van der Pol).
    pub fn van_der_pol() -> Result<Self> {
        Self::new(RunConfig::default())
    }

    pub fn manifold(&self) -> Result<ManifoldGrid> {
        if self.system.state_dim() != 3 {
            return Err(Error::Domain(format!(
                "the sphere grid needs 3 states, the configured system has {}",
                self.system.state_dim()
            )));
        }
        let m = &self.config.manifold;
        let read_back = match m.read_back {
            ReadBackKind::Bilinear => ReadBack::Bilinear,
            ReadBackKind::Nearest => ReadBack::Nearest,
        };
        Ok(ManifoldGrid::new(m.radius, m.n_az, m.n_el)?
            .with_mirror_x3(m.mirror_x3)
            .with_read_back(read_back))
    }

    pub fn hom_inputs(&self) -> Result<InputGrid> {
        let vi = &self.config.vi;
        InputGrid::uniform(&vi.input_min, &vi.input_max, vi.input_count)
    }

    pub fn classic_grid(&self) -> Result<StateGrid> {
        let c = &self.config.classic;
        StateGrid::new(
            (0..c.lo.len())
                .map(|i| {
                    if c.counts[i] == 1 {
                        Axis::Fixed(c.lo[i])
                    } else {
                        Axis::Free {
                            lo: c.lo[i],
                            hi: c.hi[i],
                            count: c.counts[i],
                        }
                    }
                })
                .collect(),
        )
    }

    pub fn classic_inputs(&self) -> Result<InputGrid> {
        let c = &self.config.classic;
        InputGrid::uniform(&c.input_min, &c.input_max, c.input_count)
    }

    pub fn out_of_domain(&self) -> OutOfDomain {
        match self.config.classic.out_of_domain {
            OutOfDomainKind::Clamp => OutOfDomain::Clamp,
            OutOfDomainKind::V0Extend => OutOfDomain::V0Extend,
            OutOfDomainKind::Penalty => OutOfDomain::Penalty,
        }
    }

    fn sampling(&self) -> SamplingOptions {
        let d = &self.config.dilation;
        SamplingOptions::default()
            .with_samples(d.check_samples)
            .with_seed(d.check_seed)
            .with_eps_range(d.eps_min, d.eps_max)
    }

    /// Settings shared by every metadata sidecar.
    fn metadata(&self) -> Vec<(&'static str, String)> {
        let cfg = &self.config;
        let s = &cfg.system;
        let mut out = vec![("system", self.system.name().to_string())];
        match s.kind {
            SystemKind::VanDerPol => {
                out.push(("a", s.a.to_string()));
                out.push(("b", s.b.to_string()));
                out.push(("T", s.t.to_string()));
            }
            SystemKind::Linear => {
                out.push(("a_matrix", matrix_text(&s.a_matrix)));
                out.push(("b_matrix", matrix_text(&s.b_matrix)));
            }
            SystemKind::Monomials => {
                out.push(("monomials", s.monomials.len().to_string()));
                out.push(("extend", format!("{:?}", s.extend)));
            }
        }
        out.extend([
            ("r", list(&cfg.dilation.r)),
            ("q", list(&cfg.dilation.q)),
            ("nu", cfg.dilation.nu.to_string()),
            ("mu", cfg.dilation.mu.to_string()),
            ("cost", self.cost.name().to_string()),
            ("q_matrix", matrix_text(&cfg.cost.q_matrix)),
            ("r_matrix", matrix_text(&cfg.cost.r_matrix)),
            ("v0", self.v0.name().to_string()),
            ("p_matrix", matrix_text(&cfg.cost.p_matrix)),
        ]);
        out
    }

    fn manifold_metadata(&self) -> Vec<(&'static str, String)> {
        let m = &self.config.manifold;
        let vi = &self.config.vi;
        vec![
            ("radius", m.radius.to_string()),
            ("n_az", m.n_az.to_string()),
            ("n_el", m.n_el.to_string()),
            ("mirror_x3", m.mirror_x3.to_string()),
            ("read_back", format!("{:?}", m.read_back).to_lowercase()),
            ("M", vi.input_count.to_string()),
            ("input_min", list(&vi.input_min)),
            ("input_max", list(&vi.input_max)),
        ]
    }
}

fn build_system(s: &SystemSection) -> Result<SystemModel> {
    match s.kind {
        SystemKind::VanDerPol => van_der_pol_extended(s.a, s.b, s.t),
        SystemKind::Linear => linear_system(matrix(&s.a_matrix), matrix(&s.b_matrix)),
        SystemKind::Monomials => {
            let r = DilationWeights::new(s.monomial_r.clone())?;
            let q = DilationWeights::new(s.monomial_q.clone())?;
            let comps = s
                .monomials
                .iter()
                .map(|m| MonomialComponent::monomial(m.row, m.coef, &m.x, &m.u, &r, &q))
                .collect::<Result<Vec<_>>>()?;
            match s.extend {
                Extension::None => {
                    let spec = DilationSpec::new(r.clone(), q, 1.0, 0.0)?;
                    SystemModel::new("monomials", spec, Arc::new(component_sum_step(&comps, r.len())))
                }
                Extension::FractionalWeight => extend_system(&comps, &r, &q, s.extend_nu, ExtensionMode::FractionalWeight),
                Extension::UnitWeight => extend_system(&comps, &r, &q, s.extend_nu, ExtensionMode::UnitWeight),
            }
        }
    }
}

/// One line of the `verify` report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckLine>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckLine> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Random `(x, u, eps)` cases for the trajectory-level checks.
fn trajectory_cases(cs: &CaseStudy) -> Vec<(Vec<f64>, InputSequence, f64)> {
    let d = &cs.config.dilation;
    let mut sampler = cs.sampling().rng();
    let cases = (d.check_samples / 10).max(1);
    (0..cases)
        .map(|_| {
            let x = sampler.state(cs.system.state_dim());
            let u = (0..d.check_horizon).map(|_| sampler.input(cs.system.input_dim())).collect();
            let eps = sampler.eps();
            (x, InputSequence::new(u).expect("sampled inputs share one dimension"), eps)
        })
        .collect()
}

/// Runs every homogeneity and scaling-identity check for the configured
/// system, cost and initial value.
pub fn cmd_verify(cs: &CaseStudy) -> Result<VerifyReport> {
    let d = &cs.config.dilation;
    let tol = d.check_tol;
    let opts = cs.sampling();
    let spec = cs.system.spec();
    let mut checks = Vec::new();

    let rep = verify_dynamics_homogeneity(&cs.system, &opts, tol)?;
    let mut detail = format!("max residual {:.3e} over {} samples (tol {tol:.1e})", rep.max_residual, rep.samples);
    if !rep.passed {
        if let (Some(row), Some(s)) = (rep.worst_row, &rep.worst_sample) {
            detail.push_str(&format!("; worst in row {} at x={:?}, u={:?}, eps={}", row + 1, s.x, s.u, s.eps));
        }
    }
    checks.push(CheckLine { name: "dynamics homogeneity", passed: rep.passed, detail });

    let rep = verify_cost_homogeneity(&cs.cost, spec.r(), spec.q(), &opts, tol)?;
    checks.push(CheckLine { name: "cost homogeneity", passed: rep.passed, detail: rep.to_string() });

    let rep = verify_cost_degree_bracket(&cs.cost, spec.r(), spec.q(), spec.nu(), &opts, tol)?;
    checks.push(CheckLine { name: "cost degree bracket", passed: rep.passed, detail: rep.to_string() });

    let (passed, detail) = match cs.v0.check_degree(spec.r(), tol) {
        Ok(res) => (true, format!("residual {res:.3e}")),
        Err(Error::Construction(msg)) => (false, msg),
        Err(e) => return Err(e),
    };
    checks.push(CheckLine { name: "initial value homogeneity", passed, detail });

    let cases = trajectory_cases(cs);
    let (mut traj, mut stage, mut ident) = (0.0f64, 0.0f64, 0.0f64);
    let mut capped = 0usize;
    for (x, u, eps) in &cases {
        let t = check_solution_scaling(&cs.system, x, u, *eps, d.check_horizon)?;
        let c = check_cost_scaling(&cs.system, &cs.cost, x, u, *eps, d.check_horizon)?;
        capped += usize::from(t.capped || c.capped);
        traj = traj.max(t.max_residual);
        stage = stage.max(c.max_residual);
        let h = d.check_horizon.min(safe_horizon(&cs.system, cs.cost.mu(), *eps));
        ident = ident.max(check_value_identity(&cs.system, &cs.cost, x, u, *eps, h)?.residual);
    }
    let note = |r: f64| {
        let mut s = format!("max residual {r:.3e} over {} cases, horizon {}", cases.len(), d.check_horizon);
        if capped > 0 {
            s.push_str(&format!(" ({capped} cases capped by floating range)"));
        }
        s
    };
    checks.push(CheckLine { name: "solution scaling", passed: traj <= tol, detail: note(traj) });
    checks.push(CheckLine { name: "cost scaling along trajectories", passed: stage <= tol, detail: note(stage) });
    checks.push(CheckLine { name: "weighted cost identity", passed: ident <= tol, detail: note(ident) });

    if cs.system.state_dim() == 3 {
        let grid = cs.manifold()?;
        let rep = coverage_check(&grid, spec.r(), &opts)?;
        checks.push(CheckLine {
            name: "manifold coverage",
            passed: rep.passed,
            detail: format!(
                "{} samples, {} uncovered, {} failures, reconstruction residual {:.3e}",
                rep.samples,
                rep.uncovered.len(),
                rep.failures,
                rep.max_reconstruction_residual
            ),
        });
    }
    Ok(VerifyReport { checks })
}

/// Envelopes and sweep statistics of one homogeneous VI run.
#[derive(Debug, Clone)]
pub struct HomviRun {
    pub envelopes: Vec<ValueEnvelope>,
    pub stats: Vec<SweepStats>,
    pub files: Vec<PathBuf>,
}

fn envelope_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("homvi_iter{i}.csv")), dir.join(format!("homvi_iter{i}.meta")))
}

fn classic_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("classic_iter{i}.csv")), dir.join(format!("classic_iter{i}.meta")))
}

/// Runs homogeneous VI without writing files.
pub fn solve_homvi(cs: &CaseStudy) -> Result<(ManifoldGrid, Vec<ValueEnvelope>, Vec<SweepStats>)> {
    let grid = cs.manifold()?;
    let vi = VIConfig::new(cs.hom_inputs()?, cs.config.vi.iterations, cs.v0.clone(), cs.system.spec().r())?;
    let shared: Arc<dyn RayManifold> = Arc::new(grid.clone());
    let (envs, stats) = run_hom_vi(shared, &cs.system, &cs.cost, &vi)?;
    Ok((grid, envs, stats))
}

/// Runs homogeneous VI and writes `homvi_iter{i}.csv` / `.meta` for every
/// iteration into `dir`.
pub fn cmd_homvi_run(cs: &CaseStudy, dir: &Path) -> Result<HomviRun> {
    std::fs::create_dir_all(dir)?;
    let (grid, envelopes, stats) = solve_homvi(cs)?;
    let mut files = Vec::new();
    for env in &envelopes {
        let i = env.iteration();
        let (csv, meta) = envelope_paths(dir, i);
        write_grid_table(&csv, &grid, &[("lower", env.lower()), ("upper", env.upper())])?;
        let mut entries = vec![("iteration", i.to_string())];
        entries.extend(cs.manifold_metadata());
        entries.extend(cs.metadata());
        write_metadata(&meta, &entries)?;
        files.push(csv);
        files.push(meta);
    }
    Ok(HomviRun { envelopes, stats, files })
}

pub fn solve_classic(cs: &CaseStudy) -> Result<(StateGrid, InputGrid, Vec<GridValueTable>)> {
    let grid = cs.classic_grid()?;
    let inputs = cs.classic_inputs()?;
    let start = Instant::now();
    let tables = run_classic_vi(
        &grid,
        &cs.system,
        &cs.cost,
        &inputs,
        &cs.v0,
        cs.out_of_domain(),
        cs.config.classic.iterations,
    )?;
    log::info!("classical VI: {} sweeps in {:.2?}", cs.config.classic.iterations, start.elapsed());
    Ok((grid, inputs, tables))
}

#[derive(Debug, Clone)]
pub struct ClassicRun {
    pub tables: Vec<GridValueTable>,
    pub files: Vec<PathBuf>,
}

/// Runs classical VI and writes `classic_iter{i}.csv` / `.meta`.
pub fn cmd_classicvi_run(cs: &CaseStudy, dir: &Path) -> Result<ClassicRun> {
    std::fs::create_dir_all(dir)?;
    let (grid, inputs, tables) = solve_classic(cs)?;
    let c = &cs.config.classic;
    let mut files = Vec::new();
    for t in &tables {
        let (csv, meta) = classic_paths(dir, t.iteration);
        write_grid_value_table(&csv, &grid, t, &inputs)?;
        let mut entries = vec![
            ("iteration", t.iteration.to_string()),
            ("lo", list(&c.lo)),
            ("hi", list(&c.hi)),
            ("counts", c.counts.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")),
            ("M", c.input_count.to_string()),
            ("input_min", list(&c.input_min)),
            ("input_max", list(&c.input_max)),
            ("out_of_domain", format!("{:?}", c.out_of_domain).to_lowercase()),
            ("out_of_domain_fraction", format_value(t.out_of_domain_fraction)),
        ];
        entries.extend(cs.metadata());
        write_metadata(&meta, &entries)?;
        files.push(csv);
        files.push(meta);
    }
    Ok(ClassicRun { tables, files })
}

/// One sample of the comparison between the classical value and the envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub x: Vec<f64>,
    pub classic: f64,
    pub lower: f64,
    pub upper: f64,
    /// `classic - lower`
    pub diff_lower: f64,
    /// `upper - classic`
    pub diff_upper: f64,
}

/// `a - b`, zero when both are the same infinity.
fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSurface {
    pub iteration: usize,
    pub rows: Vec<SurfaceRow>,
}

/// A sample where a difference is below `-tol (1 + |V|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceViolation {
    pub x: Vec<f64>,
    pub diff_lower: f64,
    pub diff_upper: f64,
    /// Number of manifold nodes the envelope read blends at this state
    /// (1 on a node, 2 on a cell edge, 4 inside a cell).
    pub interp_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub samples: usize,
    pub tol: f64,
    pub lower_ok: usize,
    pub upper_ok: usize,
    /// Smallest `diff / (1 + |V|)` per side.
    pub min_rel_diff_lower: f64,
    pub min_rel_diff_upper: f64,
    pub annulus: [f64; 2],
    pub inside: usize,
    pub outside: usize,
    pub mean_abs_lower_inside: f64,
    pub mean_abs_lower_outside: f64,
    pub mean_abs_upper_inside: f64,
    pub mean_abs_upper_outside: f64,
    /// Both differences at the sample with `x1 = x2 = 0`, when present.
    pub origin: Option<(f64, f64)>,
    pub violations: Vec<SurfaceViolation>,
}

impl SurfaceSummary {
    pub fn lower_ok_fraction(&self) -> f64 {
        self.lower_ok as f64 / self.samples.max(1) as f64
    }

    pub fn upper_ok_fraction(&self) -> f64 {
        self.upper_ok as f64 / self.samples.max(1) as f64
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![
            ("samples", self.samples.to_string()),
            ("sandwich_tol", self.tol.to_string()),
            ("lower_ok_fraction", format_value(self.lower_ok_fraction())),
            ("upper_ok_fraction", format_value(self.upper_ok_fraction())),
            ("min_rel_diff_lower", format_value(self.min_rel_diff_lower)),
            ("min_rel_diff_upper", format_value(self.min_rel_diff_upper)),
            ("annulus", list(&self.annulus)),
            ("annulus_samples", self.inside.to_string()),
            ("outside_samples", self.outside.to_string()),
            ("mean_abs_diff_lower_annulus", format_value(self.mean_abs_lower_inside)),
            ("mean_abs_diff_lower_outside", format_value(self.mean_abs_lower_outside)),
            ("mean_abs_diff_upper_annulus", format_value(self.mean_abs_upper_inside)),
            ("mean_abs_diff_upper_outside", format_value(self.mean_abs_upper_outside)),
            ("violations", self.violations.len().to_string()),
        ];
        if let Some((a, b)) = self.origin {
            e.push(("origin_diff_lower", format_value(a)));
            e.push(("origin_diff_upper", format_value(b)));
        }
        e
    }
}

impl fmt::Display for SurfaceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        for v in self.violations.iter().take(20) {
            writeln!(
                f,
                "violation at x={:?}: diff_lower={:.3e}, diff_upper={:.3e}, blended nodes={}",
                v.x, v.diff_lower, v.diff_upper, v.interp_nodes
            )?;
        }
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl ErrorSurface {
    pub fn summarize(&self, annulus: [f64; 2], tol: f64, env: &ValueEnvelope) -> Result<SurfaceSummary> {
        let mut s = SurfaceSummary {
            samples: self.rows.len(),
            tol,
            lower_ok: 0,
            upper_ok: 0,
            min_rel_diff_lower: f64::INFINITY,
            min_rel_diff_upper: f64::INFINITY,
            annulus,
            inside: 0,
            outside: 0,
            mean_abs_lower_inside: 0.0,
            mean_abs_lower_outside: 0.0,
            mean_abs_upper_inside: 0.0,
            mean_abs_upper_outside: 0.0,
            origin: None,
            violations: Vec::new(),
        };
        let (mut li, mut lo, mut ui, mut uo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for row in &self.rows {
            let scale = 1.0 + row.classic.abs();
            let (rl, ru) = (row.diff_lower / scale, row.diff_upper / scale);
            s.min_rel_diff_lower = s.min_rel_diff_lower.min(rl);
            s.min_rel_diff_upper = s.min_rel_diff_upper.min(ru);
            let ok_l = rl >= -tol;
            let ok_u = ru >= -tol;
            s.lower_ok += usize::from(ok_l);
            s.upper_ok += usize::from(ok_u);
            if !(ok_l && ok_u) {
                let interp_nodes = if row.x.iter().all(|c| *c == 0.0) {
                    0
                } else {
                    env.manifold().decompose(env.r(), &row.x)?.interp.len()
                };
                s.violations.push(SurfaceViolation {
                    x: row.x.clone(),
                    diff_lower: row.diff_lower,
                    diff_upper: row.diff_upper,
                    interp_nodes,
                });
            }
            let rho = row.x[0].hypot(row.x[1]);
            if rho == 0.0 {
                s.origin = Some((row.diff_lower, row.diff_upper));
            }
            if rho >= annulus[0] && rho <= annulus[1] {
                li.push(row.diff_lower.abs());
                ui.push(row.diff_upper.abs());
            } else {
                lo.push(row.diff_lower.abs());
                uo.push(row.diff_upper.abs());
            }
        }
        s.inside = li.len();
        s.outside = lo.len();
        s.mean_abs_lower_inside = mean(&li);
        s.mean_abs_lower_outside = mean(&lo);
        s.mean_abs_upper_inside = mean(&ui);
        s.mean_abs_upper_outside = mean(&uo);
        Ok(s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.rows.first().map_or(0, |r| r.x.len());
        let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        header.extend(["classic", "lower", "upper", "diff_lower", "diff_upper"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.x.iter().map(|v| format_value(*v)).collect();
            rec.extend([r.classic, r.lower, r.upper, r.diff_lower, r.diff_upper].map(format_value));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples the envelope and the classical value at every node of the
/// classical grid.
pub fn error_surface(grid: &StateGrid, table: &GridValueTable, env: &ValueEnvelope) -> Result<ErrorSurface> {
    let rows = (0..grid.node_count())
        .map(|i| {
            let x = grid.node(i);
            let EnvelopeValue { lower, upper } = env.query(&x)?;
            let v = table.values[i];
            Ok(SurfaceRow {
                diff_lower: diff(v, lower.value()),
                diff_upper: diff(upper.value(), v),
                classic: v,
                lower: lower.value(),
                upper: upper.value(),
                x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSurface {
        iteration: table.iteration,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub surface: ErrorSurface,
    pub summary: SurfaceSummary,
    pub files: Vec<PathBuf>,
}

/// Runs both solvers to their common last iteration and writes
/// `error_surface.csv` with a `compare.meta` summary.
pub fn cmd_compare(cs: &CaseStudy, dir: &Path) -> Result<Comparison> {
    std::fs::create_dir_all(dir)?;
    let (_, envs, _) = solve_homvi(cs)?;
    let (grid, _, tables) = solve_classic(cs)?;
    let i = cs.config.vi.iterations.min(cs.config.classic.iterations);
    let env = &envs[i];
    let surface = error_surface(&grid, &tables[i], env)?;
    let o = &cs.config.output;
    let summary = surface.summarize(o.annulus, o.sandwich_tol, env)?;
    let csv = dir.join("error_surface.csv");
    let meta = dir.join("compare.meta");
    surface.write_csv(&csv)?;
    let mut entries = vec![("iteration", i.to_string())];
    entries.extend(summary.entries());
    entries.extend(cs.manifold_metadata());
    let c = &cs.config.classic;
    entries.extend([
        ("classic_M", c.input_count.to_string()),
        ("classic_input_min", list(&c.input_min)),
        ("classic_input_max", list(&c.input_max)),
        ("classic_out_of_domain", format!("{:?}", c.out_of_domain).to_lowercase()),
        ("classic_out_of_domain_fraction", format_value(tables[i].out_of_domain_fraction)),
    ]);
    entries.extend(cs.metadata());
    write_metadata(&meta, &entries)?;
    Ok(Comparison {
        surface,
        summary,
        files: vec![csv, meta],
    })
}

fn read_metadata(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}; run `homvi run` first", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("{}: line {}: expected key=value", path.display(), n + 1)))
        })
        .collect()
}

/// Reloads the envelope of iteration `iteration` written by [`cmd_homvi_run`],
/// refusing tables produced under different manifold or degree settings.
pub fn load_envelope(cs: &CaseStudy, dir: &Path, iteration: usize) -> Result<ValueEnvelope> {
    let (csv, meta) = envelope_paths(dir, iteration);
    let stored = read_metadata(&meta)?;
    let mut expected = cs.manifold_metadata();
    expected.extend(cs.metadata());
    for (k, v) in &expected {
        if let Some((_, s)) = stored.iter().find(|(sk, _)| sk == k) {
            if s != v {
                return Err(Error::Config(format!(
                    "{}: {k}={s} differs from the current configuration ({v})",
                    meta.display()
                )));
            }
        }
    }
    let (header, rows) = read_table(&csv)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column '{name}'", csv.display())))
    };
    let (li, ui) = (col("lower")?, col("upper")?);
    let grid: Arc<dyn RayManifold> = Arc::new(cs.manifold()?);
    let spec = cs.system.spec();
    ValueEnvelope::from_tables(
        grid,
        spec.r().clone(),
        spec.nu(),
        cs.cost.mu(),
        iteration,
        rows.iter().map(|r| r[li]).collect(),
        rows.iter().map(|r| r[ui]).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub x: Vec<f64>,
    pub iteration: usize,
    pub value: EnvelopeValue,
}

impl fmt::Display for QueryResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "state = {}", list(&self.x))?;
        writeln!(f, "iteration = {}", self.iteration)?;
        writeln!(f, "lower = {}", format_value(self.value.lower.value()))?;
        writeln!(f, "upper = {}", format_value(self.value.upper.value()))
    }
}

pub fn cmd_query(cs: &CaseStudy, dir: &Path, x: &[f64], iteration: usize) -> Result<QueryResult> {
    let env = load_envelope(cs, dir, iteration)?;
    Ok(QueryResult {
        x: x.to_vec(),
        iteration,
        value: env.query(x)?,
    })
}

/// Exhaustive optimum at `x` transported along the ray, compared with an
/// independent exhaustive optimum at the scaled state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityTransfer {
    pub grid_size: usize,
    /// `min J_{d,1,1}(x, .)` over the base grid.
    pub base: ExtendedCost,
    pub base_indices: Option<Vec<usize>>,
    /// `J_{d,eps^{-mu},nu}(lambda x, Lambda u*)` for the base minimiser `u*`.
    pub transported: ExtendedCost,
    /// `min J_{d,eps^{-mu},nu}(lambda x, .)` over the scaled grids.
    pub scaled: ExtendedCost,
    pub scaled_indices: Option<Vec<usize>>,
    pub residual: f64,
}

impl OptimalityTransfer {
    pub fn same_minimiser(&self) -> bool {
        self.base_indices == self.scaled_indices
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDemo {
    pub x: Vec<f64>,
    pub eps: f64,
    pub horizon: usize,
    pub supplied: InputSequence,
    pub identity: ValueIdentityCheck,
    pub optimal: OptimalityTransfer,
}

impl fmt::Display for ScaleDemo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq: Vec<String> = self.supplied.iter().map(list).collect();
        writeln!(f, "state = {}, eps = {}, horizon = {}", list(&self.x), self.eps, self.horizon)?;
        writeln!(f, "supplied inputs = [{}]", seq.join("; "))?;
        writeln!(f, "  J_d,1,1(x, u)                 = {}", format_value(self.identity.base.value()))?;
        writeln!(f, "  J_d,eps^-mu,nu(lambda x, Lambda u) = {}", format_value(self.identity.scaled.value()))?;
        writeln!(f, "  residual                      = {:.3e}", self.identity.residual)?;
        let o = &self.optimal;
        writeln!(f, "exhaustive search over {} inputs per step:", o.grid_size)?;
        writeln!(f, "  optimum at x                  = {} via {:?}", format_value(o.base.value()), o.base_indices)?;
        writeln!(f, "  transported minimiser         = {}", format_value(o.transported.value()))?;
        writeln!(f, "  optimum at lambda x           = {} via {:?}", format_value(o.scaled.value()), o.scaled_indices)?;
        writeln!(f, "  residual                      = {:.3e}", o.residual)?;
        writeln!(f, "  same minimiser                = {}", o.same_minimiser())
    }
}

/// Evaluates the weighted-cost identity on a supplied sequence and checks
/// that exhaustive optimisation commutes with the ray scaling.
pub fn cmd_scale_demo(
    cs: &CaseStudy,
    x: &[f64],
    eps: f64,
    horizon: usize,
    supplied: Option<InputSequence>,
    grid_count: usize,
) -> Result<ScaleDemo> {
    let sys = &cs.system;
    let cost = &cs.cost;
    let safe = safe_horizon(sys, cost.mu(), eps);
    if horizon > safe {
        return Err(Error::Range(format!(
            "horizon {horizon} overflows floating range at eps={eps}; largest safe horizon is {safe}"
        )));
    }
    let supplied = supplied.unwrap_or_else(|| InputSequence::zeros(horizon, sys.input_dim()));
    let identity = check_value_identity(sys, cost, x, &supplied, eps, horizon)?;

    let vi = &cs.config.vi;
    let base_grid = InputGrid::uniform(&vi.input_min, &vi.input_max, grid_count)?;
    let spec = sys.spec();
    let terminal = |y: &[f64]| cost.terminal(y);
    let base = brute_force_search(
        sys,
        cost,
        x,
        &vec![&base_grid; horizon],
        CostWeights::UNIT,
        &terminal,
        BRUTE_FORCE_BUDGET,
    )?;
    let weights = CostWeights::new((-cost.mu() * eps.ln()).exp(), spec.nu())?;
    let scaled_grids = (0..horizon)
        .map(|k| base_grid.scaled(spec.q(), eps, spec.nu().powi(k as i32)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&InputGrid> = scaled_grids.iter().collect();
    let lx = dilate(spec.r(), eps, x)?;
    let scaled = brute_force_search(sys, cost, &lx, &refs, weights, &terminal, BRUTE_FORCE_BUDGET)?;
    let transported = match &base.sequence {
        Some(u) => {
            let su = scale_input_sequence(spec.q(), spec.nu(), eps, u)?;
            crate::costs::eval_cost(sys, cost, weights, horizon, &lx, &su)?
        }
        None => ExtendedCost::INFINITY,
    };
    let residual = relative_residual(transported.value(), base.value.value())
        .max(relative_residual(scaled.value.value(), base.value.value()));
    Ok(ScaleDemo {
        x: x.to_vec(),
        eps,
        horizon,
        supplied,
        identity,
        optimal: OptimalityTransfer {
            grid_size: base_grid.len(),
            base: base.value,
            base_indices: base.indices,
            transported,
            scaled: scaled.value,
            scaled_indices: scaled.indices,
            residual,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiReport {
    pub solution: RiccatiSolution,
    /// The solution padded to the state dimension of the configured system.
    pub embedded: DMatrix<f64>,
    pub configured: Option<DMatrix<f64>>,
    /// Entrywise max deviation between `embedded` and `configured`.
    pub max_deviation: Option<f64>,
}

impl fmt::Display for RiccatiReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "iterations = {}", self.solution.iterations)?;
        writeln!(f, "residual = {:.3e}", self.solution.residual)?;
        let p = &self.embedded;
        for i in 0..p.nrows() {
            let row: Vec<String> = (0..p.ncols()).map(|j| format!("{:12.6}", p[(i, j)])).collect();
            writeln!(f, "P[{i}] = {}", row.join(" "))?;
        }
        if let Some(d) = self.max_deviation {
            writeln!(f, "max deviation from configured P = {d:.4}")?;
        }
        Ok(())
    }
}

/// LQ cost matrix of the linearisation at the origin by Riccati iteration
/// (tolerance 1e-10, at most 1e4 steps).
pub fn cmd_riccati(cs: &CaseStudy) -> Result<RiccatiReport> {
    let cfg = &cs.config;
    let c = &cfg.cost;
    if c.kind == CostKind::Zero {
        return Err(Error::Domain("the Riccati check needs the Q and R weights of a quadratic cost".into()));
    }
    let q_full = matrix(&c.q_matrix);
    let r = matrix(&c.r_matrix);
    let (solution, embedded) = match cfg.system.kind {
        SystemKind::VanDerPol => {
            let (a, b) = van_der_pol_linearization(cfg.system.a, cfg.system.b, cfg.system.t);
            let q = q_full.view((0, 0), (2, 2)).into_owned();
            let s = solve_dare(&a, &b, &q, &r, crate::riccati::DEFAULT_TOL, crate::riccati::DEFAULT_MAX_ITER)?;
            let e = embed_with_zero_row(&s.p);
            (s, e)
        }
        SystemKind::Linear => {
            let (a, b) = (matrix(&cfg.system.a_matrix), matrix(&cfg.system.b_matrix));
            let s = solve_dare(&a, &b, &q_full, &r, crate::riccati::DEFAULT_TOL, crate::riccati::DEFAULT_MAX_ITER)?;
            let e = s.p.clone();
            (s, e)
        }
        SystemKind::Monomials => {
            return Err(Error::Domain("the Riccati check supports the van der Pol and linear systems".into()))
        }
    };
    let configured = (c.v0 == InitialKind::Quadratic).then(|| matrix(&c.p_matrix));
    let max_deviation = configured.as_ref().map(|p| (&embedded - p).amax());
    Ok(RiccatiReport {
        solution,
        embedded,
        configured,
        max_deviation,
    })
}

#[cfg(test)]
mod tests;
