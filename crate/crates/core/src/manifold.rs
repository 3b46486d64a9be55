//! The compact set on which Bellman backups are solved, and the ray
//! decomposition `x = lambda^r(eps) x_bar` of arbitrary nonzero states onto it.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Debug;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::dilation::{dilate_log, DilationWeights};
use crate::error::{check_dim, Error, Result};
use crate::max_relative_residual;
use crate::sampling::SamplingOptions;

/// Log-domain bracket limits for the projection solve: `eps` in `[1e-12, 1e12]`.
const LOG_EPS_LIMIT: f64 = 27.631021115928547;
const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// How node values are read back at an off-node base point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadBack {
    #[default]
    Bilinear,
    Nearest,
}

/// `x = lambda^r(eps) base` with `base` on the manifold, plus interpolation
/// weights of `base` over the manifold nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDecomposition {
    pub eps: f64,
    /// `ln eps`, kept separately so callers can scale without overflow.
    pub log_eps: f64,
    pub base: Vec<f64>,
    pub interp: Vec<(usize, f64)>,
}

/// A compact set meeting every homogeneous ray, discretised into nodes.
pub trait RayManifold: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn radius(&self) -> f64;
    fn node_count(&self) -> usize;
    fn node(&self, index: usize) -> &[f64];
    /// Decomposes a nonzero state. Zero is a domain error.
    fn decompose(&self, r: &DilationWeights, x: &[f64]) -> Result<RayDecomposition>;
    /// Largest spacing between neighbouring nodes, as an arc length.
    fn cell_size(&self) -> f64;
}

/// `ln sum_i exp(ln x_i^2 - 2 r_i s) - 2 ln rho`; strictly decreasing in `s`.
fn log_norm_gap(r: &[f64], log_sq: &[(usize, f64)], log_rho2: f64, s: f64) -> f64 {
    let terms: Vec<f64> = log_sq.iter().map(|(i, l)| l - 2.0 * r[*i] * s).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln() - log_rho2
}

/// Finds `ln eps` with `|lambda^r(1/eps) x| = rho`, bisecting from the given
/// log-domain bracket and expanding it up to `eps` in `[1e-12, 1e12]`.
pub fn solve_log_eps_with_bracket(
    r: &DilationWeights,
    x: &[f64],
    rho: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    check_dim("projected state", r.len(), x.len())?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {rho}")));
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("cannot project non-finite state {x:?}")));
    }
    let log_sq: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| (i, 2.0 * c.abs().ln()))
        .collect();
    if log_sq.is_empty() {
        return Err(Error::Domain("the origin has no ray decomposition".into()));
    }
    let w = r.as_slice();
    let log_rho2 = 2.0 * rho.ln();
    let g = |s: f64| log_norm_gap(w, &log_sq, log_rho2, s);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    while g(lo) < 0.0 {
        if lo <= -LOG_EPS_LIMIT {
            return Err(Error::Range(format!("projection of {x:?} needs eps below 1e-12")));
        }
        lo = (2.0 * lo - 1.0).max(-LOG_EPS_LIMIT);
    }
    while g(hi) > 0.0 {
        if hi >= LOG_EPS_LIMIT {
            return Err(Error::Range(format!("projection of {x:?} needs eps above 1e12")));
        }
        hi = (2.0 * hi + 1.0).min(LOG_EPS_LIMIT);
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(ln eps, base)` for the ray through `x` and the sphere of radius `rho`.
pub fn project_to_radius(r: &DilationWeights, x: &[f64], rho: f64) -> Result<(f64, Vec<f64>)> {
    check_dim("projected state", r.len(), x.len())?;
    if x.iter().all(|c| *c == 0.0) {
        return Err(Error::Domain("the origin has no ray decomposition".into()));
    }
    if let Some(c) = r.standard_weight() {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm.is_finite() && norm > 0.0 {
            let ratio = norm / rho;
            let base = x.iter().map(|v| v / ratio).collect();
            return Ok((ratio.ln() / c, base));
        }
    }
    let s = solve_log_eps_with_bracket(r, x, rho, -1.0, 1.0)?;
    Ok((s, dilate_log(r, -s, x)?))
}

/// Regular (azimuth, elevation) lattice on the upper hemisphere of radius `rho`.
#[derive(Debug, Clone)]
pub struct ManifoldGrid {
    rho: f64,
    n_az: usize,
    n_el: usize,
    points: Vec<f64>,
    mirror_x3: bool,
    read_back: ReadBack,
}

impl ManifoldGrid {
    pub fn new(rho: f64, n_az: usize, n_el: usize) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {rho}")));
        }
        if n_az < 2 || n_el < 2 {
            return Err(Error::Domain(format!(
                "sphere grid needs at least 2 nodes per angle, got {n_az}x{n_el}"
            )));
        }
        let mut points = Vec::with_capacity(3 * n_az * n_el);
        for j in 0..n_el {
            let e = Self::elevation_at(n_el, j);
            for i in 0..n_az {
                let a = Self::azimuth_at(n_az, i);
                points.extend_from_slice(&[rho * e.cos() * a.cos(), rho * e.cos() * a.sin(), rho * e.sin()]);
            }
        }
        Ok(Self {
            rho,
            n_az,
            n_el,
            points,
            mirror_x3: false,
            read_back: ReadBack::Bilinear,
        })
    }

    /// Serve queries below the equator by the mirror point `(x1, x2, -x3)`.
    pub fn with_mirror_x3(mut self, mirror: bool) -> Self {
        self.mirror_x3 = mirror;
        self
    }

    pub fn with_read_back(mut self, read_back: ReadBack) -> Self {
        self.read_back = read_back;
        self
    }

    fn azimuth_at(n_az: usize, i: usize) -> f64 {
        -PI + i as f64 * 2.0 * PI / (n_az - 1) as f64
    }

    fn elevation_at(n_el: usize, j: usize) -> f64 {
        j as f64 * FRAC_PI_2 / (n_el - 1) as f64
    }

    pub fn azimuth_count(&self) -> usize {
        self.n_az
    }

    pub fn elevation_count(&self) -> usize {
        self.n_el
    }

    pub fn mirror_x3(&self) -> bool {
        self.mirror_x3
    }

    pub fn read_back(&self) -> ReadBack {
        self.read_back
    }

    pub fn index(&self, i_az: usize, j_el: usize) -> usize {
        j_el * self.n_az + i_az
    }

    /// `(azimuth, elevation)` of node `index`.
    pub fn angles(&self, index: usize) -> (f64, f64) {
        (
            Self::azimuth_at(self.n_az, index % self.n_az),
            Self::elevation_at(self.n_el, index / self.n_az),
        )
    }

    fn weights_at(&self, az: f64, el: f64) -> Vec<(usize, f64)> {
        let fa = ((az + PI) / (2.0 * PI) * (self.n_az - 1) as f64).clamp(0.0, (self.n_az - 1) as f64);
        let fe = (el / FRAC_PI_2 * (self.n_el - 1) as f64).clamp(0.0, (self.n_el - 1) as f64);
        match self.read_back {
            ReadBack::Nearest => vec![(self.index(fa.round() as usize, fe.round() as usize), 1.0)],
            ReadBack::Bilinear => {
                let i0 = (fa.floor() as usize).min(self.n_az - 2);
                let j0 = (fe.floor() as usize).min(self.n_el - 2);
                let (t, s) = (fa - i0 as f64, fe - j0 as f64);
                [
                    (self.index(i0, j0), (1.0 - t) * (1.0 - s)),
                    (self.index(i0 + 1, j0), t * (1.0 - s)),
                    (self.index(i0, j0 + 1), (1.0 - t) * s),
                    (self.index(i0 + 1, j0 + 1), t * s),
                ]
                .into_iter()
                .filter(|(_, w)| *w != 0.0)
                .collect()
            }
        }
    }
}

impl RayManifold for ManifoldGrid {
    fn state_dim(&self) -> usize {
        3
    }

    fn radius(&self) -> f64 {
        self.rho
    }

    fn node_count(&self) -> usize {
        self.n_az * self.n_el
    }

    fn node(&self, index: usize) -> &[f64] {
        &self.points[3 * index..3 * index + 3]
    }

    fn decompose(&self, r: &DilationWeights, x: &[f64]) -> Result<RayDecomposition> {
        check_dim("sphere grid query", 3, x.len())?;
        let (log_eps, base) = project_to_radius(r, x, self.rho)?;
        let az = base[1].atan2(base[0]);
        let mut el = base[2].atan2(base[0].hypot(base[1]));
        if el < 0.0 {
            if !self.mirror_x3 {
                return Err(Error::UncoveredAngle {
                    state: x.to_vec(),
                    elevation: el,
                });
            }
            el = -el;
        }
        Ok(RayDecomposition {
            eps: log_eps.exp(),
            log_eps,
            interp: self.weights_at(az, el),
            base,
        })
    }

    fn cell_size(&self) -> f64 {
        let da = 2.0 * PI / (self.n_az - 1) as f64;
        let de = FRAC_PI_2 / (self.n_el - 1) as f64;
        self.rho * da.max(de)
    }
}

pub fn build_sphere_grid(rho: f64, n_az: usize, n_el: usize) -> Result<ManifoldGrid> {
    ManifoldGrid::new(rho, n_az, n_el)
}

/// The zero-dimensional manifold `{-rho, rho}` of a scalar state space, or a
/// subset of it. With `mirror` set a missing sign is served by the other node.
#[derive(Debug, Clone)]
pub struct PointManifold {
    rho: f64,
    nodes: Vec<Vec<f64>>,
    mirror: bool,
}

impl PointManifold {
    pub fn new(rho: f64, signs: &[f64], mirror: bool) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {rho}")));
        }
        if signs.is_empty() || signs.iter().any(|s| *s != 1.0 && *s != -1.0) {
            return Err(Error::Domain(format!("node signs must be +1 or -1, got {signs:?}")));
        }
        Ok(Self {
            rho,
            nodes: signs.iter().map(|s| vec![s * rho]).collect(),
            mirror,
        })
    }
}

impl RayManifold for PointManifold {
    fn state_dim(&self) -> usize {
        1
    }

    fn radius(&self) -> f64 {
        self.rho
    }

    fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn node(&self, index: usize) -> &[f64] {
        &self.nodes[index]
    }

    fn decompose(&self, r: &DilationWeights, x: &[f64]) -> Result<RayDecomposition> {
        let (log_eps, base) = project_to_radius(r, x, self.rho)?;
        let sign = base[0].signum();
        let found = self
            .nodes
            .iter()
            .position(|n| n[0].signum() == sign)
            .or(self.mirror.then_some(0));
        match found {
            Some(i) => Ok(RayDecomposition {
                eps: log_eps.exp(),
                log_eps,
                base,
                interp: vec![(i, 1.0)],
            }),
            None => Err(Error::UncoveredAngle {
                state: x.to_vec(),
                elevation: sign,
            }),
        }
    }

    fn cell_size(&self) -> f64 {
        0.0
    }
}

/// `sum_k w_k v_k` over the decomposition's interpolation weights.
pub fn interpolate(manifold: &dyn RayManifold, values: &[f64], decomp: &RayDecomposition) -> Result<f64> {
    check_dim("node value table", manifold.node_count(), values.len())?;
    Ok(interpolate_unchecked(values, decomp))
}

pub(crate) fn interpolate_unchecked(values: &[f64], decomp: &RayDecomposition) -> f64 {
    decomp.interp.iter().map(|(i, w)| w * values[*i]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub samples: usize,
    /// States whose base point fell outside the gridded angles.
    pub uncovered: Vec<Vec<f64>>,
    pub failures: usize,
    pub max_reconstruction_residual: f64,
    pub passed: bool,
}

/// Projects random nonzero states and checks each one decomposes and
/// reconstructs to `1e-9` relative.
pub fn coverage_check(
    manifold: &dyn RayManifold,
    r: &DilationWeights,
    opts: &SamplingOptions,
) -> Result<CoverageReport> {
    check_dim("coverage weights", manifold.state_dim(), r.len())?;
    let mut sampler = opts.rng();
    let mut uncovered = Vec::new();
    let mut failures = 0;
    let mut max_res: f64 = 0.0;
    for _ in 0..opts.samples {
        let x = sampler.state(r.len());
        if x.iter().all(|c| *c == 0.0) {
            continue;
        }
        match manifold.decompose(r, &x) {
            Ok(d) => {
                let back = dilate_log(r, d.log_eps, &d.base)?;
                let wsum: f64 = d.interp.iter().map(|(_, w)| w).sum();
                max_res = max_res.max(max_relative_residual(&back, &x));
                if (wsum - 1.0).abs() > 1e-12 || d.interp.iter().any(|(_, w)| *w < 0.0) {
                    failures += 1;
                }
            }
            Err(Error::UncoveredAngle { state, .. }) => uncovered.push(state),
            Err(_) => failures += 1,
        }
    }
    Ok(CoverageReport {
        samples: opts.samples,
        passed: uncovered.is_empty() && failures == 0 && max_res <= 1e-9,
        uncovered,
        failures,
        max_reconstruction_residual: max_res,
    })
}

/// Formats a value with 17 significant digits (exact round trip); infinities as `inf`.
pub fn format_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Writes one row per node, row-major in (elevation, azimuth), with header
/// `azimuth,elevation,x1,x2,x3` followed by the named value columns.
pub fn write_grid_table(path: &Path, grid: &ManifoldGrid, columns: &[(&str, &[f64])]) -> Result<()> {
    for (name, col) in columns {
        if col.len() != grid.node_count() {
            return Err(Error::Contract(format!(
                "column '{name}' has {} values for {} nodes",
                col.len(),
                grid.node_count()
            )));
        }
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["azimuth", "elevation", "x1", "x2", "x3"];
    header.extend(columns.iter().map(|(n, _)| *n));
    w.write_record(&header)?;
    for idx in 0..grid.node_count() {
        let (a, e) = grid.angles(idx);
        let p = grid.node(idx);
        let mut row = vec![format_value(a), format_value(e), format_value(p[0]), format_value(p[1]), format_value(p[2])];
        row.extend(columns.iter().map(|(_, c)| format_value(c[idx])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV written by this crate into its header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Config(format!("{}: line {}: '{f}' is not a number", path.display(), line + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes `key=value` lines.
pub fn write_metadata(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(f, "{k}={v}")?;
    }
    f.flush()?;
    Ok(())
}
