//! Run configuration: a TOML document with the sections `system`, `dilation`,
//! `cost`, `manifold`, `vi`, `classic` and `output`. Every section and key is
//! optional and falls back to the desk-scale van der Pol defaults; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Three-state homogeneous van der Pol step with parameters `a`, `b`, `t`.
    VanDerPol,
    /// `x+ = A x + B u`.
    Linear,
    /// Sum of monomials, optionally made homogeneous by an auxiliary state.
    Monomials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    None,
    FractionalWeight,
    UnitWeight,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialEntry {
    pub row: usize,
    pub coef: f64,
    pub x: Vec<u32>,
    pub u: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub kind: SystemKind,
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub a_matrix: Vec<Vec<f64>>,
    pub b_matrix: Vec<Vec<f64>>,
    /// Monomials are written against the `r`, `q` weights below.
    pub monomials: Vec<MonomialEntry>,
    pub monomial_r: Vec<f64>,
    pub monomial_q: Vec<f64>,
    pub extend: Extension,
    /// Degree of the extended field; derived from the monomials when absent.
    pub extend_nu: Option<f64>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            kind: SystemKind::VanDerPol,
            a: 1.0,
            b: 1.0,
            t: 1.0,
            a_matrix: Vec::new(),
            b_matrix: Vec::new(),
            monomials: Vec::new(),
            monomial_r: Vec::new(),
            monomial_q: Vec::new(),
            extend: Extension::None,
            extend_nu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilationSection {
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub nu: f64,
    pub mu: f64,
    /// Random samples per homogeneity check.
    pub check_samples: usize,
    pub check_seed: u64,
    pub check_tol: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Horizon used by the trajectory and cost scaling checks.
    pub check_horizon: usize,
}

impl Default for DilationSection {
    fn default() -> Self {
        Self {
            r: vec![1.0, 1.0, 1.0],
            q: vec![3.0],
            nu: 3.0,
            mu: 2.0,
            check_samples: 1000,
            check_seed: 0x5eed,
            check_tol: 1e-9,
            eps_min: 0.5,
            eps_max: 2.0,
            check_horizon: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `x'Qx + u'Ru` built on unit weights.
    Quadratic,
    /// Quadratic form of signed powers, homogeneous for the declared pair.
    SignedPowerQuadratic,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// `x'Px`.
    Quadratic,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    pub q_matrix: Vec<Vec<f64>>,
    pub r_matrix: Vec<Vec<f64>>,
    pub v0: InitialKind,
    pub p_matrix: Vec<Vec<f64>>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::Quadratic,
            q_matrix: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]],
            r_matrix: vec![vec![1.0]],
            v0: InitialKind::Quadratic,
            p_matrix: vec![vec![6.8, 4.0, 0.0], vec![4.0, 11.5, 0.0], vec![0.0, 0.0, 0.0]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadBackKind {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSection {
    pub radius: f64,
    pub n_az: usize,
    pub n_el: usize,
    /// Read states with `x3 < 0` through the mirror image `x3 -> -x3`.
    pub mirror_x3: bool,
    pub read_back: ReadBackKind,
}

impl Default for ManifoldSection {
    fn default() -> Self {
        Self {
            radius: 1.5,
            n_az: 101,
            n_el: 101,
            mirror_x3: true,
            read_back: ReadBackKind::Bilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViSection {
    pub iterations: usize,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    /// Values per input dimension (M).
    pub input_count: usize,
}

impl Default for ViSection {
    fn default() -> Self {
        Self {
            iterations: 1,
            input_min: vec![-5.0],
            input_max: vec![5.0],
            input_count: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfDomainKind {
    Clamp,
    V0Extend,
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicSection {
    /// Box corners; a coordinate with `lo == hi` and count 1 is pinned.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub iterations: usize,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub input_count: usize,
    pub out_of_domain: OutOfDomainKind,
}

impl Default for ClassicSection {
    fn default() -> Self {
        Self {
            lo: vec![-1.0, -1.0, 1.0],
            hi: vec![1.0, 1.0, 1.0],
            counts: vec![101, 101, 1],
            iterations: 1,
            input_min: vec![-3.0],
            input_max: vec![3.0],
            input_count: 101,
            out_of_domain: OutOfDomainKind::V0Extend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Radii `[inner, outer]` of the annulus in the `(x1, x2)` plane used by
    /// the comparison summary.
    pub annulus: [f64; 2],
    /// Relative tolerance of the envelope sign checks in the comparison.
    pub sandwich_tol: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            annulus: [1.0, 1.25],
            sandwich_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub dilation: DilationSection,
    pub cost: CostSection,
    pub manifold: ManifoldSection,
    pub vi: ViSection,
    pub classic: ClassicSection,
    pub output: OutputSection,
}

/// Line (1-based) of `key` inside `[section]`, if written explicitly.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Validator<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Validator<'_> {
    fn fail(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let at = match locate(self.text, section, key) {
            Some(line) => format!("line {line}"),
            None => "default value".to_string(),
        };
        Error::Config(format!("{}: {at}: {section}.{key}: {msg}", self.origin))
    }

    fn check(&self, ok: bool, section: &str, key: &str, msg: impl std::fmt::Display) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(section, key, msg))
        }
    }

    fn square(&self, m: &[Vec<f64>], n: usize, section: &str, key: &str) -> Result<()> {
        let ok = m.len() == n && m.iter().all(|row| row.len() == n);
        self.check(ok, section, key, format!("expected a {n}x{n} matrix"))
    }
}

impl RunConfig {
    /// Parses and validates a configuration document. `origin` names the
    /// source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate_with(text, origin)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with("", "configuration")
    }

    /// State dimension of the configured system.
    pub fn state_dim(&self) -> usize {
        let s = &self.system;
        match s.kind {
            SystemKind::VanDerPol => 3,
            SystemKind::Linear => s.a_matrix.len(),
            SystemKind::Monomials => s.monomial_r.len() + usize::from(s.extend != Extension::None),
        }
    }

    pub fn input_dim(&self) -> usize {
        let s = &self.system;
        match s.kind {
            SystemKind::VanDerPol => 1,
            SystemKind::Linear => s.b_matrix.first().map_or(0, Vec::len),
            SystemKind::Monomials => s.monomial_q.len(),
        }
    }

    fn validate_with(&self, text: &str, origin: &str) -> Result<()> {
        let v = Validator { text, origin };
        let s = &self.system;
        match s.kind {
            SystemKind::VanDerPol => {
                for (k, x) in [("a", s.a), ("b", s.b), ("t", s.t)] {
                    v.check(x.is_finite(), "system", k, "must be finite")?;
                }
            }
            SystemKind::Linear => {
                let n = s.a_matrix.len();
                v.check(n > 0, "system", "a_matrix", "required for a linear system")?;
                v.square(&s.a_matrix, n, "system", "a_matrix")?;
                let m = self.input_dim();
                let ok = s.b_matrix.len() == n && m > 0 && s.b_matrix.iter().all(|r| r.len() == m);
                v.check(ok, "system", "b_matrix", format!("expected {n} rows of equal positive length"))?;
            }
            SystemKind::Monomials => {
                v.check(!s.monomial_r.is_empty(), "system", "monomial_r", "required for a monomial system")?;
                v.check(!s.monomial_q.is_empty(), "system", "monomial_q", "required for a monomial system")?;
                for (i, m) in s.monomials.iter().enumerate() {
                    let ok = m.row < s.monomial_r.len()
                        && m.x.len() == s.monomial_r.len()
                        && m.u.len() == s.monomial_q.len();
                    v.check(ok, "system", "monomials", format!("entry {i} has inconsistent row or exponent lengths"))?;
                }
            }
        }
        let (n, m) = (self.state_dim(), self.input_dim());
        let d = &self.dilation;
        v.check(d.r.len() == n, "dilation", "r", format!("expected {n} weights"))?;
        v.check(d.q.len() == m, "dilation", "q", format!("expected {m} weights"))?;
        v.check(d.nu.is_finite() && d.nu > 0.0, "dilation", "nu", "must be positive")?;
        v.check(d.mu.is_finite() && d.mu >= 0.0, "dilation", "mu", "must be nonnegative")?;
        v.check(d.check_samples > 0, "dilation", "check_samples", "must be positive")?;
        v.check(d.check_tol > 0.0, "dilation", "check_tol", "must be positive")?;
        v.check(
            d.eps_min > 0.0 && d.eps_min <= d.eps_max && d.eps_max.is_finite(),
            "dilation",
            "eps_min",
            "need 0 < eps_min <= eps_max",
        )?;

        let c = &self.cost;
        if c.kind != CostKind::Zero {
            v.square(&c.q_matrix, n, "cost", "q_matrix")?;
            v.square(&c.r_matrix, m, "cost", "r_matrix")?;
        }
        if c.v0 == InitialKind::Quadratic {
            v.square(&c.p_matrix, n, "cost", "p_matrix")?;
        }

        let g = &self.manifold;
        v.check(g.radius.is_finite() && g.radius > 0.0, "manifold", "radius", "must be positive")?;
        v.check(g.n_az >= 2, "manifold", "n_az", "need at least 2 azimuth nodes")?;
        v.check(g.n_el >= 2, "manifold", "n_el", "need at least 2 elevation nodes")?;

        let vi = &self.vi;
        v.check(vi.input_min.len() == m, "vi", "input_min", format!("expected {m} entries"))?;
        v.check(vi.input_max.len() == m, "vi", "input_max", format!("expected {m} entries"))?;
        v.check(vi.input_count > 0, "vi", "input_count", "must be positive")?;

        let cl = &self.classic;
        v.check(cl.lo.len() == n, "classic", "lo", format!("expected {n} entries"))?;
        v.check(cl.hi.len() == n, "classic", "hi", format!("expected {n} entries"))?;
        v.check(cl.counts.len() == n, "classic", "counts", format!("expected {n} entries"))?;
        for i in 0..n {
            let (lo, hi, k) = (cl.lo[i], cl.hi[i], cl.counts[i]);
            let ok = (k == 1 && lo == hi) || (k >= 2 && lo < hi);
            v.check(ok, "classic", "counts", format!("axis {i}: use count 1 with lo == hi, or count >= 2 with lo < hi"))?;
        }
        v.check(cl.input_min.len() == m, "classic", "input_min", format!("expected {m} entries"))?;
        v.check(cl.input_max.len() == m, "classic", "input_max", format!("expected {m} entries"))?;
        v.check(cl.input_count > 0, "classic", "input_count", "must be positive")?;

        let o = &self.output;
        v.check(
            0.0 <= o.annulus[0] && o.annulus[0] < o.annulus[1],
            "output",
            "annulus",
            "need 0 <= inner < outer",
        )?;
        v.check(o.sandwich_tol >= 0.0, "output", "sandwich_tol", "must be nonnegative")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("", "t").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_located() {
        let err = RunConfig::parse("[vi]\niterations = 2\nsweeps = 3\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("sweeps"), "{msg}");
    }

    #[test]
    fn syntax_error_is_located() {
        let msg = RunConfig::parse("[manifold]\nradius = = 1\n", "c").unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn dimension_error_is_located() {
        let text = "[dilation]\nnu = 3\nr = [1.0, 1.0]\n";
        let msg = RunConfig::parse(text, "c").unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("dilation.r"), "{msg}");
    }

    #[test]
    fn pinned_axis_rules() {
        let msg = RunConfig::parse("[classic]\ncounts = [101, 101, 2]\n", "c").unwrap_err().to_string();
        assert!(msg.contains("axis 2"), "{msg}");
    }

    #[test]
    fn monomial_dimensions() {
        let text = r#"
[system]
kind = "monomials"
monomial_r = [1.0]
monomial_q = [1.0]
extend = "unit_weight"
monomials = [{ row = 0, coef = 1.0, x = [1], u = [0] }]

[dilation]
r = [1.0, 1.0]
q = [1.0]
"#;
        // The 3-state cost defaults no longer fit once the state dimension is 2.
        let msg = RunConfig::parse(text, "c").unwrap_err().to_string();
        assert!(msg.contains("cost.q_matrix") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn shipped_config_equals_default() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/van_der_pol.toml");
        assert_eq!(RunConfig::from_file(&path).unwrap(), RunConfig::default());
    }
}
