use super::*;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.manifold.n_az = 21;
    c.manifold.n_el = 21;
    c.vi.input_count = 21;
    c.classic.counts = vec![21, 21, 1];
    c.classic.input_count = 21;
    c.dilation.check_samples = 200;
    c
}

#[test]
fn default_verify_reports_cost_degree_mismatch() {
    let cs = CaseStudy::new(small()).unwrap();
    let rep = cmd_verify(&cs).unwrap();
    assert!(rep.get("dynamics homogeneity").unwrap().passed, "{rep}");
    assert!(rep.get("initial value homogeneity").unwrap().passed, "{rep}");
    assert!(rep.get("solution scaling").unwrap().passed, "{rep}");
    assert!(rep.get("manifold coverage").unwrap().passed, "{rep}");
    assert!(rep.get("cost degree bracket").unwrap().passed, "{rep}");
    // u^2 scales with eps^6 under q = 3, so the quadratic cost is not of degree 2.
    assert!(!rep.get("cost homogeneity").unwrap().passed, "{rep}");
    assert!(!rep.passed());
}

#[test]
fn warped_cost_passes_every_check() {
    let mut c = small();
    c.cost.kind = CostKind::SignedPowerQuadratic;
    let rep = cmd_verify(&CaseStudy::new(c).unwrap()).unwrap();
    assert!(rep.passed(), "{rep}");
}

#[test]
fn misdeclared_nu_is_located() {
    let mut c = small();
    c.dilation.nu = 2.0;
    let rep = cmd_verify(&CaseStudy::new(c).unwrap()).unwrap();
    let line = rep.get("dynamics homogeneity").unwrap();
    assert!(!line.passed);
    assert!(line.detail.contains("worst in row"), "{}", line.detail);
}

#[test]
fn zero_cost_is_homogeneous_for_any_degree() {
    for mu in [0.5, 2.0, 7.0] {
        let mut c = small();
        c.cost.kind = CostKind::Zero;
        c.cost.v0 = InitialKind::Zero;
        c.dilation.mu = mu;
        let rep = cmd_verify(&CaseStudy::new(c).unwrap()).unwrap();
        assert!(rep.get("cost homogeneity").unwrap().passed, "{rep}");
    }
}

#[test]
fn homvi_run_writes_tables_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.manifold.n_az = 5;
    c.manifold.n_el = 3;
    let cs = CaseStudy::new(c).unwrap();
    let run = cmd_homvi_run(&cs, dir.path()).unwrap();
    assert_eq!(run.envelopes.len(), 2);
    let (header, rows) = read_table(&dir.path().join("homvi_iter0.csv")).unwrap();
    assert_eq!(header, ["azimuth", "elevation", "x1", "x2", "x3", "lower", "upper"]);
    // Node (1.5, 0, 0): azimuth 0 is the middle of 5, elevation 0 is the first row.
    let row = &rows[2];
    assert_eq!(&row[2..5], &[1.5, 0.0, 0.0]);
    assert!((row[5] - 15.3).abs() < 1e-12 && row[5] == row[6]);
    let meta = std::fs::read_to_string(dir.path().join("homvi_iter1.meta")).unwrap();
    for key in ["iteration=1", "mu=2", "nu=3", "radius=1.5", "M=21", "input_min=-5", "input_max=5"] {
        assert!(meta.lines().any(|l| l == key), "missing {key} in\n{meta}");
    }
    let q = cmd_query(&cs, dir.path(), &[0.3, -0.2, 1.0], 1).unwrap();
    let direct = run.envelopes[1].query(&[0.3, -0.2, 1.0]).unwrap();
    assert_eq!(q.value, direct);

    let mut other = cs.config.clone();
    other.manifold.radius = 2.0;
    let err = cmd_query(&CaseStudy::new(other).unwrap(), dir.path(), &[1.0, 0.0, 1.0], 1);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn classic_run_header_and_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cs = CaseStudy::new(small()).unwrap();
    let run = cmd_classicvi_run(&cs, dir.path()).unwrap();
    assert!(run.tables[1].out_of_domain_fraction > 0.0);
    let (header, rows) = read_table(&dir.path().join("classic_iter1.csv")).unwrap();
    assert_eq!(header, ["x1", "x2", "x3", "value", "policy_input"]);
    assert_eq!(rows.len(), 21 * 21);
}

#[test]
fn compare_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cs = CaseStudy::new(small()).unwrap();
    let first = cmd_compare(&cs, a.path()).unwrap();
    cmd_compare(&cs, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("error_surface.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let (da, db) = first.summary.origin.unwrap();
    assert!(da.abs() <= 1e-9 && db.abs() <= 1e-9);
}

#[test]
fn scale_demo_hand_value() {
    let cs = CaseStudy::van_der_pol().unwrap();
    let demo = cmd_scale_demo(&cs, &[1.0, 0.0, 1.0], 2.0, 2, None, 3).unwrap();
    assert_eq!(demo.identity.base.value(), 3.0);
    assert!(demo.identity.residual < 1e-12);
    let one = cmd_scale_demo(&cs, &[0.4, -0.1, 0.8], 1.0, 2, None, 3).unwrap();
    assert_eq!(one.identity.residual, 0.0);
    assert_eq!(one.optimal.residual, 0.0);
}

#[test]
fn scale_demo_rejects_unsafe_horizon() {
    let cs = CaseStudy::van_der_pol().unwrap();
    assert!(matches!(
        cmd_scale_demo(&cs, &[1.0, 0.0, 1.0], 10.0, 8, None, 3),
        Err(Error::Range(_))
    ));
}

#[test]
fn riccati_matches_configured_p() {
    let rep = cmd_riccati(&CaseStudy::van_der_pol().unwrap()).unwrap();
    assert!(rep.max_deviation.unwrap() < 0.05);
    assert_eq!(rep.embedded.shape(), (3, 3));
}

#[test]
fn monomial_unit_weight_extension_matches_builtin() {
    let text = r#"
[system]
kind = "monomials"
monomial_r = [1.0, 1.0]
monomial_q = [3.0]
extend = "unit_weight"
monomials = [
  { row = 0, coef = 1.0, x = [1, 0], u = [0] },
  { row = 0, coef = 1.0, x = [0, 1], u = [0] },
  { row = 1, coef = 1.0, x = [0, 1], u = [0] },
  { row = 1, coef = 1.0, x = [0, 1], u = [0] },
  { row = 1, coef = -1.0, x = [2, 1], u = [0] },
  { row = 1, coef = -1.0, x = [1, 0], u = [0] },
  { row = 1, coef = 1.0, x = [0, 0], u = [1] },
]
"#;
    let cs = CaseStudy::new(RunConfig::parse(text, "t").unwrap()).unwrap();
    let builtin = van_der_pol_extended(1.0, 1.0, 1.0).unwrap();
    for x in [[0.3, -0.7, 1.0], [1.2, 0.5, -0.4]] {
        let a = cs.system.step(&x, &[0.6]).unwrap();
        let b = builtin.step(&x, &[0.6]).unwrap();
        assert!(crate::max_relative_residual(&a, &b) < 1e-14);
    }
}
