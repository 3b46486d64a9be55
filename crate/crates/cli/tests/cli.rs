use std::path::Path;
use std::process::{Command, Output};

fn homdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homdp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "[manifold]\nn_az = 9\nn_el = 9\n[vi]\ninput_count = 11\n\
         [classic]\ncounts = [9, 9, 1]\ninput_count = 11\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn verify_exits_one_on_the_default_cost() {
    let o = homdp(&["verify"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("PASS dynamics homogeneity"), "{text}");
    assert!(text.contains("FAIL cost homogeneity"), "{text}");
}

#[test]
fn riccati_prints_the_deviation() {
    let o = homdp(&["riccati"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("deviation"), "{}", stdout(&o));
}

#[test]
fn run_compare_and_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for cmd in [&["homvi", "run"][..], &["classicvi", "run"], &["compare"]] {
        let mut args = vec!["--config", cfg.as_str(), "--out", out];
        args.extend_from_slice(cmd);
        let o = homdp(&args);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["homvi_iter1.csv", "homvi_iter1.meta", "classic_iter1.csv", "error_surface.csv"] {
        assert!(Path::new(out).join(f).exists(), "missing {f}");
    }
    let o = homdp(&["--config", &cfg, "--out", out, "query", "--state", "-0.3,0.2,1", "--iter", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("lower"), "{}", stdout(&o));
}

#[test]
fn scale_demo_identity_needs_a_homogeneous_cost() {
    let demo = ["scale-demo", "--state", "1,0,1", "--eps", "2", "--horizon", "2", "--inputs", "0.5,-0.25", "--grid-count", "3"];
    // u^2 is not of degree 2 under q = 3, so the identity fails for nonzero inputs.
    assert_eq!(homdp(&demo).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("warped.toml");
    std::fs::write(&path, "[cost]\nkind = \"signed_power_quadratic\"\n").unwrap();
    let mut args = vec!["--config", path.to_str().unwrap()];
    args.extend_from_slice(&demo);
    let o = homdp(&args);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[vi]\niterations = 1\nwidth = 3\n").unwrap();
    let o = homdp(&["--config", path.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("width"), "{err}");
}
