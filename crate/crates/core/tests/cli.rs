use std::fs;
use std::path::{Path, PathBuf};

use gfkit::cli::{main_with, EXIT_OK, EXIT_VALIDATION};
use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn gfkit(args: &[&str]) -> i32 {
    let mut argv = vec!["gfkit"];
    argv.extend_from_slice(args);
    main_with(argv)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn baseline_run_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = scenario("baseline.cfg");
    for out in [&a, &b] {
        assert_eq!(gfkit(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]), EXIT_OK);
    }
    let summary = json(&a.join("summary.json"));
    for key in [
        "lambda",
        "direct_residual",
        "dual_residual",
        "sandwich_C",
        "threshold_alpha",
        "conservation_drift",
        "sigma",
        "goodness",
        "periodic",
    ] {
        assert!(summary.get(key).is_some(), "summary.json lacks {key}");
    }
    let diag = json(&a.join("diagnostics.json"));
    let sigma = diag["fits"][0]["fit"]["sigma"].as_f64().unwrap();
    assert!(sigma > 0.0);
    assert_eq!(summary["periodic"], Value::Bool(false));

    let files = [
        "validation.json",
        "perron.csv",
        "summary.json",
        "trace.csv",
        "aeg.csv",
        "diagnostics.json",
        "oracle.csv",
        "aeg.svg",
        "profile_g.svg",
        "profile_phi.svg",
    ];
    for f in files {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        if !f.ends_with(".svg") {
            assert!(x == y, "{f} differs between reruns");
        }
    }
    let header = &csv_rows(&a.join("oracle.csv"))[0];
    assert_eq!(header[0], "t");
    assert!(header.contains(&"mass_se".to_string()));
}

#[test]
fn periodic_scenario_reports_oscillation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("periodic.cfg");
    let out = dir.path().join("p");
    assert_eq!(gfkit(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet", "--no-oracle"]), EXIT_OK);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["periodic"], Value::Bool(true));
    let period = summary["period"].as_f64().unwrap();
    assert!((period - std::f64::consts::LN_2).abs() < 0.01, "period {period}");
}

#[test]
fn malformed_kernel_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("baseline.cfg"))
        .unwrap()
        .replace(r#"kernel = { family = "mitosis" }"#, r#"kernel = { family = "custom", atoms = [[0.5, 1.5]] }"#);
    assert!(text.contains("custom"));
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    assert_eq!(gfkit(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]), EXIT_VALIDATION);
    let err = gfkit::cli::Scenario::load(&cfg).unwrap().coefficients().unwrap_err();
    assert_eq!(err.code, EXIT_VALIDATION);
    assert!(err.message.contains("H℘"), "{}", err.message);
}

#[test]
fn unparseable_scenario_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.cfg");
    fs::write(&cfg, "name = [\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(gfkit(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]), EXIT_VALIDATION);
}

#[test]
fn alpha_sweep_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("baseline.cfg");
    let out = dir.path().join("s");
    let code = gfkit(&["sweep", cfg.to_str().unwrap(), "--param", "alpha=1.5,2,3", "--out", out.to_str().unwrap(), "--jobs", "3", "--quiet"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    let (alpha, status, sigma) = (col("alpha"), col("status"), col("sigma"));
    for (row, expected) in rows[1..].iter().zip(["1.5", "2", "3"]) {
        assert_eq!(row[alpha], expected);
        assert_eq!(row[status], "ok");
        assert!(row[sigma].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn grid_sweep_converges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("baseline.cfg");
    let out = dir.path().join("n");
    let code = gfkit(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "n=512,1024,2048",
        "--param",
        "t_end=2",
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "3",
        "--quiet",
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out.join("sweep.csv"));
    let lam = rows[0].iter().position(|h| h == "lambda").unwrap();
    let l: Vec<f64> = rows[1..].iter().map(|r| r[lam].parse().unwrap()).collect();
    let (d1, d2) = ((l[0] - l[1]).abs(), (l[1] - l[2]).abs());
    assert!(d2 < d1 / 2.0 * 1.05, "λ differences {d1:e}, {d2:e}");
}

#[test]
fn empty_range_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("baseline.cfg");
    let out = dir.path().join("e");
    assert_eq!(gfkit(&["sweep", cfg.to_str().unwrap(), "--param", "alpha=", "--out", out.to_str().unwrap(), "--quiet"]), EXIT_OK);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("point,alpha,status"));
}

#[test]
fn failed_points_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("baseline.cfg");
    let out = dir.path().join("f");
    // a negative step is rejected by the evolution config
    let code = gfkit(&["sweep", cfg.to_str().unwrap(), "--param", "dt=-1,0.001", "--param", "t_end=1", "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out.join("sweep.csv"));
    let status = rows[0].iter().position(|h| h == "status").unwrap();
    assert_eq!(rows[1][status], format!("exit_{EXIT_VALIDATION}"));
    assert_eq!(rows[2][status], "ok");
}
