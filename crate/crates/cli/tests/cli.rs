use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tvcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvcov")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const GNEIT_CONFIG: &str = r#"{
  "model": {"variant": "gneit", "fixed": {"a": 3.0, "beta": 0.5, "gamma": 0.5, "delta": 0.5}},
  "simulate": {
    "nx": 10, "ny": 10, "nt": 2,
    "model": {"variant": "gneit", "sigma": 1.5, "a": 3.0, "gamma": 0.5, "beta": 0.5,
              "delta": 0.5, "alpha": 8.0, "nu": 1.0}
  }
}"#;

#[test]
fn simulate_then_fit_recovers_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, GNEIT_CONFIG).unwrap();
    let sim = dir.path().join("sim");
    ok(&tvcov(&["simulate", "--config", p(&cfg), "--output", p(&sim), "--seed", "11"]));
    let data = sim.join("data.csv");
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 201);
    let fit = dir.path().join("fit");
    ok(&tvcov(&["fit", "--config", p(&cfg), "--input", p(&data), "--output", p(&fit)]));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("fit.json")).unwrap()).unwrap();
    let sigma = result["model"]["sigma"].as_f64().unwrap();
    assert!((sigma - 1.5).abs() <= 0.2 * 1.5, "sigma {sigma}");
    assert_eq!(result["model"]["variant"], "gneit");
}

#[test]
fn outputs_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, GNEIT_CONFIG).unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let sim = dir.path().join(format!("sim{k}"));
        let fit = dir.path().join(format!("fit{k}"));
        ok(&tvcov(&["simulate", "--config", p(&cfg), "--output", p(&sim), "--seed", "5"]));
        ok(&tvcov(&[
            "fit", "--config", p(&cfg), "--input", p(&sim.join("data.csv")), "--output", p(&fit), "--m-s", "4",
        ]));
        files.push((fs::read(sim.join("data.csv")).unwrap(), fs::read(fit.join("fit.json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn validate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, "x,y,t,value\n0,0,0,1.5\n1,0,0,-2\n0,1,0.5,3\n").unwrap();
    let pred = dir.path().join("pred.csv");
    fs::write(&pred, "x,y,t,mean,variance\n1,0,0,-2,0\n0,0,0,1.5,0\n0,1,0.5,3,0\n").unwrap();
    let out = dir.path().join("out");
    ok(&tvcov(&["validate", "--input", p(&data), "--predictions", p(&pred), "--output", p(&out)]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scores.json")).unwrap()).unwrap();
    assert_eq!(r["rmse"], 0.0);
    assert_eq!(r["mcrps"], 0.0);
    assert!(r["empirical_coverage"].as_array().unwrap().iter().all(|c| c == 1.0));
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("p,coverage,width\n"));
    assert_eq!(curves.lines().count(), 100);
}

#[test]
fn oversized_partition_names_m_s() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&tvcov(&["simulate", "--output", p(&sim), "--case", "4"]));
    let out = tvcov(&[
        "fit",
        "--input",
        p(&sim.join("data.csv")),
        "--output",
        p(&dir.path().join("fit")),
        "--m-s",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "usage");
    assert!(e["error"]["message"].as_str().unwrap().contains("M_s"), "{e}");
}

#[test]
fn config_errors_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"partition": {"m_s": 0, "r_s": 1, "m_t": 1, "r_t": 0}, "model": {"variant": "sep", "fixed": {"beta": 0.3}}}"#,
    )
    .unwrap();
    let out = tvcov(&["fit", "--config", p(&cfg), "--input", "/nonexistent.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    for needle in ["output", "input", "M_s", "R_t", "beta"] {
        assert!(msg.contains(needle), "'{needle}' missing from {msg}");
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"partitions": {}}"#).unwrap();
    let out = tvcov(&["simulate", "--config", p(&cfg), "--output", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_data_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, "x,y,t,value\n").unwrap();
    let out = tvcov(&["trend", "--input", p(&data), "--output", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "data");

    fs::write(&data, "x,y,t,value\n0,0,0,1\n0,0,0,2\n").unwrap();
    let out = tvcov(&["trend", "--input", p(&data), "--output", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("lines 2 and 3"));
}

#[test]
fn usage_errors_exit_with_code_1() {
    assert_eq!(tvcov(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tvcov(&["fit", "--model", "quadratic"]).status.code(), Some(1));
    assert!(tvcov(&["--help"]).status.success());
}

#[test]
fn trend_and_day_of_year_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("x,y,t,value\n");
    for day in [1, 40, 95, 160, 200, 250, 300, 365] {
        for (x, y) in [(0.1, 0.2), (0.7, 0.3), (0.4, 0.9), (0.8, 0.8)] {
            text.push_str(&format!("{x},{y},{day},7.5\n"));
        }
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    ok(&tvcov(&["trend", "--input", p(&data), "--output", p(&out), "--scale-time", "day-of-year"]));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("trend.json")).unwrap()).unwrap();
    assert_eq!(t["terms"][0]["name"], "intercept");
    assert!((t["terms"][0]["coefficient"].as_f64().unwrap() - 7.5).abs() < 1e-9);
    let resid = fs::read_to_string(out.join("residuals.csv")).unwrap();
    let last = resid.lines().last().unwrap();
    assert!(last.starts_with("0.8,0.8,1,"), "{last}");

    fs::write(&data, "x,y,t,value\n0,0,0,1\n").unwrap();
    let out = tvcov(&["trend", "--input", p(&data), "--output", p(&out), "--scale-time", "day-of-year"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_writes_requested_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, GNEIT_CONFIG).unwrap();
    let sim = dir.path().join("sim");
    ok(&tvcov(&["simulate", "--config", p(&cfg), "--output", p(&sim)]));
    let targets = dir.path().join("targets.csv");
    fs::write(&targets, "t,x,y\n1,0.55,0.55\n0,0,0\n").unwrap();
    let out = dir.path().join("pred");
    ok(&tvcov(&[
        "predict",
        "--input",
        p(&sim.join("data.csv")),
        "--fit",
        p(&sim.join("truth.json")),
        "--targets",
        p(&targets),
        "--output",
        p(&out),
        "--p",
        "0.5,0.95",
    ]));
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,t,mean,variance,lo_0.5,hi_0.5,lo_0.95,hi_0.95");
    let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // an observed grid point is interpolated exactly
    assert!(row[4] <= 1e-8, "{row:?}");
    assert!((row[5] - row[3]).abs() < 1e-3 && (row[8] - row[3]).abs() < 1e-3);
}

#[test]
fn simstudy_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"simstudy": {"cases": [4], "nx": 5, "ny": 5, "nt": 5, "n_runs": 1, "models": ["gneit", "sep"],
            "partition": {"m_s": 4, "r_s": 1, "m_t": 3, "r_t": 1},
            "optimizer": {"max_iters": 150}}}"#,
    )
    .unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("study{k}"));
        ok(&tvcov(&["simstudy", "--config", p(&cfg), "--output", p(&out), "--seed", "9"]));
        for f in ["report.json", "table1.csv", "scores.csv", "curves.csv", "bands.csv", "runs.csv"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
