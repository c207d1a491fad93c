use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hocon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hocon")).args(args).output().unwrap()
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Copies a shipped scenario, applying line edits, into `dir`.
fn edited(dir: &Path, name: &str, edits: &[(&str, Option<&str>)]) -> PathBuf {
    let text = fs::read_to_string(scenario_dir().join(name)).unwrap();
    let lines: Vec<String> = text
        .lines()
        .filter_map(|l| match edits.iter().find(|(k, _)| l.starts_with(&format!("{k} "))) {
            Some((_, Some(v))) => Some(v.to_string()),
            Some((_, None)) => None,
            None => Some(l.to_string()),
        })
        .collect();
    let p = dir.join(name);
    fs::write(&p, lines.join("\n")).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn elastic_ball_csv_has_constant_omega() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(dir.path(), "elastic_ball.toml", &[("t_end", Some("t_end = 1.0"))]);
    let out = dir.path().join("ball.csv");
    let o = hocon(&["run", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("steps       1000"));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let head: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&head[..6], &["t", "omega1", "omega2", "omega3", "V1", "V2"]);
    assert_eq!(head.last(), Some(&"power"));
    let mut n = 0;
    for l in lines {
        let x: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(&x[1..6], &[0.0, 1.0, 0.0, 1.0, 0.0]);
        n += 1;
    }
    assert_eq!(n, 1001);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(dir.path(), "rocard.toml", &[("t_end", Some("t_end = 0.2"))]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = hocon(&["run", sc.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["meta"]["model_id"], "rocard");
    assert_eq!(v["meta"]["options"]["method"], "explicit_rk4");
    assert_eq!(v["columns"][0], "t");
    assert_eq!(v["rows"].as_array().unwrap().len(), 201);
}

#[test]
fn missing_velocity_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(dir.path(), "rocard.toml", &[("psi_dot", None)]);
    let o = hocon(&["run", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("psi_dot"), "{}", stderr(&o));
}

#[test]
fn zero_rolling_speed_violates_the_sign_guard() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(
        dir.path(),
        "rocard.toml",
        &[("psi_dot", Some("psi_dot = 0.0")), ("x1_dot", Some("x1_dot = 0.0")), ("x2_dot", Some("x2_dot = 0.0"))],
    );
    let o = hocon(&["run", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("sign(psi_dot)"), "{}", stderr(&o));
}

#[test]
fn inconsistent_initial_state_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(dir.path(), "rocard.toml", &[("x1_dot", Some("x1_dot = 4.9"))]);
    let o = hocon(&["run", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row 0 (x1 rolling)"), "{}", stderr(&o));
}

#[test]
fn leaving_the_model_domain_mid_run_is_an_integration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(
        dir.path(),
        "rocard.toml",
        &[
            ("epsilon", Some("epsilon = 0.29")),
            ("theta_dot", Some("theta_dot = 5.0")),
            ("x1_dot", Some("x1_dot = 4.791219377563486")),
            ("x2_dot", Some("x2_dot = -1.4297611255241778")),
        ],
    );
    let o = hocon(&["run", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("|epsilon| <= 0.3"), "{}", stderr(&o));
}

#[test]
fn json_scenarios_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"model_id": "rigid-ball", "t_end": 0.05,
        "initial": {"omega1": 0.0, "omega2": 1.0, "omega3": 0.0, "V1": 1.0, "V2": 0.0},
        "options": {"dt": 0.01, "method": "implicit_midpoint"}}"#;
    let p = dir.path().join("s.json");
    fs::write(&p, text).unwrap();
    let o = hocon(&["run", p.to_str().unwrap(), "--dt", "0.025"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("steps       2"));
}

#[test]
fn bad_parameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = edited(dir.path(), "rocard.toml", &[("K", Some("K = -1.0"))]);
    let o = hocon(&["run", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`K`"));
}

#[test]
fn verify_reports_and_exit_codes() {
    let o = hocon(&["verify", "chetaev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS chetaev"));
    assert!(out.contains("degree 2"));
    assert_eq!(hocon(&["verify", "no-such-suite"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_hocon"))
        .args(["verify", "chetaev"])
        .env("HOCON_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lists_every_model_and_suite() {
    let o = hocon(&["list-models"]);
    let out = String::from_utf8_lossy(&o.stdout);
    for id in ["elastic-ball", "rigid-ball", "rocard", "greidanus", "moving-plane-ball"] {
        assert!(out.contains(id), "{id}");
    }
    assert!(out.contains("[epsilon_dot]"));
    let o = hocon(&["list-suites"]);
    let out = String::from_utf8_lossy(&o.stdout);
    for id in ["ball-equivalence", "rocard-energy", "greidanus-limit", "moving-plane-oracle", "dalembert-conservation", "gradient-check"] {
        assert!(out.contains(id), "{id}");
    }
}

#[test]
fn shipped_scenarios_parse_and_start() {
    for e in fs::read_dir(scenario_dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("t.csv");
            let o = hocon(&["run", p.to_str().unwrap(), "--t-end", "0.01", "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
        }
    }
}
