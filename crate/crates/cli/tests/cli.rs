use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn himcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_himcf")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_command() {
    let out = himcf(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["exact-verify", "plap-solve", "himcf", "identities", "rescale", "hull-probe"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let sub = String::from_utf8(himcf(&["identities", "--help"]).stdout).unwrap();
    assert!(sub.contains("Minkowski"));
}

#[test]
fn exact_verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = himcf(&["exact-verify", "--out", path(dir.path()), "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("exact_verify.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
}

#[test]
fn bad_node_count_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"grid": {"lo": [-1, -1, -1], "hi": [1, 1, 1], "n": 2}}"#).unwrap();
    let out = himcf(&["identities", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.n"));
}

#[test]
fn other_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("hull-probe", r#"{"balls": [{"radius": -1.0}]}"#, "balls[0].radius"),
        ("himcf", r#"{"t_grid": [0.3, 0.1]}"#, "t_grid"),
        ("rescale", r#"{"unknown_key": 1}"#, "config"),
        ("identities", r#"{"command": "rescale"}"#, "command"),
    ];
    for (k, (cmd, text, field)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("c{k}.json"));
        fs::write(&cfg, text).unwrap();
        let out = himcf(&[cmd, "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(field), "{cmd}: expected {field}");
    }
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"grid": {"lo": [-2.4, -1.6, -0.8], "hi": [2.4, 1.6, 0.8], "n": 65}, "probes": 4}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let res = himcf(&["hull-probe", "--config", path(&cfg), "--out", path(out), "--threads", threads, "--seed", "3"]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let ja = fs::read(a.join("hull_probe.json")).unwrap();
    assert_eq!(ja, fs::read(b.join("hull_probe.json")).unwrap());
}

#[test]
fn plap_solve_writes_fields_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"plap": {
            "p": 1.5,
            "grid": {"lo": [-1.6, -1.6, -0.64], "hi": [1.6, 1.6, 0.64], "n": [25, 25, 25]},
            "inner": {"type": "koranyi_ball", "radius": 1.0},
            "outer": {"mode": "barrier_matched", "y0": {"x1": 0, "x2": 0, "x3": 0}, "s": 1.0}
        }}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = himcf(&["plap-solve", "--config", path(&cfg), "--out", path(&out_dir)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{stderr}");
    for f in ["u_p.vtk", "w.vtk", "plap_solve.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}: {stderr}");
    }
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("plap_solve.json")).unwrap()).unwrap();
    assert_eq!(rep["max_principle"]["holds"], true);
    assert_eq!(out.status.code() == Some(0), rep["pass"] == true);
}
