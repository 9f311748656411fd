use std::process::Command;

fn kdv(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kdv"))
        .args(args)
        .env("KDV_OUTPUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn critical_length_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdv(dir.path(), &["critical", "--L", "6.283185307179586"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("critical=true"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("critical.json")).unwrap())
            .unwrap();
    assert_eq!(doc["kind"], "critical");
    assert_eq!(doc["data"]["critical"], true);

    let o = kdv(dir.path(), &["critical", "--L", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("critical=false"));
}

#[test]
fn spectrum_writes_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdv(dir.path(), &["spectrum", "--L", "1", "--K", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectrum.json")).unwrap())
            .unwrap();
    let modes = doc["data"]["spectrum"]["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 6);
    assert_eq!(doc["config"]["K"], 3);
}

#[test]
fn explicit_output_beats_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = kdv(
        env_dir.path(),
        &[
            "critical",
            "--L",
            "2",
            "--output",
            flag_dir.path().to_str().unwrap(),
        ],
    );
    assert!(o.status.success());
    assert!(flag_dir.path().join("critical.json").exists());
    assert!(!env_dir.path().join("critical.json").exists());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "L = 1\nbogus = 2\n").unwrap();
    let o = kdv(dir.path(), &["spectrum", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = kdv(dir.path(), &["spectrum", "--K", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = kdv(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_rejects_increasing_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdv(dir.path(), &["sweep", "--T", "0.5,1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_control_simulation_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdv(
        dir.path(),
        &[
            "simulate", "--system", "jump", "--T", "0.01", "--nt", "50", "--nx", "64",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("t,y_x_0,y_x_L"));
    assert_eq!(lines.count(), 51);
}
