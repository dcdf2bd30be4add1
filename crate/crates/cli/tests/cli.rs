use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctia-ipc-sim"))
        .args(args)
        .current_dir(cwd)
        .env("CTIA_IPC_THREADS", "2")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_mode_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["teleport"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["--help"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn verify_generated_case_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"seed": 3}"#);
    let out = run(&["verify", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("o/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(tmp.path().join("o/manifest.json").is_file());
}

#[test]
fn missing_frame_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"frame": "nope.pgm"}"#);
    let out = run(&["readout", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.pgm"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn nan_weight_reports_location() {
    let tmp = tempfile::tempdir().unwrap();
    let taps = |v: &str| format!("[[{v},0],[0,0]]");
    let body = format!(
        r#"{{"c_o": 1, "c_in": 4, "k": 2, "weights": [[{}, {}, {}, {}]]}}"#,
        taps("0.5"),
        taps("NaN"),
        taps("0"),
        taps("0")
    );
    let w = write(tmp.path(), "w.json", &body);
    let f = tmp.path().join("f.pgm");
    let mut pgm = b"P5\n4 4\n65535\n".to_vec();
    pgm.extend(std::iter::repeat_n(0x80, 32));
    std::fs::write(&f, pgm).unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        &format!(r#"{{"frame": "f.pgm", "weights": "{}", "conv": {{"k": 2, "s": 1, "c_o": 1, "p_s": 1}}}}"#, w),
    );
    let out = run(&["simulate", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("channel 0, input 1, tap (0, 0)"), "{err}");
}

#[test]
fn malformed_config_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"seed": }"#);
    let out = run(&["metrics", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}
