use std::process::Command;

fn nlwave(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nlwave")).args(args).env_remove("NLWAVE_WORKERS").output().unwrap()
}

#[test]
fn reference_config_round_trips() {
    let out = nlwave(&["reference-config"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    let check = nlwave(&["forward", "--config", path.to_str().unwrap(), "--check-only"]);
    assert!(check.status.success());
    assert!(String::from_utf8_lossy(&check.stdout).contains("fingerprint"));
}

#[test]
fn exit_status_tracks_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = nlwave(&["covector-verify", "--out", out, "--workers", "1"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(dir.path().join("interaction_sum.csv").exists());
    assert!(dir.path().join("record.json").exists());

    let strict = nlwave(&["covector-verify", "--out", out, "--override", "covector_verify.tolerance=1e-12"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL asymptotic law"));
}

#[test]
fn bad_input_is_an_error() {
    let bad = nlwave(&["recover", "--check-only", "--override", "recovery.k=2"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("k must be"));
    let missing = nlwave(&["forward", "--config", "/nonexistent.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sweep_writes_observed_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlwave(&[
        "sweep",
        "--axis",
        "grid",
        "--factors",
        "1,2",
        "--override",
        "grid.cells=8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(text.starts_with("# nlwave-csv v1 convergence-cells"));
}
