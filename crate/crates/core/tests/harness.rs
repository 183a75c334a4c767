use nlwave::harness::*;
use nlwave::io::CsvTable;

#[test]
fn reference_config_parses_to_defaults() {
    let cfg = parse_config(&reference_config(), &[]).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(parse_config("", &[]).unwrap(), cfg);
}

#[test]
fn overrides_follow_dotted_paths() {
    let cfg = parse_config(
        "",
        &[
            "grid.cells=64".into(),
            "task = \"covector-verify\"".into(),
            "covector_verify.r0=[0.1, 0.2]".into(),
            "output=runs/a".into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.grid.cells, 64);
    assert_eq!(cfg.task, TaskKind::CovectorVerify);
    assert_eq!(cfg.covector_verify.r0, vec![0.1, 0.2]);
    assert_eq!(cfg.output, std::path::PathBuf::from("runs/a"));
}

#[test]
fn malformed_configs_are_rejected_before_compute() {
    let cases: &[(&str, &[&str], &str)] = &[
        ("colour = 3", &[], "unknown field"),
        ("[grid]\ncells = \"many\"", &[], "grid.cells"),
        ("task = \"bake\"", &[], "unknown variant"),
        ("", &["grid.steps=10"], "CFL"),
        ("", &["dimension=4"], "center"),
        ("task = \"covector-verify\"", &["covector_verify.varsigma=[1.5]"], "ς"),
        ("task = \"recover\"", &["recovery.k=2"], "k must be"),
        ("task = \"linearize-verify\"", &["linearize_verify.sources=[]"], "three sources"),
        ("", &["noequals"], "key=value"),
    ];
    for (text, ov, needle) in cases {
        let ov: Vec<String> = ov.iter().map(|s| s.to_string()).collect();
        let err = parse_config(text, &ov).unwrap_err().to_string();
        assert!(err.contains(needle), "{text:?} {ov:?}: {err}");
    }
}

#[test]
fn fingerprint_ignores_output_location() {
    let a = ExperimentConfig::default();
    let b = ExperimentConfig { output: "elsewhere".into(), workers: Some(3), ..a.clone() };
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = ExperimentConfig { seed: 1, ..a.clone() };
    assert_ne!(a.fingerprint(), c.fingerprint());
}

fn read_all(dir: &std::path::Path, files: &[String]) -> Vec<Vec<u8>> {
    files.iter().filter(|f| f.ends_with(".csv")).map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn identical_configs_give_identical_csv() {
    for task in ["forward", "covector-verify"] {
        let cfg = parse_config(&format!("task = \"{task}\"\n[grid]\ncells = 24"), &[]).unwrap();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let r1 = run_experiment(&cfg, d1.path()).unwrap();
        let r2 = run_experiment(&cfg, d2.path()).unwrap();
        assert!(r1.passed(), "{:?}", r1.checks);
        assert_eq!(r1.fingerprint, r2.fingerprint);
        assert_eq!(r1.files, r2.files);
        assert_eq!(read_all(d1.path(), &r1.files), read_all(d2.path(), &r2.files));
        assert!(d1.path().join("record.json").exists());
    }
}

#[test]
fn jitter_is_seeded() {
    let mut cfg =
        parse_config("task = \"linearize-verify\"\n[grid]\ncells = 16", &["linearize_verify.jitter=0.05".into()])
            .unwrap();
    let g = cfg.metric().unwrap();
    let a = linearization_gap(&cfg, &g, 1e-3).unwrap();
    assert_eq!(a, linearization_gap(&cfg, &g, 1e-3).unwrap());
    cfg.seed = 7;
    assert_ne!(a, linearization_gap(&cfg, &g, 1e-3).unwrap());
}

#[test]
fn recover_on_empty_medium_reports_zero() {
    let cfg =
        parse_config("task = \"recover\"\n[nonlinearity]\n[recovery.beams]\nrho = [12.0, 16.0, 24.0]", &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rec = run_experiment(&cfg, dir.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["value"].as_f64().unwrap().abs() < 1e-8);
    assert!(rec.files.contains(&"sweep.csv".to_string()));
    let t = CsvTable::read(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(t.schema, "rho-sweep");
}

fn observed(t: &CsvTable) -> Vec<f64> {
    t.column_f64("observed_order").unwrap()[1..].to_vec()
}

#[test]
fn grid_sweep_shows_second_order() {
    let cfg = parse_config("[nonlinearity]\n[grid]\ncells = 16", &[]).unwrap();
    let t = convergence_sweep(&cfg, SweepAxis::Grid, &[1.0, 2.0, 4.0]).unwrap();
    let o = observed(&t);
    assert!(o.iter().all(|&p| p >= 1.9), "{o:?}");
}

#[test]
fn step_sweep_shows_fourth_order() {
    let cfg = parse_config(
        "task = \"beam-verify\"\n[nonlinearity]\n[metric]\npreset = \"lapse-bump\"\namplitude = 0.3\ncenter = [0.5, 0.45, 0.55]\nwidth = 0.2\n[beam_verify]\ngeodesic_steps = [0.02]",
        &[],
    )
    .unwrap();
    let t = convergence_sweep(&cfg, SweepAxis::Step, &[1.0, 2.0]).unwrap();
    let o = observed(&t);
    assert!(o[0] >= 3.8, "{o:?}");
}

#[test]
fn sweeps_need_two_factors() {
    let cfg = ExperimentConfig::default();
    assert!(convergence_sweep(&cfg, SweepAxis::Grid, &[1.0]).is_err());
    assert!("diagonal".parse::<SweepAxis>().is_err());
}
