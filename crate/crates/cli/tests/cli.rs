use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrsquant::eval::{Estimator, EvalReport};
use mrsquant::io;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mrsquant"));
    c.env_remove("MRSQUANT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, config: &str, seed: u64, n: usize) -> PathBuf {
    let cfg = write(dir, &format!("{name}.sim.json"), config);
    let out = dir.join(format!("{name}.jsonl"));
    ok(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        &seed.to_string(),
        "--n-spectra",
        &n.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn simulate_is_deterministic_and_reports_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", "{}", 11, 10);
    let b = simulate(dir.path(), "b", "{}", 11, 10);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let d = io::read_dataset(&a).unwrap();
    assert_eq!(d.len(), 10);
    let out = ok(&["simulate", "--seed", "3", "--n-spectra", "2", "--out", s(&dir.path().join("c.jsonl"))]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seed 3") && text.contains("snr: 5 to 50"), "{text}");
}

#[test]
fn invalid_ranges_exit_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"snr_range": {"min": 50, "max": 5}}"#);
    let out = run(&["simulate", "--config", s(&cfg), "--seed", "1", "--n-spectra", "3", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("snr_range"), "{}", stderr(&out));

    let cfg = write(dir.path(), "typo.json", r#"{"snr_rnge": {"min": 5, "max": 50}}"#);
    let out = run(&["simulate", "--config", s(&cfg), "--seed", "1", "--n-spectra", "3", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("snr_rnge"));
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--n-spectra", "3", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn constant_labels_give_a_zero_oob_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(
        dir.path(),
        "const",
        r#"{"concentration_ranges": {"NAA": {"min": 1.5, "max": 1.5, "relative_to": "Cr"}, "Cr": {"min": 0.5, "max": 1.5}}}"#,
        2,
        30,
    );
    let model = dir.path().join("m.json");
    let oob = dir.path().join("oob.csv");
    ok(&["train", "--dataset", s(&data), "--seed", "4", "--n-trees", "8", "--out", s(&model), "--oob-csv", s(&oob)]);
    let text = std::fs::read_to_string(&oob).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("target,n_trees,oob_error"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], "NAA/Cr");
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn training_is_repeatable_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 5, 60);
    let m1 = dir.path().join("m1.json");
    let m2 = dir.path().join("m2.json");
    let m3 = dir.path().join("m3.json");
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--dataset".into(),
            s(&data).into(),
            "--seed".into(),
            "9".into(),
            "--n-trees".into(),
            "12".into(),
            "--max-features".into(),
            "16".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let st = bin().args(args(&m1)).env("MRSQUANT_THREADS", "1").status().unwrap();
    assert!(st.success());
    let st = bin().args(args(&m2)).arg("--threads").arg("3").status().unwrap();
    assert!(st.success());
    let st = bin().args(args(&m3)).env("MRSQUANT_THREADS", "2").status().unwrap();
    assert!(st.success());
    let a = std::fs::read(&m1).unwrap();
    assert_eq!(a, std::fs::read(&m2).unwrap());
    assert_eq!(a, std::fs::read(&m3).unwrap());
}

#[test]
fn missing_target_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 5, 10);
    let out = run(&["train", "--dataset", s(&data), "--seed", "1", "--targets", "mI/Cr", "--out", s(&dir.path().join("m"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mI/Cr"));
}

#[test]
fn memorizing_model_predicts_its_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 7, 25);
    let cfg = write(dir.path(), "forest.json", r#"{"n_trees": 1, "min_leaf_size": 1, "bootstrap": "identity"}"#);
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--seed", "1", "--out", s(&model)]);
    let preds = dir.path().join("p.csv");
    ok(&["predict", "--model", s(&model), "--spectra", s(&data), "--out", s(&preds)]);
    let d = io::read_dataset(&data).unwrap();
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("record_id,NAA/Cr,Cho/Cr"));
    for (r, line) in d.records.iter().zip(lines) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0] as usize, r.id);
        assert_eq!(&f[1..], &r.labels[..]);
    }
}

#[test]
fn cross_protocol_prediction_needs_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 7, 30);
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--seed", "1", "--n-trees", "4", "--out", s(&model)]);
    let mrsi = simulate(
        dir.path(),
        "mrsi",
        r#"{"acquisition": {"spectral_width_hz": 2000, "n_points": 400, "transmitter_freq_mhz": 127.7}}"#,
        8,
        5,
    );
    let preds = dir.path().join("p.csv");
    let out = run(&["predict", "--model", s(&model), "--spectra", s(&mrsi), "--out", s(&preds)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    ok(&["predict", "--model", s(&model), "--spectra", s(&mrsi), "--out", s(&preds), "--preprocess"]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 6);
}

#[test]
fn empty_or_broken_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 7, 20);
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--seed", "1", "--n-trees", "2", "--out", s(&model)]);
    let empty = write(dir.path(), "empty.jsonl", "");
    let out = run(&["predict", "--model", s(&model), "--spectra", s(&empty), "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&out), 2);

    let text = std::fs::read_to_string(&model).unwrap();
    let cut = write(dir.path(), "cut.json", &text[..text.len() / 3]);
    let out = run(&["predict", "--model", s(&cut), "--spectra", s(&data), "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("malformed model"), "{}", stderr(&out));

    let missing = run(&["predict", "--model", "/nonexistent/m.json", "--spectra", s(&data), "--out", "p"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn unknown_experiment_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.json", r#"{"experiment": "lcmodel", "train": "x.jsonl"}"#);
    let out = run(&["evaluate", "--config", s(&cfg), "--seed", "1", "--out-dir", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    for name in ["synthetic-synthetic", "real-real-spectra", "real-spectra-real-images", "synthetic-real-images"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn memorization_experiment_and_report_reload() {
    let dir = tempfile::tempdir().unwrap();
    simulate(
        dir.path(),
        "clean",
        r#"{"noise": false, "baseline_amplitude_range": {"min": 0, "max": 0}, "lipid_amplitude_range": {"min": 0, "max": 0}}"#,
        3,
        40,
    );
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"experiment": "synthetic-synthetic", "train": "clean.jsonl", "test": "clean.jsonl",
            "forest": {"n_trees": 1, "min_leaf_size": 1, "bootstrap": "identity"}}"#,
    );
    let out_dir = dir.path().join("report");
    ok(&["evaluate", "--config", s(&cfg), "--seed", "2", "--out-dir", s(&out_dir)]);
    let file: io::ReportFile<serde_json::Value> = io::read_report(&out_dir.join("report.json")).unwrap();
    let report: EvalReport = file.report;
    for t in &report.targets {
        assert!(t.forest.median_error < 1e-6, "{}", t.name);
    }
    assert_eq!(report.recompute_summaries().unwrap(), report.targets);
    let naa = report.target("NAA/Cr").unwrap();
    assert_eq!(naa.summary(Estimator::Forest).unwrap(), report.targets[0].forest);
    let samples = std::fs::read_to_string(out_dir.join("samples.csv")).unwrap();
    assert!(samples.starts_with("record_id,fold,target,truth,forest_estimate,forest_error,oracle_estimate,oracle_error"));
    assert_eq!(samples.lines().count(), 1 + 2 * 40);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("NAA/Cr,forest,40,"));
    assert!(summary.contains("pearson_r"));
}

#[test]
fn artifacts_regenerate_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let train = simulate(dir.path(), "train", r#"{"metabolites": "with-mi-glx"}"#, 21, 40);
    let test = simulate(dir.path(), "test", r#"{"metabolites": "with-mi-glx"}"#, 22, 10);
    let again = dir.path().join("again.jsonl");
    ok(&["reproduce", s(&train), "--out", s(&again)]);
    assert_eq!(std::fs::read(&train).unwrap(), std::fs::read(&again).unwrap());

    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&train), "--seed", "5", "--n-trees", "6", "--max-features", "10", "--out", s(&model)]);
    let model2 = dir.path().join("m2.json");
    let out = run(&["reproduce", s(&model), "--out", s(&model2)]);
    assert_eq!(code(&out), 2);
    let out = run(&["reproduce", s(&model), "--dataset", s(&test), "--out", s(&model2)]);
    assert_eq!(code(&out), 3);
    ok(&["reproduce", s(&model), "--dataset", s(&train), "--out", s(&model2)]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&model2).unwrap());

    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"experiment": "synthetic-synthetic", "train": "train.jsonl", "test": "test.jsonl",
            "forest": {"n_trees": 5, "max_features": 8}}"#,
    );
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    ok(&["evaluate", "--config", s(&cfg), "--seed", "3", "--out-dir", s(&r1)]);
    ok(&["reproduce", s(&r1.join("report.json")), "--out", s(&r2)]);
    for f in ["report.json", "samples.csv", "summary.csv"] {
        assert_eq!(std::fs::read(r1.join(f)).unwrap(), std::fs::read(r2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stand_in_cross_validation_runs() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "svs", r#"{"metabolites": "with-mi-glx", "labels": "oracle"}"#, 30, 30);
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"experiment": "real-real-spectra", "train": "svs.jsonl", "folds": 3,
            "forest": {"n_trees": 4, "max_features": 8}}"#,
    );
    let out = ok(&["evaluate", "--config", s(&cfg), "--seed", "1", "--out-dir", s(&dir.path().join("r"))]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("truth: oracle") && text.contains("Glx/Cr"), "{text}");
}

#[test]
fn oob_scan_writes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", "{}", 5, 40);
    let out = dir.path().join("scan.csv");
    ok(&[
        "oob-scan",
        "--dataset",
        s(&data),
        "--seed",
        "1",
        "--target",
        "NAA/Cr",
        "--max-trees",
        "5",
        "--max-features",
        "1,4,9999",
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("max_features,n_trees,target,oob_error"));
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}
