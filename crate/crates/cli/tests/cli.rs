use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use conu::conformal::{CalibrationResult, PredictionSet, Threshold};
use conu::data::ingest;
use conu::synthetic::oracle_auroc;

fn conu(args: &[&str], envs: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conu"))
        .args(args)
        .env_clear()
        .envs(envs.iter().copied())
        .output()
        .expect("spawn conu")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, n: usize, extra: &[&str]) -> String {
    let n = n.to_string();
    let out = dir.display().to_string();
    let mut args = vec!["simulate", "--n-records", &n, "--reps", "1", "--seed", "3", "--out-dir", &out];
    args.extend_from_slice(extra);
    let o = conu(&args, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("dataset.jsonl").display().to_string()
}

#[test]
fn validate_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 120, &["--plant-inadmissible", "0.1", "--require-admissible"]);
    let o = conu(&["validate", "--input", &data], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("records: 120"));
    let truth = fs::read_to_string(dir.path().join("ground_truth.jsonl")).unwrap();
    for line in truth.lines().filter(|l| l.contains("\"planted_inadmissible\":true")) {
        let gt: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(text.contains(gt["id"].as_str().unwrap()));
    }

    let bad = dir.path().join("bad.jsonl");
    let first = fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    fs::write(&bad, format!("{first}\nnot json\n")).unwrap();
    let o = conu(&["validate", "--input", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = conu(&["validate", "--input", "/no/such/file.jsonl"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_auroc_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 200, &[]);
    let out = dir.path().join("score");
    let o = conu(&["score", "--input", &data, "--out-dir", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rows: Vec<serde_json::Value> = fs::read_to_string(out.join("scores.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 200);
    let scores: Vec<f64> = rows.iter().map(|r| r["conu"].as_f64().unwrap()).collect();
    let incorrect: Vec<bool> = rows.iter().map(|r| !r["correct"].as_bool().unwrap()).collect();
    let expected = oracle_auroc(&scores, &incorrect).unwrap();

    let table = fs::read_to_string(out.join("auroc.csv")).unwrap();
    let conu_line = table.lines().find(|l| l.starts_with("conu,")).unwrap();
    let reported: f64 = conu_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((reported - expected).abs() < 1e-12);
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn score_flags_undefined_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 30, &["--concentration", "1000000", "--accuracy", "1"]);
    let o = conu(&["score", "--input", &data], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("undefined"), "{}", stdout(&o));
}

#[test]
fn calibrate_predict_evaluate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 550, &["--plant-inadmissible", "0.05", "--require-admissible"]);
    let cal_dir = dir.path().join("cal");
    let o = conu(
        &["calibrate", "--input", &data, "--alpha", "0.1", "--alpha", "0.2", "--seed", "7", "--out-dir", cal_dir.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let artifact = cal_dir.join("calibration_alpha_0.1.json");
    let cal: CalibrationResult = serde_json::from_str(&fs::read_to_string(&artifact).unwrap()).unwrap();
    assert_eq!(cal.n_calibration + cal.skipped, 50);
    assert!(matches!(cal.q_hat, Threshold::Finite(_)));
    assert_eq!(cal.scores.len(), cal.n_calibration);

    let eval_dir = dir.path().join("eval");
    let o = conu(
        &["evaluate", "--input", &data, "--alpha", "0.1", "--seed", "7", "--out-dir", eval_dir.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(fs::read_to_string(eval_dir.join("evaluation.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(report["n_calibration"].as_u64().unwrap() as usize, cal.n_calibration);
    assert_eq!(report["skipped_calibration"].as_u64().unwrap() as usize, cal.skipped);
    assert_eq!(report["n_test"].as_u64().unwrap(), 500);
    assert_eq!(report["q_hat"].as_f64(), cal.q_hat.finite());

    let pred_dir = dir.path().join("pred");
    let o = conu(
        &["predict", "--input", &data, "--artifact", artifact.to_str().unwrap(), "--out-dir", pred_dir.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sets: Vec<PredictionSet> = fs::read_to_string(pred_dir.join("predictions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ds = ingest(&data).unwrap();
    assert_eq!(sets.len(), ds.len());
    for (set, record) in sets.iter().zip(ds.records()) {
        let expected = conu::conformal::predict(record, &conu::clustering::cluster(record, 0.7), &cal, 0.5);
        assert_eq!(set, &expected);
    }
}

#[test]
fn tiny_calibration_gives_unbounded_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 110, &["--require-admissible"]);
    let cal_dir = dir.path().join("cal");
    let o = conu(
        &["calibrate", "--input", &data, "--alpha", "0.001", "--omit-scores", "--out-dir", cal_dir.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(cal_dir.join("calibration_alpha_0.001.json")).unwrap();
    assert!(text.contains("\"q_hat\": \"unbounded\""), "{text}");
    assert!(!text.contains("\"scores\""));
    let cal: CalibrationResult = serde_json::from_str(&text).unwrap();
    assert_eq!(cal.n_calibration, 10);
}

#[test]
fn empty_test_set_is_a_statistical_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 110, &[]);
    let cal_dir = dir.path().join("cal");
    assert!(conu(&["calibrate", "--input", &data, "--out-dir", cal_dir.to_str().unwrap()], &[]).status.success());
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let artifact = cal_dir.join("calibration_alpha_0.1.json");
    let o = conu(&["evaluate", "--input", empty.to_str().unwrap(), "--artifact", artifact.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("test set is empty"));

    // calibration made only of inadmissible records
    let o = conu(&["calibrate", "--input", empty.to_str().unwrap(), "--out-dir", cal_dir.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 110, &[]);
    let config = dir.path().join("conu.toml");
    fs::write(&config, "alpha = [0.3]\nlambda = 0.2\nsplit_fraction = \"1/2\"\n").unwrap();
    let cal_dir = dir.path().join("cal");
    let cal = cal_dir.to_str().unwrap();
    let cfg = config.to_str().unwrap();

    let o = conu(&["calibrate", "--input", &data, "--config", cfg, "--out-dir", cal], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: CalibrationResult =
        serde_json::from_str(&fs::read_to_string(cal_dir.join("calibration_alpha_0.3.json")).unwrap()).unwrap();
    assert_eq!(r.lambda, 0.2);
    assert_eq!(r.n_calibration + r.skipped, 55);

    let o = conu(&["calibrate", "--input", &data, "--config", cfg, "--out-dir", cal], &[("CONU_LAMBDA", "0.4")]);
    assert!(o.status.success());
    let r: CalibrationResult =
        serde_json::from_str(&fs::read_to_string(cal_dir.join("calibration_alpha_0.3.json")).unwrap()).unwrap();
    assert_eq!(r.lambda, 0.4);

    let o = conu(
        &["calibrate", "--input", &data, "--config", cfg, "--lambda", "0.9", "--out-dir", cal],
        &[("CONU_LAMBDA", "0.4")],
    );
    assert!(o.status.success());
    let r: CalibrationResult =
        serde_json::from_str(&fs::read_to_string(cal_dir.join("calibration_alpha_0.3.json")).unwrap()).unwrap();
    assert_eq!(r.lambda, 0.9);

    let o = conu(&["calibrate", "--input", &data, "--alpha", "1.5", "--out-dir", cal], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = conu(
        &[
            "sweep", "--n-records", "220", "--alpha", "0.1,0.2", "--fraction", "1/11", "--fraction", "0.5", "--reps", "3",
            "--seed", "1", "--out-dir", out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 3);
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    assert!(summary.starts_with("alpha,split_fraction,repetitions,mean_coverage,std_coverage"));
    assert_eq!(fs::read_to_string(out.join("sweep.jsonl")).unwrap().lines().count(), 12);
}
