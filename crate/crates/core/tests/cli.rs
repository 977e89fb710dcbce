use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dbt");

fn dbt(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = ["--timesteps", "12", "--n-noise", "4", "--set", "mean_trees=10"];

fn toy(dir: &Path, task: &str, extra: &[&str]) -> Output {
    let mut args = vec!["toy", "--task", task, "--n", "200", "--out-dir", dir.to_str().unwrap(), "--set", "test_rows=30"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    dbt(&args)
}

#[test]
fn train_writes_model_and_full_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = toy(dir.path(), "a", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("effective config"));
    assert!(dir.path().join("model.dbt").exists());
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 12);
    assert!(log.lines().nth(1).unwrap().starts_with("12,"));
    let cfg = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(cfg.contains("timesteps=12\n") && cfg.contains("n_noise=4\n"));
    assert!(stdout(&o).contains("qice="));
}

#[test]
fn retraining_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let data = a.path().join("toy_train.csv");
    assert_eq!(toy(a.path(), "a", &["--generate-only"]).status.code(), Some(0));
    for dir in [a.path(), b.path()] {
        let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out-dir", dir.to_str().unwrap(), "--seed", "5"];
        args.extend_from_slice(&SMALL);
        let o = dbt(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ma = fs::read(a.path().join("model.dbt")).unwrap();
    let mb = fs::read(b.path().join("model.dbt")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn sample_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(toy(dir.path(), "a", &[]).status.code(), Some(0));
    let model = dir.path().join("model.dbt");
    let rows = dir.path().join("three.csv");
    fs::write(&rows, "x\n0.5\n1.5\n2.5\n").unwrap();
    let run = || dbt(&["sample", "--model", model.to_str().unwrap(), "--data", rows.to_str().unwrap(), "--samples", "1", "--seed", "3"]);
    let first = run();
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let text = stdout(&first);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,sample,value");
    assert_eq!(lines.len(), 1 + 3);
    assert_eq!(stdout(&run()), text);
}

#[test]
fn classification_samples_carry_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let o = toy(dir.path(), "clf", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("samples=10\n"));
    assert!(stdout(&o).contains("deferral_accuracy@0.05="));
    let samples = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert!(samples.starts_with("row,sample,value,probability\n"));
    for line in samples.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let p = 1.0 / (1.0 + (-f[2]).exp());
        assert!((p - f[3]).abs() < 1e-12);
    }
}

#[test]
fn eval_reports_metrics_and_folds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(toy(dir.path(), "a", &[]).status.code(), Some(0));
    let test = dir.path().join("toy_test.csv");
    let o = dbt(&["eval", "--model", dir.path().join("model.dbt").to_str().unwrap(), "--data", test.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("rmse=") && out.contains("nll=") && out.contains("qice="));

    let folds_dir = dir.path().join("folds");
    let mut args = vec!["eval", "--data", test.to_str().unwrap(), "--folds", "3", "--out-dir", folds_dir.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let o = dbt(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("rmse: ") && stdout(&o).contains(" ± "));
    assert_eq!(fs::read_to_string(folds_dir.join("folds.csv")).unwrap().lines().count(), 4);
}

#[test]
fn constant_response_scores_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    let mut text = String::from("x,y\n");
    for i in 0..40 {
        text.push_str(&format!("{},7\n", i));
    }
    fs::write(&data, text).unwrap();
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    assert_eq!(dbt(&args).status.code(), Some(0));
    let o = dbt(&["eval", "--model", dir.path().join("model.dbt").to_str().unwrap(), "--data", data.to_str().unwrap(), "--samples", "10"]);
    assert!(stdout(&o).contains("rmse=0\n"), "{}", stdout(&o));
}

#[test]
fn importance_and_schedule_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(toy(dir.path(), "a", &[]).status.code(), Some(0));
    let model = dir.path().join("model.dbt");
    let o = dbt(&["importance", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut steps: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    steps.dedup();
    assert_eq!(steps, vec!["12", "10", "7", "5", "2", "1"]);
    let o = dbt(&["importance", "--model", model.to_str().unwrap(), "--at", "13"]);
    assert_eq!(o.status.code(), Some(1));

    let o = dbt(&["schedule"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("t,beta,alpha_bar,gamma0,gamma1,gamma2,tilde_beta"));
    assert!(text.lines().nth(1).unwrap().starts_with("1000,"));
    assert_eq!(text.lines().count(), 1000);
}

#[test]
fn exit_codes() {
    assert_eq!(dbt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dbt(&["train"]).status.code(), Some(1));
    assert_eq!(dbt(&["schedule", "--set", "nonsense=1"]).status.code(), Some(1));
    assert_eq!(dbt(&["schedule", "--timesteps", "1"]).status.code(), Some(1));
    assert_eq!(dbt(&["train", "--data", "/definitely/not/here.csv"]).status.code(), Some(2));
    assert_eq!(dbt(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("model.dbt");
    fs::write(&bogus, b"DBTMODEL\x09\x00\x00\x00").unwrap();
    let o = dbt(&["sample", "--model", bogus.to_str().unwrap(), "--data", bogus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version 9"), "{}", stderr(&o));
}

#[test]
fn schema_mismatch_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(toy(dir.path(), "a", &[]).status.code(), Some(0));
    let rows = dir.path().join("wrong.csv");
    fs::write(&rows, "z\n0.5\n").unwrap();
    let o = dbt(&["sample", "--model", dir.path().join("model.dbt").to_str().unwrap(), "--data", rows.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'z', expected 'x'"), "{}", stderr(&o));
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "timesteps=40\nbeta_end=0.03\n").unwrap();
    let o = dbt(&["schedule", "--config", cfg.to_str().unwrap(), "--timesteps", "30"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("timesteps=30\n") && stderr(&o).contains("beta_end=0.03\n"));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("30,0.03,"));
}
