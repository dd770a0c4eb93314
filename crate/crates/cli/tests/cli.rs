use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn comprehend(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comprehend")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_is_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.ini"), "[run]\nseed = 1\n\n[eval]\nk_fold = 5\n").unwrap();
    let o = comprehend(dir.path(), &["synth", "--config", "run.ini"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: ConfigInvalid:"), "{err}");
    assert!(err.contains("run.ini:5"), "{err}");
    assert!(err.contains("k_fold"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn duplicate_key_and_bad_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.ini"), "[run]\nseed = 1\nseed = 2\n").unwrap();
    let o = comprehend(dir.path(), &["synth", "--config", "a.ini"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a.ini:3"));
    let o = comprehend(dir.path(), &["synth", "--seed", "1", "--set", "eval.k_folds"]);
    assert_eq!(o.status.code(), Some(2));
    let o = comprehend(dir.path(), &["synth", "--seed", "1", "--set", "synth.nope=3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn evaluate_before_assemble_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = comprehend(dir.path(), &["evaluate", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error: MissingArtifact:"), "{err}");
    assert!(err.contains("dataset.csv"), "{err}");
    let log = std::fs::read_to_string(dir.path().join("out/run_log.csv")).unwrap();
    assert!(log.lines().nth(1).unwrap().ends_with(",MissingArtifact"), "{log}");
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = comprehend(dir.path(), &["synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.seed"));
}

#[test]
fn effective_config_echo_precedence_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.ini"),
        "# small run\n[run]\nseed = 5\ntask = correctness\n\n[synth]\nn_participants = 3\npassages_per_participant = 1\n",
    )
    .unwrap();
    let args = ["synth", "--config", "c.ini", "--set", "run.seed=6", "--set", "synth.n_participants=2", "--seed", "7"];
    let o = comprehend(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let echo = std::fs::read_to_string(out.join("effective_config.ini")).unwrap();
    let section = |name: &str| -> String {
        let start = echo.find(&format!("[{name}]\n")).unwrap();
        echo[start..].split("\n\n").next().unwrap().to_string()
    };
    // flag beats --set beats file beats default
    assert!(section("run").contains("seed = 7\n"));
    assert!(section("run").contains("task = correctness\n"));
    assert!(section("synth").contains("n_participants = 2\n"));
    assert!(section("synth").contains("passages_per_participant = 1\n"));
    assert!(section("synth").contains("sentences_min = 9\n"));
    assert!(out.join("raw/S02.csv").exists() && !out.join("raw/S03.csv").exists());

    let log = std::fs::read_to_string(out.join("run_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "unix_time,commands,config_sha256,seed,versions,status");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "synth");
    assert_eq!(fields[2], hex::encode(Sha256::digest(echo.as_bytes())));
    assert_eq!(fields[3], "7");
    assert_eq!(fields[5], "ok");

    // The echoed file reproduces the same configuration.
    let o = comprehend(dir.path(), &["synth", "--config", "out/effective_config.ini"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = std::fs::read_to_string(out.join("effective_config.ini")).unwrap();
    assert_eq!(again, echo);
    let log = std::fs::read_to_string(out.join("run_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn chained_commands_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--seed", "2", "--set", "synth.n_participants=4", "--set", "synth.passages_per_participant=2", "--set",
        "eval.k_folds=2", "--method", "lr",
    ];
    let mut args = vec!["synth", "preprocess", "features", "assemble", "evaluate", "train", "report"];
    args.extend(small);
    let o = comprehend(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in [
        "processed/eog.csv",
        "features/eeg.csv",
        "features/nlp.csv",
        "dataset.csv",
        "models/confusion_eeg_nlp_lr.model",
        "reports/confusion_eeg_nlp_lr_folds.csv",
        "reports/table.txt",
        "reports/summary.csv",
        "reports/known_unknown.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let table = std::fs::read_to_string(out.join("reports/table.txt")).unwrap();
    assert!(table.contains("LR") && table.contains("EEG+NLP"), "{table}");
    let ku = std::fs::read_to_string(out.join("reports/known_unknown.csv")).unwrap();
    assert!(ku.starts_with("row,correct,incorrect,total\n"));
}

#[test]
fn bench_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bench", "--seed", "1", "--set", "bench.kernels=welch_psd", "--set", "bench.sizes=4096,16384"];
    let o = comprehend(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "kernel,size,median_s,iterations");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("welch_psd,4096,") && rows[2].starts_with("welch_psd,16384,"));
    let o = comprehend(dir.path(), &["bench", "--seed", "1", "--set", "bench.kernels=fft"]);
    assert_eq!(o.status.code(), Some(2));
    let o = comprehend(dir.path(), &["bench", "--seed", "1", "--set", "bench.iterations=3"]);
    assert_eq!(o.status.code(), Some(2));
}
