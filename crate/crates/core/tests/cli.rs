//! Command-line behaviour: exit codes, staged runs and the predict command.

use std::fs;
use std::process::Command;

use alsfrs_core::config::PipelineConfig;
use alsfrs_core::harness::{write_metrics, write_selection_report};
use alsfrs_core::ingest::load_cohort;
use alsfrs_core::pipeline;

const SMALL: [&str; 6] = [
    "synth.enabled=on",
    "synth.n_patients=20",
    "lambda_count=4",
    "outer_k=3",
    "inner_k=2",
    "alphas=0.5,1",
];

fn alsfrs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_alsfrs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_args<'a>(root: &'a str, seed: &'a str) -> Vec<String> {
    let mut v: Vec<String> = vec!["--seed".into(), seed.into()];
    for s in SMALL {
        v.push("--set".into());
        v.push(s.into());
    }
    v.push("--input-dir".into());
    v.push(format!("{root}/data"));
    v.push("--output-dir".into());
    v.push(format!("{root}/out"));
    v
}

fn run_cmd(cmd: &str, extra: &[String]) -> std::process::Output {
    let mut args = vec![cmd.to_string()];
    args.extend_from_slice(extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    alsfrs(&refs)
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    assert_eq!(alsfrs(&["--help"]).status.code(), Some(0));
    let out = alsfrs(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=usage"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let out = alsfrs(&["--set", "no_such_key=1", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn missing_input_file_exits_two_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let args = small_args(root, "1");
    assert_eq!(run_cmd("synth", &args).status.code(), Some(0));
    let visits = tmp.path().join("data/visits.csv");
    fs::remove_file(&visits).unwrap();
    let out = run_cmd("ingest", &args);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error code=2"), "{err}");
    assert!(err.contains("visits.csv"), "{err}");
}

#[test]
fn staged_run_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let args = small_args(root, "5");
    let out = run_cmd("pipeline", &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    for s in SMALL {
        let (k, v) = s.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    let data = tmp.path().join("data");
    let cohort = load_cohort(&data.join("static.csv"), &data.join("visits.csv"), &data.join("sensors.csv")).unwrap();
    let run = pipeline::run(&cohort, &cfg).unwrap();

    let mut metrics = vec![];
    write_metrics(&mut metrics, &run.evaluation).unwrap();
    assert_eq!(fs::read(tmp.path().join("out/evaluate/metrics.csv")).unwrap(), metrics);
    let mut report = vec![];
    write_selection_report(&mut report, &run.report).unwrap();
    assert_eq!(fs::read(tmp.path().join("out/train/selection_report.csv")).unwrap(), report);

    for stage in ["ingest", "align", "extract", "train", "evaluate", "report"] {
        assert!(tmp.path().join("out").join(stage).join("run_manifest.txt").exists(), "{stage}");
    }

    // predict over the persisted clinical table reproduces held-out predictions
    let features = tmp.path().join("out/extract/features_median_clinical.csv");
    let pred_path = tmp.path().join("pred.csv");
    let mut pargs = args.clone();
    pargs.extend([
        "--features".to_string(),
        features.display().to_string(),
        "--out".to_string(),
        pred_path.display().to_string(),
    ]);
    let out = run_cmd("predict", &pargs);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let all = fs::read_to_string(&pred_path).unwrap();
    let held = fs::read_to_string(tmp.path().join("out/evaluate/predictions.csv")).unwrap();
    let all_lines: std::collections::HashSet<&str> = all.lines().collect();
    assert!(held.lines().count() > 1);
    for line in held.lines() {
        assert!(all_lines.contains(line), "missing {line}");
    }
    assert!(all.lines().count() > held.lines().count());
}

#[test]
fn stage_without_inputs_reports_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let out = run_cmd("train", &small_args(root, "1"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=io"));
}
