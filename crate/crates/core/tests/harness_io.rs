use std::fs;

use cbe_core::error::Error;
use cbe_core::extremes::ExtremeRecord;
use cbe_core::harness::{emit_summary, run_experiment, ExperimentConfig, Record, RunOptions};

fn record(replica: u64, n: usize, re: f64, im: f64, im_neg: f64, count: f64) -> Record {
    Record::Extreme(ExtremeRecord {
        replica,
        seed: 0,
        n,
        beta: 2.0,
        grid_size: 2 * n,
        re_max: 0.0,
        im_max: 0.0,
        im_neg_max: 0.0,
        argmax_theta_re: 0.0,
        argmax_theta_im: 0.0,
        argmax_theta_im_neg: 0.0,
        centered_re: re,
        centered_im: im,
        centered_im_neg: im_neg,
        count_sup: 0.0,
        centered_count: count,
        excluded_count: 0,
    })
}

fn write_stream(path: &std::path::Path, records: &[Record]) {
    let text: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

fn summary_rows(dir: &std::path::Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    rd.records().map(|r| r.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn summary_of_synthetic_stream_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.jsonl");
    // Re values 4, 1, 3, 2, 5 at n = 64. Nearest rank on 5 values:
    // p05 -> rank 1, p25 -> 2, p50 -> 3, p75 -> 4, p95 -> 5.
    let recs: Vec<Record> = [4.0, 1.0, 3.0, 2.0, 5.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| record(i as u64, 64, v, -v, 10.0, 0.5))
        .collect();
    write_stream(&stream, &recs);
    emit_summary(&stream, dir.path()).unwrap();
    let rows = summary_rows(dir.path());
    assert_eq!(rows.len(), 4);
    let re = rows.iter().find(|r| r[2] == "re").unwrap();
    assert_eq!((re[0].parse::<f64>().unwrap(), re[1].as_str()), (2.0, "64"));
    let nums: Vec<f64> = re[3..].iter().map(|x| x.parse().unwrap()).collect();
    // median, mean, iqr, p05, p95, replicas
    assert_eq!(nums, vec![3.0, 3.0, 2.0, 1.0, 5.0, 5.0]);
    let im = rows.iter().find(|r| r[2] == "im_pos").unwrap();
    assert_eq!(im[3].parse::<f64>().unwrap(), -3.0);
    let flat = rows.iter().find(|r| r[2] == "im_neg").unwrap();
    assert_eq!(flat[5].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn single_record_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("one.jsonl");
    write_stream(&stream, &[record(0, 16, 1.25, 0.5, 0.75, 2.0)]);
    let out = emit_summary(&stream, dir.path()).unwrap();
    assert!(out.summary.cells.iter().all(|c| c.iqr == 0.0 && c.replicas == 1));
    assert!(dir.path().join("ladder_re_beta2.dat").exists());
}

#[test]
fn resume_after_any_interruption_matches_full_run() {
    let base = tempfile::tempdir().unwrap();
    let cfg = |name: &str| ExperimentConfig {
        beta_list: vec![1.0, 2.0],
        n_ladder: vec![8, 16],
        grid_mult: 2,
        replicas: 2,
        seed: 3,
        output: base.path().join(name),
        ..ExperimentConfig::default()
    };
    let full = run_experiment(&cfg("full"), &RunOptions::default()).unwrap();
    let reference = fs::read(&full.records_path).unwrap();
    for m in [0, 1, 3, 7] {
        let c = cfg(&format!("cut{m}"));
        let first = run_experiment(
            &c,
            &RunOptions {
                stop_after: Some(m),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(first.units_run, m);
        let second = run_experiment(
            &c,
            &RunOptions {
                resume: true,
                workers: Some(2),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(second.units_resumed, m);
        assert_eq!(fs::read(&second.records_path).unwrap(), reference, "cut after {m}");
    }
}

#[test]
fn resume_refuses_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig {
        n_ladder: vec![8],
        beta_list: vec![2.0],
        replicas: 1,
        output: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    run_experiment(&c, &RunOptions::default()).unwrap();
    c.seed += 1;
    let res = run_experiment(
        &c,
        &RunOptions {
            resume: true,
            ..RunOptions::default()
        },
    );
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn unwritable_output_fails_before_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let c = ExperimentConfig {
        n_ladder: vec![8],
        replicas: 1,
        output: blocker.join("sub"),
        ..ExperimentConfig::default()
    };
    assert!(matches!(run_experiment(&c, &RunOptions::default()), Err(Error::Io(_))));
}
