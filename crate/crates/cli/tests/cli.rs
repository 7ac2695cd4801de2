use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use glmdp::TrajectoryDataset;
use glmdp_cli::commands::{cmd_generate, cmd_report, cmd_run, cmd_sweep, MANIFEST_FILE, RESULTS_FILE, SUMMARY_FILE};
use glmdp_cli::records::{read_jsonl, write_jsonl, Record};
use glmdp_cli::{CliError, ExperimentConfig};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(
        r#"
schema_version = 1
seed = 11
reps = 3
workers = 1
methods = ["gpevi"]
[env]
d = 4
horizon = 3
[data]
n_labeled = 100
test_size = 60
pilot_episodes = 400
"#,
        false,
    )
    .unwrap();
    c.out = out.to_path_buf();
    c
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn records(dir: &Path) -> Vec<Record> {
    read_jsonl(fs::File::open(dir.join(RESULTS_FILE)).map(std::io::BufReader::new).unwrap()).unwrap().0
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    cmd_generate(&config).unwrap();
    let first = read(&dir.path().join(MANIFEST_FILE));
    cmd_generate(&config).unwrap();
    assert_eq!(read(&dir.path().join(MANIFEST_FILE)), first);
    assert!(!first.contains("seconds"));
}

#[test]
fn generate_counts_and_hashes_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.data.n_unlabeled = 40;
    let m = cmd_generate(&config).unwrap();
    let reps = &m.cells[0].replications;
    assert_eq!(reps.len(), 3);
    for (r, entry) in reps.iter().enumerate() {
        assert_eq!(entry.seed, 11 + r as u64);
        let train = entry.train.as_ref().unwrap();
        assert_eq!(train.episodes, 140);
        assert_eq!((train.labeled, train.unlabeled), (100, 40));
        let bytes = fs::read(dir.path().join(train.file.as_ref().unwrap())).unwrap();
        let data = TrajectoryDataset::read_csv(bytes.as_slice(), 3, 2).unwrap();
        assert_eq!(data.len(), 140);
        assert_eq!(data.n_unlabeled(), 40);
        assert_eq!(entry.test.as_ref().unwrap().episodes, 60);
    }
}

#[test]
fn empty_datasets_are_schema_valid() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.data.n_labeled = 0;
    config.data.test_size = 0;
    config.reps = 1;
    let m = cmd_generate(&config).unwrap();
    for d in [m.cells[0].replications[0].train.as_ref().unwrap(), m.cells[0].replications[0].test.as_ref().unwrap()] {
        assert_eq!(d.episodes, 0);
        let text = read(&dir.path().join(d.file.as_ref().unwrap()));
        assert!(text.starts_with("episode,h,action,reward,reward_observed,state_0"));
        let data = TrajectoryDataset::read_csv(text.as_bytes(), 3, 2).unwrap();
        assert!(data.is_empty());
        assert_eq!(data.state_dim(), 4);
    }
}

#[test]
fn run_hashes_match_generated_files() {
    let gen = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    let g = cmd_generate(&tiny(gen.path())).unwrap();
    let r = cmd_run(&tiny(run.path())).unwrap();
    for (a, b) in g.cells[0].replications.iter().zip(&r.manifest.cells[0].replications) {
        assert_eq!(a.train.as_ref().unwrap().sha256, b.train.as_ref().unwrap().sha256);
        assert_eq!(a.test.as_ref().unwrap().sha256, b.test.as_ref().unwrap().sha256);
    }
}

#[test]
fn tiny_run_finishes_quickly_with_one_record_per_replication() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    cmd_run(&tiny(dir.path())).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let recs = records(dir.path());
    assert_eq!(recs.len(), 3);
    let mut reps: Vec<usize> = recs.iter().map(|r| r.replication).collect();
    reps.sort();
    assert_eq!(reps, vec![0, 1, 2]);
    for r in &recs {
        assert_eq!(r.method, "gpevi");
        assert!(r.error.is_none());
        assert!(r.ope_value.unwrap().is_finite());
        assert!(r.chosen_c.is_some());
        assert_eq!(r.n_eval_episodes, Some(60));
    }
    let summary = read(&dir.path().join(SUMMARY_FILE));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn single_replication_summary_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = tiny(a.path());
    ca.reps = 1;
    ca.methods = vec!["gpevi".into(), "lpevi".into(), "single_q".into()];
    let mut cb = ca.clone();
    cb.out = b.path().to_path_buf();
    cb.workers = 2;
    cmd_run(&ca).unwrap();
    cmd_run(&cb).unwrap();
    assert_eq!(read(&a.path().join(SUMMARY_FILE)), read(&b.path().join(SUMMARY_FILE)));
}

#[test]
fn manifest_alone_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run(&tiny(a.path())).unwrap();
    let mut replay = ExperimentConfig::load(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(replay, tiny(a.path()));
    replay.out = b.path().to_path_buf();
    cmd_run(&replay).unwrap();
    assert_eq!(read(&a.path().join(SUMMARY_FILE)), read(&b.path().join(SUMMARY_FILE)));
}

#[test]
fn ratio_sweep_has_one_row_per_ratio_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.reps = 1;
    config.solver.fixed_c = Some(0.001);
    config.data.test_size = 30;
    config.sweep.studies = vec!["ratio".into()];
    config.sweep.total_episodes = 100;
    let outcome = cmd_sweep(&config).unwrap();
    assert_eq!(outcome.manifest.cells.len(), 9);
    assert_eq!(outcome.records.len(), 27);
    let report = cmd_report(dir.path(), None).unwrap();
    assert_eq!(report.records, 27);
    let table = read(&dir.path().join("value_vs_ratio.csv"));
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 27);
    for method in ["gpevi", "gpevi_full", "ss_gpevi"] {
        let ratios: Vec<&str> =
            rows.iter().filter(|l| l.starts_with(&format!("{method},"))).map(|l| l.split(',').nth(6).unwrap()).collect();
        assert_eq!(ratios, vec!["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"]);
    }
}

#[test]
fn n_sweep_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.reps = 1;
    config.solver.fixed_c = Some(0.001);
    config.data.test_size = 20;
    config.sweep.studies = vec!["n".into()];
    config.sweep.d_grid = vec![3, 4];
    config.sweep.action_grid = vec![2];
    config.sweep.n_grid = vec![50, 80];
    cmd_sweep(&config).unwrap();
    cmd_report(dir.path(), None).unwrap();
    let table = read(&dir.path().join("value_vs_n.csv"));
    let cells: Vec<(String, String)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].to_string(), f[5].to_string())
        })
        .collect();
    assert_eq!(cells, vec![("3".into(), "50".into()), ("3".into(), "80".into()), ("4".into(), "50".into()), ("4".into(), "80".into())]);
}

#[test]
fn report_on_empty_dir_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_report(dir.path(), None).unwrap();
    assert!(r.missing_results);
    assert_eq!(r.records, 0);
    assert_eq!(read(&dir.path().join("value_vs_n.csv")).lines().count(), 1);
    assert_eq!(read(&dir.path().join("value_vs_ratio.csv")).lines().count(), 1);
}

#[test]
fn report_mean_matches_records_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&tiny(dir.path())).unwrap();
    let mut text = read(&dir.path().join(RESULTS_FILE));
    text.push_str("garbage line\n{\"method\":\"gpevi\"}\n");
    fs::write(dir.path().join(RESULTS_FILE), text).unwrap();

    let r = cmd_report(dir.path(), None).unwrap();
    assert_eq!((r.records, r.corrupt_lines), (3, 2));
    let table = read(&dir.path().join("value_vs_n.csv"));
    let mean: f64 = table.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    let hand = records(dir.path()).iter().map(|r| r.ope_value.unwrap()).sum::<f64>() / 3.0;
    assert!((mean - hand).abs() < 1e-12);

    cmd_report(dir.path(), None).unwrap();
    assert_eq!(read(&dir.path().join("value_vs_n.csv")), table);
}

#[test]
fn report_excludes_failed_records_from_means() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&tiny(dir.path())).unwrap();
    let mut recs = records(dir.path());
    let mut failed = recs[0].clone();
    failed.replication = 9;
    failed.ope_value = None;
    failed.error = Some("solver error".into());
    recs.push(failed);
    let mut buf = Vec::new();
    for r in &recs {
        write_jsonl(r, &mut buf).unwrap();
    }
    fs::write(dir.path().join(RESULTS_FILE), buf).unwrap();
    cmd_report(dir.path(), None).unwrap();
    let row = read(&dir.path().join("value_vs_n.csv")).lines().nth(1).unwrap().to_string();
    assert!(row.ends_with(",3"), "{row}");
}

#[test]
fn method_failing_everywhere_is_an_error_but_records_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.data.n_labeled = 3;
    config.methods = vec!["gpevi".into(), "single_q".into()];
    let err = cmd_run(&config).unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    let recs = records(dir.path());
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().filter(|r| r.method == "gpevi").all(|r| r.error_kind.as_deref() == Some("data")));
    assert!(recs.iter().filter(|r| r.method == "single_q").all(|r| r.error.is_none()));
    assert!(dir.path().join(SUMMARY_FILE).exists());
    assert!(dir.path().join(MANIFEST_FILE).exists());
}

fn glmdp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_glmdp")).args(args).env("RUST_LOG", "off").output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 7\n").unwrap();
    assert_eq!(glmdp(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(glmdp(&["run", "--frobnicate"]).status.code(), Some(2));

    fs::write(&cfg, "schema_version = 1\nworkers = 1\n[env]\nd = 3\nhorizon = 2\n[data]\nn_labeled = 3\npilot_episodes = 100\n")
        .unwrap();
    let out = dir.path().join("o");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--reps", "1"];
    assert_eq!(glmdp(&[&args[..], &["--methods", "gpevi"]].concat()).status.code(), Some(3));
    let ok = glmdp(&[&args[..], &["--methods", "single_q,global_q"]].concat());
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(records(&out).len(), 2);
    assert_eq!(glmdp(&["report", out.to_str().unwrap()]).status.code(), Some(0));
}
