//! The four subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use glmdp::experiment::{ExperimentSpec, Method, Replication};
use glmdp::TrajectoryDataset;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_methods, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::records::{
    read_jsonl, sort_records, write_jsonl, write_summary, write_value_vs_n, write_value_vs_ratio, CellConfig, Record,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const VALUE_VS_N_FILE: &str = "value_vs_n.csv";
pub const VALUE_VS_RATIO_FILE: &str = "value_vs_ratio.csv";

/// Hash and size of one serialized dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetDigest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub sha256: String,
    pub episodes: usize,
    pub labeled: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationEntry {
    pub replication: usize,
    pub seed: u64,
    pub train: Option<DatasetDigest>,
    pub test: Option<DatasetDigest>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEntry {
    pub study: String,
    pub methods: Vec<String>,
    pub config: CellConfig,
    pub replications: Vec<ReplicationEntry>,
}

/// Everything needed to reproduce a command's outputs; contains no timings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellEntry>,
}

/// Outcome of `run` and `sweep`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<Record>,
    pub manifest: Manifest,
}

/// Outcome of `report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOutcome {
    pub records: usize,
    pub corrupt_lines: usize,
    pub missing_results: bool,
}

/// One (study, environment, sizes) configuration run over all replications.
#[derive(Debug, Clone)]
pub struct Cell {
    pub study: String,
    pub spec: ExperimentSpec,
    pub methods: Vec<Method>,
}

impl Cell {
    fn config(&self) -> CellConfig {
        let s = &self.spec;
        CellConfig {
            family: s.family.name().to_string(),
            d: s.d,
            n_actions: s.n_actions,
            horizon: s.horizon,
            n_labeled: s.n_labeled,
            n_unlabeled: s.n_unlabeled,
            labeled_ratio: s.labeled_ratio(),
            lambda: s.lambda,
            xi: s.xi,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_bytes(data: &TrajectoryDataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    Ok(buf)
}

fn digest(data: &TrajectoryDataset, bytes: &[u8], file: Option<String>) -> DatasetDigest {
    DatasetDigest {
        file,
        sha256: sha256_hex(bytes),
        episodes: data.len(),
        labeled: data.n_labeled(),
        unlabeled: data.n_unlabeled(),
    }
}

/// Labeled episodes followed by the reward-free ones.
fn training_file(rep: &Replication) -> CliResult<TrajectoryDataset> {
    Ok(rep.labeled.concat(&rep.unlabeled)?)
}

fn thread_pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn write_manifest(out: &Path, manifest: &Manifest) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn replication_seed(config: &ExperimentConfig, rep: usize) -> u64 {
    config.seed + rep as u64
}

/// Writes `rep_XXX/train.csv` and `rep_XXX/test.csv` for every replication.
pub fn cmd_generate(config: &ExperimentConfig) -> CliResult<Manifest> {
    config.validate()?;
    let spec = config.spec()?;
    let out = config.out.clone();
    create_dir(&out)?;
    let pool = thread_pool(config.workers)?;
    let entries: Vec<CliResult<ReplicationEntry>> = pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|r| {
                let seed = replication_seed(config, r);
                let rep = Replication::prepare(&spec, seed)?;
                let dir = format!("rep_{r:03}");
                create_dir(&out.join(&dir))?;
                let train = training_file(&rep)?;
                let mut digests = Vec::with_capacity(2);
                for (name, data) in [("train.csv", &train), ("test.csv", &rep.test)] {
                    let bytes = csv_bytes(data)?;
                    let rel = format!("{dir}/{name}");
                    fs::write(out.join(&rel), &bytes)?;
                    digests.push(digest(data, &bytes, Some(rel)));
                }
                log::info!("generated replication {r} (seed {seed})");
                let test = digests.pop();
                let train = digests.pop();
                Ok(ReplicationEntry { replication: r, seed, train, test, error: None })
            })
            .collect()
    });
    let replications = entries.into_iter().collect::<CliResult<Vec<_>>>()?;
    let cell = Cell { study: "generate".into(), spec, methods: Vec::new() };
    let manifest = Manifest {
        schema_version: config.schema_version,
        command: "generate".into(),
        config: config.clone(),
        cells: vec![CellEntry { study: cell.study.clone(), methods: Vec::new(), config: cell.config(), replications }],
    };
    write_manifest(&out, &manifest)?;
    Ok(manifest)
}

fn error_record(cell: &Cell, method: Method, r: usize, seed: u64, e: &CliError) -> Record {
    Record {
        study: cell.study.clone(),
        method: method.name().into(),
        replication: r,
        seed,
        config: cell.config(),
        chosen_c: None,
        ope_value: None,
        std_error: None,
        n_eval_episodes: None,
        suboptimality: None,
        fit_seconds: None,
        eval_seconds: None,
        error: Some(e.to_string()),
        error_kind: Some(e.kind().into()),
    }
}

fn run_replication(cell: &Cell, r: usize, seed: u64) -> (Vec<Record>, ReplicationEntry) {
    let prepared = Replication::prepare(&cell.spec, seed).map_err(CliError::from).and_then(|rep| {
        let train = training_file(&rep)?;
        let train_digest = digest(&train, &csv_bytes(&train)?, None);
        let test_digest = digest(&rep.test, &csv_bytes(&rep.test)?, None);
        let reference = if cell.spec.subopt_rollouts > 0 { Some(rep.reference_value()?) } else { None };
        Ok((rep, train_digest, test_digest, reference))
    });
    let (rep, train, test, reference) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let records = cell.methods.iter().map(|&m| error_record(cell, m, r, seed, &e)).collect();
            let entry = ReplicationEntry { replication: r, seed, train: None, test: None, error: Some(e.to_string()) };
            return (records, entry);
        }
    };
    let records = cell
        .methods
        .iter()
        .map(|&m| match rep.run_method(m, reference) {
            Ok(res) => Record {
                study: cell.study.clone(),
                method: m.name().into(),
                replication: r,
                seed,
                config: cell.config(),
                chosen_c: res.chosen_c,
                ope_value: Some(res.ope.value),
                std_error: Some(res.ope.std_error),
                n_eval_episodes: Some(res.ope.n_eval_episodes),
                suboptimality: res.suboptimality,
                fit_seconds: Some(res.fit_seconds),
                eval_seconds: Some(res.eval_seconds),
                error: None,
                error_kind: None,
            },
            Err(e) => {
                let e = CliError::from(e);
                log::warn!("{} failed on replication {r}: {e}", m.name());
                error_record(cell, m, r, seed, &e)
            }
        })
        .collect();
    let entry = ReplicationEntry { replication: r, seed, train: Some(train), test: Some(test), error: None };
    (records, entry)
}

/// Runs every cell, streaming records to `results.jsonl` through one writer,
/// then writes `summary.csv` and the manifest.
pub fn run_cells(config: &ExperimentConfig, command: &str, cells: &[Cell]) -> CliResult<RunOutcome> {
    let out = config.out.clone();
    create_dir(&out)?;
    let pool = thread_pool(config.workers)?;
    let writer = Mutex::new(BufWriter::new(File::create(out.join(RESULTS_FILE))?));
    let mut all_records = Vec::new();
    let mut cell_entries = Vec::with_capacity(cells.len());
    for cell in cells {
        log::info!(
            "{} cell: d={} A={} n={} N={}",
            cell.study,
            cell.spec.d,
            cell.spec.n_actions,
            cell.spec.n_labeled,
            cell.spec.n_unlabeled
        );
        let results: Vec<CliResult<(Vec<Record>, ReplicationEntry)>> = pool.install(|| {
            (0..config.reps)
                .into_par_iter()
                .map(|r| {
                    let (records, entry) = run_replication(cell, r, replication_seed(config, r));
                    let mut w = writer.lock().expect("writer lock poisoned");
                    for rec in &records {
                        write_jsonl(rec, &mut *w)?;
                    }
                    w.flush()?;
                    log::info!("{} replication {r} done", cell.study);
                    Ok((records, entry))
                })
                .collect()
        });
        let mut records = Vec::new();
        let mut replications = Vec::new();
        for res in results {
            let (rs, entry) = res?;
            records.extend(rs);
            replications.push(entry);
        }
        sort_records(&mut records);
        cell_entries.push(CellEntry {
            study: cell.study.clone(),
            methods: cell.methods.iter().map(|m| m.name().to_string()).collect(),
            config: cell.config(),
            replications,
        });
        all_records.extend(records);
    }
    drop(writer);

    write_summary(&all_records, BufWriter::new(File::create(out.join(SUMMARY_FILE))?))?;
    let manifest = Manifest {
        schema_version: config.schema_version,
        command: command.into(),
        config: config.clone(),
        cells: cell_entries,
    };
    write_manifest(&out, &manifest)?;
    check_total_failures(cells, &all_records)?;
    Ok(RunOutcome { records: all_records, manifest })
}

/// Errors when some method failed on every replication of a cell.
fn check_total_failures(cells: &[Cell], records: &[Record]) -> CliResult<()> {
    for cell in cells {
        let config = cell.config();
        for m in &cell.methods {
            let mine: Vec<&Record> = records
                .iter()
                .filter(|r| r.method == m.name() && r.study == cell.study && r.config == config)
                .collect();
            if !mine.is_empty() && mine.iter().all(|r| r.failed()) {
                let first = mine[0];
                let msg = format!(
                    "{} failed on all replications (n={}, N={}): {}",
                    m.name(),
                    config.n_labeled,
                    config.n_unlabeled,
                    first.error.as_deref().unwrap_or("unknown error")
                );
                return Err(match first.error_kind.as_deref() {
                    Some("config") => CliError::Config(msg),
                    Some("data") => CliError::Data(msg),
                    _ => CliError::Solver(msg),
                });
            }
        }
    }
    Ok(())
}

/// Trains and evaluates every configured method on every replication.
pub fn cmd_run(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let cell = Cell { study: "run".into(), spec: config.spec()?, methods: config.methods()? };
    run_cells(config, "run", &[cell])
}

/// The cells of the configured studies, in execution order.
pub fn sweep_cells(config: &ExperimentConfig) -> CliResult<Vec<Cell>> {
    let base = config.spec()?;
    let mut cells = Vec::new();
    for study in &config.sweep.studies {
        match study.as_str() {
            "n" => {
                let methods = config.methods()?;
                for &d in &config.sweep.d_grid {
                    for &a in &config.sweep.action_grid {
                        for &n in &config.sweep.n_grid {
                            let spec = ExperimentSpec { d, n_actions: a, n_labeled: n, n_unlabeled: 0, ..base.clone() };
                            cells.push(Cell { study: "n".into(), spec, methods: methods.clone() });
                        }
                    }
                }
            }
            "ratio" => {
                let methods = parse_methods(&config.sweep.ratio_methods)?;
                let total = config.sweep.total_episodes;
                for &ratio in &config.sweep.labeled_ratios {
                    let n = (ratio * total as f64).round() as usize;
                    let spec = ExperimentSpec { n_labeled: n, n_unlabeled: total - n, ..base.clone() };
                    cells.push(Cell { study: "ratio".into(), spec, methods: methods.clone() });
                }
            }
            other => return Err(CliError::Config(format!("unknown study '{other}'"))),
        }
    }
    for cell in &cells {
        cell.spec.validate()?;
    }
    Ok(cells)
}

/// Runs the sample-size and labeled-ratio studies into one results file.
pub fn cmd_sweep(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let cells = sweep_cells(config)?;
    run_cells(config, "sweep", &cells)
}

/// Aggregates `results.jsonl` in `dir` into the plot-data CSVs in `out`.
pub fn cmd_report(dir: &Path, out: Option<&Path>) -> CliResult<ReportOutcome> {
    let out: PathBuf = out.unwrap_or(dir).to_path_buf();
    create_dir(&out)?;
    let path = dir.join(RESULTS_FILE);
    let (mut records, corrupt, missing) = match File::open(&path) {
        Ok(f) => {
            let (r, c) = read_jsonl(BufReader::new(f))?;
            (r, c, false)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (Vec::new(), 0, true),
        Err(e) => return Err(e.into()),
    };
    if missing {
        log::warn!("no {} in {}; writing empty tables", RESULTS_FILE, dir.display());
    }
    if corrupt > 0 {
        log::warn!("skipped {corrupt} corrupt record line(s)");
    }
    sort_records(&mut records);
    write_value_vs_n(&records, BufWriter::new(File::create(out.join(VALUE_VS_N_FILE))?))?;
    write_value_vs_ratio(&records, BufWriter::new(File::create(out.join(VALUE_VS_RATIO_FILE))?))?;
    Ok(ReportOutcome { records: records.len(), corrupt_lines: corrupt, missing_results: missing })
}

/// Writes `text` then a newline to stdout, ignoring closed pipes.
pub fn print_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}
