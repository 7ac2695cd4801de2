//! Per-replication result records and their aggregation into tidy CSVs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// The environment and data settings that identify a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub family: String,
    pub d: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub labeled_ratio: f64,
    pub lambda: f64,
    pub xi: f64,
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// `run`, `n` or `ratio`.
    pub study: String,
    pub method: String,
    pub replication: usize,
    pub seed: u64,
    pub config: CellConfig,
    pub chosen_c: Option<f64>,
    pub ope_value: Option<f64>,
    pub std_error: Option<f64>,
    pub n_eval_episodes: Option<usize>,
    pub suboptimality: Option<f64>,
    pub fit_seconds: Option<f64>,
    pub eval_seconds: Option<f64>,
    pub error: Option<String>,
    pub error_kind: Option<String>,
}

impl Record {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.ope_value.is_none()
    }
}

/// Mean, sample standard deviation and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub se: Option<f64>,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: None, std: None, se: None, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean: Some(mean), std: Some(std), se: Some(std / (count as f64).sqrt()), count }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    method: String,
    family: String,
    d: usize,
    n_actions: usize,
    horizon: usize,
    n_labeled: usize,
    n_unlabeled: usize,
}

impl CellKey {
    fn of(r: &Record) -> Self {
        let c = &r.config;
        Self {
            method: r.method.clone(),
            family: c.family.clone(),
            d: c.d,
            n_actions: c.n_actions,
            horizon: c.horizon,
            n_labeled: c.n_labeled,
            n_unlabeled: c.n_unlabeled,
        }
    }

    fn ratio(&self) -> f64 {
        let total = self.n_labeled + self.n_unlabeled;
        if total == 0 {
            0.0
        } else {
            self.n_labeled as f64 / total as f64
        }
    }
}

struct Cell {
    values: Vec<f64>,
    failures: usize,
}

fn group<'a>(records: impl IntoIterator<Item = &'a Record>) -> BTreeMap<CellKey, Cell> {
    let mut cells: BTreeMap<CellKey, Cell> = BTreeMap::new();
    for r in records {
        let cell = cells.entry(CellKey::of(r)).or_insert(Cell { values: Vec::new(), failures: 0 });
        match (r.failed(), r.ope_value) {
            (false, Some(v)) => cell.values.push(v),
            _ => cell.failures += 1,
        }
    }
    cells
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const SUMMARY_HEADER: [&str; 12] = [
    "method",
    "family",
    "d",
    "n_actions",
    "horizon",
    "n_labeled",
    "n_unlabeled",
    "labeled_ratio",
    "mean",
    "std",
    "count",
    "failures",
];

/// One row per (method, cell): mean and standard deviation of the OPE value.
pub fn write_summary<W: Write>(records: &[Record], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (k, cell) in group(records) {
        let s = Stats::of(&cell.values);
        w.write_record([
            k.method.clone(),
            k.family.clone(),
            k.d.to_string(),
            k.n_actions.to_string(),
            k.horizon.to_string(),
            k.n_labeled.to_string(),
            k.n_unlabeled.to_string(),
            k.ratio().to_string(),
            fmt(s.mean),
            fmt(s.std),
            s.count.to_string(),
            cell.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const N_HEADER: [&str; 10] = ["method", "family", "d", "n_actions", "horizon", "n", "mean", "std", "se", "count"];

const RATIO_HEADER: [&str; 11] =
    ["method", "family", "d", "n_actions", "horizon", "total_episodes", "labeled_ratio", "mean", "std", "se", "count"];

/// Value against labeled sample size, over fully labeled cells.
pub fn write_value_vs_n<W: Write>(records: &[Record], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(N_HEADER)?;
    for (k, cell) in group(records.iter().filter(|r| !is_ratio_record(r))) {
        let s = Stats::of(&cell.values);
        w.write_record([
            k.method.clone(),
            k.family.clone(),
            k.d.to_string(),
            k.n_actions.to_string(),
            k.horizon.to_string(),
            k.n_labeled.to_string(),
            fmt(s.mean),
            fmt(s.std),
            fmt(s.se),
            s.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Value against labeled ratio, over cells with unlabeled episodes or from
/// the ratio study.
pub fn write_value_vs_ratio<W: Write>(records: &[Record], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATIO_HEADER)?;
    let cells = group(records.iter().filter(|r| is_ratio_record(r)));
    // Order by total episodes, then ratio, within each method and environment.
    let mut keys: Vec<&CellKey> = cells.keys().collect();
    keys.sort_by(|a, b| {
        (&a.method, &a.family, a.d, a.n_actions, a.horizon, a.n_labeled + a.n_unlabeled, a.n_labeled).cmp(&(
            &b.method,
            &b.family,
            b.d,
            b.n_actions,
            b.horizon,
            b.n_labeled + b.n_unlabeled,
            b.n_labeled,
        ))
    });
    for k in keys {
        let s = Stats::of(&cells[k].values);
        w.write_record([
            k.method.clone(),
            k.family.clone(),
            k.d.to_string(),
            k.n_actions.to_string(),
            k.horizon.to_string(),
            (k.n_labeled + k.n_unlabeled).to_string(),
            k.ratio().to_string(),
            fmt(s.mean),
            fmt(s.std),
            fmt(s.se),
            s.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn is_ratio_record(r: &Record) -> bool {
    r.study == "ratio" || r.config.n_unlabeled > 0
}

pub fn write_jsonl<W: Write>(record: &Record, out: &mut W) -> CliResult<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Parsed records plus the number of lines that failed to parse.
pub fn read_jsonl<R: BufRead>(input: R) -> CliResult<(Vec<Record>, usize)> {
    let mut records = Vec::new();
    let mut corrupt = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line) {
            Ok(r) => records.push(r),
            Err(_) => corrupt += 1,
        }
    }
    Ok((records, corrupt))
}

/// Canonical order: method, then cell, then replication.
pub fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| {
        (CellKey::of(a), &a.study, a.replication).cmp(&(CellKey::of(b), &b.study, b.replication))
    });
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(method: &str, rep: usize, n: usize, unlabeled: usize, value: Option<f64>) -> Record {
        Record {
            study: "run".into(),
            method: method.into(),
            replication: rep,
            seed: rep as u64,
            config: CellConfig {
                family: "binomial".into(),
                d: 4,
                n_actions: 2,
                horizon: 3,
                n_labeled: n,
                n_unlabeled: unlabeled,
                labeled_ratio: n as f64 / (n + unlabeled) as f64,
                lambda: 1.0,
                xi: 0.01,
            },
            chosen_c: Some(0.001),
            ope_value: value,
            std_error: value.map(|_| 0.1),
            n_eval_episodes: value.map(|_| 10),
            suboptimality: None,
            fit_seconds: Some(0.5),
            eval_seconds: Some(0.1),
            error: if value.is_none() { Some("boom".into()) } else { None },
            error_kind: if value.is_none() { Some("solver".into()) } else { None },
        }
    }

    fn to_string(f: impl FnOnce(&mut Vec<u8>) -> CliResult<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn stats_match_hand_computation() {
        let s = Stats::of(&[1.0, 2.0, 6.0]);
        assert_eq!(s.mean, Some(3.0));
        assert!((s.std.unwrap() - 7f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.count, 3);
        assert_eq!(Stats::of(&[2.5]).std, Some(0.0));
        assert_eq!(Stats::of(&[]).mean, None);
    }

    #[test]
    fn summary_aggregates_per_method() {
        let records = vec![
            record("gpevi", 0, 100, 0, Some(1.0)),
            record("gpevi", 1, 100, 0, Some(2.0)),
            record("gpevi", 2, 100, 0, None),
            record("lpevi", 0, 100, 0, Some(4.0)),
        ];
        let csv = to_string(|b| write_summary(&records, b));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER.join(","));
        assert_eq!(lines[1], "gpevi,binomial,4,2,3,100,0,1,1.5,0.7071067811865476,2,1");
        assert_eq!(lines[2], "lpevi,binomial,4,2,3,100,0,1,4,0,1,0");
    }

    #[test]
    fn records_split_between_figures() {
        let records = vec![record("gpevi", 0, 100, 0, Some(1.0)), record("ss_gpevi", 0, 30, 70, Some(2.0))];
        let n = to_string(|b| write_value_vs_n(&records, b));
        let ratio = to_string(|b| write_value_vs_ratio(&records, b));
        assert_eq!(n.lines().count(), 2);
        assert!(n.lines().nth(1).unwrap().starts_with("gpevi,"));
        assert_eq!(ratio.lines().nth(1).unwrap(), "ss_gpevi,binomial,4,2,3,100,0.3,2,0,0,1");
    }

    #[test]
    fn empty_input_still_has_headers() {
        assert_eq!(to_string(|b| write_value_vs_n(&[], b)).trim(), N_HEADER.join(","));
        assert_eq!(to_string(|b| write_value_vs_ratio(&[], b)).trim(), RATIO_HEADER.join(","));
    }

    #[test]
    fn jsonl_round_trip_skips_corrupt_lines() {
        let a = record("gpevi", 0, 100, 0, Some(1.0));
        let b = record("gpevi", 1, 100, 0, None);
        let mut buf = Vec::new();
        write_jsonl(&a, &mut buf).unwrap();
        buf.extend_from_slice(b"{not json\n\n");
        write_jsonl(&b, &mut buf).unwrap();
        buf.extend_from_slice(b"{\"method\": 3}\n");
        let (records, corrupt) = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(records, vec![a, b]);
        assert_eq!(corrupt, 2);
    }

    #[test]
    fn sorting_is_by_method_then_replication() {
        let mut records =
            vec![record("lpevi", 0, 100, 0, Some(1.0)), record("gpevi", 1, 100, 0, Some(1.0)), record("gpevi", 0, 100, 0, Some(1.0))];
        sort_records(&mut records);
        let order: Vec<(&str, usize)> = records.iter().map(|r| (r.method.as_str(), r.replication)).collect();
        assert_eq!(order, vec![("gpevi", 0), ("gpevi", 1), ("lpevi", 0)]);
    }
}
