//! Plain-text run reports.
//!
//! Reports are line oriented and deterministic: one metric per line, keys
//! in fixed order, floats printed with six decimals. Two runs with the
//! same inputs produce byte-identical files, which makes reports safe to
//! diff and to regression-pin.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ClassLabel, ClassRecallRow};
use crate::trainer::{EpochStats, TrainOutcome};

/// Collected metrics of one run. Label-dependent sections are empty or
/// None on unlabeled data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean positive-mining rate per epoch, `(epoch, value)`.
    pub pmr_per_epoch: Vec<(usize, f64)>,
    /// Final-epoch fraction of queries whose top mined slot matched class.
    pub mining_r1: Option<f64>,
    /// Final-epoch per-class mining recall.
    pub cmr: BTreeMap<ClassLabel, ClassRecallRow>,
    pub cmr_median: Option<f64>,
    /// Retrieval recall per cutoff `k`, measured on held-out queries.
    pub retrieval: BTreeMap<usize, f64>,
}

impl MetricsReport {
    pub fn from_outcome(
        outcome: &TrainOutcome,
        retrieval: BTreeMap<usize, f64>,
    ) -> MetricsReport {
        let pmr_per_epoch = outcome
            .epoch_stats
            .iter()
            .filter_map(|s| s.pmr_mean.map(|v| (s.epoch, v)))
            .collect();
        let last = outcome.epoch_stats.last();
        MetricsReport {
            pmr_per_epoch,
            mining_r1: last.and_then(|s| s.recall_at_1),
            cmr: outcome.last_epoch_cmr.clone().unwrap_or_default(),
            cmr_median: last.and_then(|s| s.cmr_median),
            retrieval,
        }
    }
}

/// Renders the report body. `config_line` is embedded verbatim on the
/// first line; notes follow, then metrics in fixed order.
pub fn render_report(config_line: &str, report: &MetricsReport, notes: &[String]) -> String {
    let mut out = String::new();
    writeln!(out, "config {config_line}").unwrap();
    for note in notes {
        writeln!(out, "note {note}").unwrap();
    }
    for (epoch, value) in &report.pmr_per_epoch {
        writeln!(out, "pmr epoch={epoch} value={value:.6}").unwrap();
    }
    if let Some(r1) = report.mining_r1 {
        writeln!(out, "mining_r1 value={r1:.6}").unwrap();
    }
    for (class, row) in &report.cmr {
        writeln!(
            out,
            "cmr class={class} tp={} size={} value={:.6}",
            row.tp_count, row.class_size, row.recall
        )
        .unwrap();
    }
    if let Some(m) = report.cmr_median {
        writeln!(out, "cmr_median value={m:.6}").unwrap();
    }
    for (k, recall) in &report.retrieval {
        writeln!(out, "retrieval k={k} value={recall:.6}").unwrap();
    }
    out
}

/// Tab-separated per-class recall table, one row per class.
pub fn render_cmr_table(report: &MetricsReport) -> String {
    let mut out = String::from("class\ttp\tsize\trecall\n");
    for (class, row) in &report.cmr {
        writeln!(
            out,
            "{class}\t{}\t{}\t{:.6}",
            row.tp_count, row.class_size, row.recall
        )
        .unwrap();
    }
    out
}

/// Writes `report.txt` and `cmr_table.tsv` into `dir`.
pub fn write_report(
    dir: impl AsRef<Path>,
    config_line: &str,
    report: &MetricsReport,
    notes: &[String],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let report_path = dir.join("report.txt");
    fs::write(&report_path, render_report(config_line, report, notes))
        .map_err(Error::io(&report_path))?;
    let table_path = dir.join("cmr_table.tsv");
    fs::write(&table_path, render_cmr_table(report)).map_err(Error::io(&table_path))?;
    Ok(())
}

/// One line per epoch; metrics that were unavailable print as `-`.
pub fn render_run_log(stats: &[EpochStats]) -> String {
    let mut out = String::new();
    for s in stats {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "-".into(),
        };
        writeln!(
            out,
            "cycle={} epoch={} topk={} loss={:.6} pmr={} r1={} cmr_median={}",
            s.cycle,
            s.epoch,
            s.final_top_k,
            s.loss_mean,
            fmt(s.pmr_mean),
            fmt(s.recall_at_1),
            fmt(s.cmr_median)
        )
        .unwrap();
    }
    out
}

pub fn write_run_log(path: impl AsRef<Path>, stats: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_run_log(stats)).map_err(Error::io(path))
}

/// A report read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedReport {
    pub config_line: String,
    pub notes: Vec<String>,
    pub report: MetricsReport,
}

/// Parses text produced by [`render_report`]. Strict: unknown line kinds
/// or malformed fields are parse errors with their line number.
pub fn parse_report(path: impl AsRef<Path>) -> Result<ParsedReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let perr = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    };

    let mut config_line = None;
    let mut notes = Vec::new();
    let mut report = MetricsReport {
        pmr_per_epoch: Vec::new(),
        mining_r1: None,
        cmr: BTreeMap::new(),
        cmr_median: None,
        retrieval: BTreeMap::new(),
    };

    // "key=value" fields after the line kind, order as written.
    fn fields(rest: &str) -> Vec<(&str, &str)> {
        rest.split_whitespace()
            .filter_map(|tok| tok.split_once('='))
            .collect()
    }
    fn field<'a>(fs: &[(&str, &'a str)], key: &str) -> Option<&'a str> {
        fs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "config" => {
                if config_line.is_some() {
                    return Err(perr(lineno, "duplicate config line"));
                }
                config_line = Some(rest.to_string());
            }
            "note" => notes.push(rest.to_string()),
            "pmr" => {
                let fs = fields(rest);
                let epoch = field(&fs, "epoch")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing epoch"))?;
                let value = field(&fs, "value")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing value"))?;
                report.pmr_per_epoch.push((epoch, value));
            }
            "mining_r1" => {
                let fs = fields(rest);
                let value = field(&fs, "value")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing value"))?;
                report.mining_r1 = Some(value);
            }
            "cmr" => {
                let fs = fields(rest);
                let class = field(&fs, "class")
                    .and_then(|v| v.parse::<ClassLabel>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing class"))?;
                let tp = field(&fs, "tp")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing tp"))?;
                let size = field(&fs, "size")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing size"))?;
                let value = field(&fs, "value")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing value"))?;
                report.cmr.insert(
                    class,
                    ClassRecallRow {
                        tp_count: tp,
                        class_size: size,
                        recall: value,
                    },
                );
            }
            "cmr_median" => {
                let fs = fields(rest);
                let value = field(&fs, "value")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing value"))?;
                report.cmr_median = Some(value);
            }
            "retrieval" => {
                let fs = fields(rest);
                let k = field(&fs, "k")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing k"))?;
                let value = field(&fs, "value")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| perr(lineno, "bad or missing value"))?;
                report.retrieval.insert(k, value);
            }
            other => return Err(perr(lineno, &format!("unknown line kind {other:?}"))),
        }
    }

    let config_line = config_line.ok_or_else(|| perr(1, "missing config line"))?;
    Ok(ParsedReport {
        config_line,
        notes,
        report,
    })
}
