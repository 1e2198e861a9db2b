//! Machine-readable result emission: one canonical JSON document per run,
//! CSV curves and summaries, and per-step usage-mask exports.
//!
//! Emission is byte-deterministic: no timestamps, stable column order,
//! UTF-8, LF line endings. Emitting the same record twice produces
//! identical files.

use crate::config::TaskKind;
use crate::HarnessError;
use serde::{Deserialize, Serialize};
use skiprnn::metrics::{mnist_step_to_rowcol, UsageRecord};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub loss: f64,
    pub metric: f64,
    pub update_frac: f64,
    pub solved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    /// Crate version stamp.
    pub version: String,
    pub config_hash: String,
    /// Fully resolved configuration.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// "ok" or "failed_numeric".
    pub status: String,
    pub solved: bool,
    pub metric_kind: String,
    pub final_loss: f64,
    pub final_metric: f64,
    pub seq_len: usize,
    pub updates_mean: f64,
    pub updates_std_per_seq: f64,
    pub update_frac_mean: f64,
    pub update_frac_std_per_seq: f64,
    pub flops_per_seq: f64,
    pub train_batches: u64,
    pub curve: Vec<CurvePoint>,
    /// (file name, sha256) of consumed data files, MNIST only.
    pub data_checksums: Vec<(String, String)>,
}

impl ResultRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("bad record: {e}")))
    }
}

pub const SUMMARY_HEADER: &str = "label,task,cell,policy,seed,status,solved,final_loss,final_metric,update_frac_mean,update_frac_std,updates_mean,updates_std_per_seq,flops,train_batches,config_hash";

/// One-row summary CSV.
pub fn summary_csv(record: &ResultRecord) -> String {
    let cfg = &record.config;
    let get = |k: &str| cfg.get(k).map(String::as_str).unwrap_or("");
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        get("label"),
        get("task"),
        get("cell"),
        get("policy"),
        record.seed,
        record.status,
        record.solved,
        record.final_loss,
        record.final_metric,
        record.update_frac_mean,
        record.update_frac_std_per_seq,
        record.updates_mean,
        record.updates_std_per_seq,
        record.flops_per_seq,
        record.train_batches,
        record.config_hash,
    );
    out
}

/// One row per evaluation point.
pub fn curves_csv(record: &ResultRecord) -> String {
    let mut out = String::from("step,loss,metric,update_frac,solved\n");
    for p in &record.curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.step, p.loss, p.metric, p.update_frac, p.solved
        );
    }
    out
}

/// Usage-mask CSV: step index, used flag and the step's input values; MNIST
/// steps also carry their pixel coordinate.
pub fn usage_csv(task: TaskKind, records: &[UsageRecord]) -> String {
    let mut out = String::new();
    match task {
        TaskKind::Adding => out.push_str("example,step,used,value,marker\n"),
        TaskKind::FreqDisc => out.push_str("example,step,used,amplitude\n"),
        TaskKind::Mnist => out.push_str("example,step,used,row,col,pixel\n"),
    }
    for r in records {
        match task {
            TaskKind::Adding => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.example, r.step, r.used, r.inputs[0], r.inputs[1]
                );
            }
            TaskKind::FreqDisc => {
                let _ = writeln!(out, "{},{},{},{}", r.example, r.step, r.used, r.inputs[0]);
            }
            TaskKind::Mnist => {
                let (row, col) = mnist_step_to_rowcol(r.step);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.example, r.step, r.used, row, col, r.inputs[0]
                );
            }
        }
    }
    out
}

/// Write all artifacts of one run under `dir`.
pub fn write_run(
    dir: &Path,
    task: TaskKind,
    record: &ResultRecord,
    usage: &[UsageRecord],
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Io(format!("creating {}: {e}", dir.display())))?;
    let write = |name: &str, contents: String| -> Result<(), HarnessError> {
        std::fs::write(dir.join(name), contents)
            .map_err(|e| HarnessError::Io(format!("writing {name}: {e}")))
    };
    write("record.json", record.to_json())?;
    write("summary.csv", summary_csv(record))?;
    write("curves.csv", curves_csv(record))?;
    write("usage_masks.csv", usage_csv(task, usage))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> ResultRecord {
        ResultRecord {
            version: "0.1.0".into(),
            config_hash: "abc".into(),
            config: BTreeMap::from([
                ("label".to_string(), "t".to_string()),
                ("task".to_string(), "adding".to_string()),
                ("cell".to_string(), "lstm".to_string()),
                ("policy".to_string(), "dense".to_string()),
            ]),
            seed: 3,
            status: "ok".into(),
            solved: true,
            metric_kind: "mse".into(),
            final_loss: 0.001,
            final_metric: 0.001,
            seq_len: 50,
            updates_mean: 50.0,
            updates_std_per_seq: 0.0,
            update_frac_mean: 1.0,
            update_frac_std_per_seq: 0.0,
            flops_per_seq: 2_464_000.0,
            train_batches: 100,
            curve: vec![CurvePoint {
                step: 250,
                loss: 0.1,
                metric: 0.1,
                update_frac: 1.0,
                solved: false,
            }],
            data_checksums: vec![],
        }
    }

    #[test]
    fn json_roundtrip_is_byte_identical() {
        let r = record();
        let json = r.to_json();
        let parsed = ResultRecord::from_json(&json).unwrap();
        assert_eq!(parsed.to_json(), json);
    }

    #[test]
    fn emission_is_deterministic() {
        let r = record();
        assert_eq!(r.to_json(), r.to_json());
        assert_eq!(summary_csv(&r), summary_csv(&r));
        assert_eq!(curves_csv(&r), curves_csv(&r));
    }

    #[test]
    fn summary_contains_required_columns() {
        for col in ["solved", "update_frac_mean", "update_frac_std", "flops"] {
            assert!(SUMMARY_HEADER.split(',').any(|c| c == col), "missing {col}");
        }
    }

    #[test]
    fn usage_csv_schemas() {
        let recs = vec![UsageRecord {
            example: 0,
            step: 29,
            used: true,
            inputs: vec![0.5],
        }];
        let csv = usage_csv(TaskKind::Mnist, &recs);
        assert!(csv.starts_with("example,step,used,row,col,pixel\n"));
        assert!(csv.contains("0,29,true,1,1,0.5"));
    }
}
