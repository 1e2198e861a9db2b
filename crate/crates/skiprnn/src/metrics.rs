//! Update-count tracking, the inference FLOP cost model and run-level
//! aggregation.
//!
//! The cost model counts one FLOP per multiply-accumulate in the recurrent
//! affine maps, plus the gate projection for skip variants. Biases,
//! nonlinearities and readout heads are excluded; skipped steps cost
//! nothing. This is the accounting that reproduces the published cost
//! columns.

use crate::cells::CellKind;
use crate::error::{Error, Result};

/// Cost description of one stacked model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub cell: CellKind,
    pub input_size: usize,
    pub layer_sizes: Vec<usize>,
    /// Active gate-projection width (skip variants only).
    pub gate_width: Option<usize>,
}

impl CostModel {
    /// MACs for one executed update across the stack.
    pub fn macs_per_update(&self) -> u64 {
        let groups = self.cell.gate_groups() as u64;
        let mut macs = 0u64;
        let mut in_size = self.input_size as u64;
        for &h in &self.layer_sizes {
            let h = h as u64;
            macs += groups * (in_size + h) * h;
            in_size = h;
        }
        macs + self.gate_width.unwrap_or(0) as u64
    }
}

/// Inference FLOPs for one sequence: executed updates times the per-update
/// MAC count. `updates` may be a fractional mean over an evaluation set.
pub fn flops_per_sequence(model: &CostModel, updates: f64, seq_len: usize) -> Result<f64> {
    if !(0.0..=seq_len as f64).contains(&updates) {
        return Err(Error::Config(format!(
            "updates {updates} outside [0, {seq_len}]"
        )));
    }
    Ok(updates * model.macs_per_update() as f64)
}

/// Round to `sig` significant figures (for cost-table comparison). Goes
/// through decimal formatting so the result is the exact f64 nearest the
/// printed table value.
pub fn round_sig(x: f64, sig: u32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{:.*e}", sig.saturating_sub(1) as usize, x)
        .parse()
        .expect("formatted float always parses")
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "aggregate of zero values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Summary {
        mean,
        std: var.sqrt(),
    }
}

/// One evaluation's curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    /// Batches (synthetic tasks) or epochs (MNIST) completed.
    pub step: u64,
    pub loss: f64,
    /// Task metric: MSE for regression, accuracy for classification.
    pub metric: f64,
    pub update_frac: f64,
    pub solved: bool,
}

/// Everything measured over one run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub curve: Vec<EvalPoint>,
    pub final_loss: f64,
    pub final_metric: f64,
    pub solved: bool,
    /// Mean updates per sequence over the final evaluation set.
    pub updates_mean: f64,
    /// Per-sequence standard deviation of the update count (within-run).
    pub updates_std_per_seq: f64,
    pub update_frac_mean: f64,
    pub update_frac_std_per_seq: f64,
    pub flops_per_seq: f64,
    pub seq_len: usize,
    /// Usage masks for a sampled subset of evaluation sequences.
    pub sample_masks: Vec<Vec<bool>>,
    /// Mean usage per step position over the evaluation set.
    pub per_step_usage: Vec<f64>,
}

impl RunMetrics {
    /// Update statistics from per-sequence usage masks; the reported
    /// fraction is exactly the mean of the masks.
    pub fn update_stats(masks: &[Vec<bool>], seq_len: usize) -> (Summary, Summary) {
        let counts: Vec<f64> = masks
            .iter()
            .map(|m| m.iter().filter(|&&u| u).count() as f64)
            .collect();
        let count_summary = aggregate(&counts);
        let fracs: Vec<f64> = counts.iter().map(|c| c / seq_len as f64).collect();
        let frac_summary = aggregate(&fracs);
        (count_summary, frac_summary)
    }
}

/// Aggregate per-field statistics over the runs of one configuration.
#[derive(Debug, Clone)]
pub struct RunAggregate {
    pub runs: usize,
    pub solved_count: usize,
    pub metric: Summary,
    pub update_frac: Summary,
    pub updates: Summary,
    pub flops: Summary,
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<RunAggregate> {
    if runs.is_empty() {
        return Err(Error::Config("aggregate over zero runs".into()));
    }
    let metric: Vec<f64> = runs.iter().map(|r| r.final_metric).collect();
    let frac: Vec<f64> = runs.iter().map(|r| r.update_frac_mean).collect();
    let updates: Vec<f64> = runs.iter().map(|r| r.updates_mean).collect();
    let flops: Vec<f64> = runs.iter().map(|r| r.flops_per_seq).collect();
    Ok(RunAggregate {
        runs: runs.len(),
        solved_count: runs.iter().filter(|r| r.solved).count(),
        metric: aggregate(&metric),
        update_frac: aggregate(&frac),
        updates: aggregate(&updates),
        flops: aggregate(&flops),
    })
}

/// One exported usage record: step index, used flag, and the step's input
/// values (plus the pixel coordinate for image sequences).
#[derive(Debug, Clone, PartialEq)]
pub struct UsageRecord {
    pub example: usize,
    pub step: usize,
    pub used: bool,
    pub inputs: Vec<f64>,
}

/// Flatten per-sequence masks and inputs into plot-ready records.
/// `inputs[example][step]` holds the input values at that step.
pub fn usage_records(
    masks: &[Vec<bool>],
    inputs: &[Vec<Vec<f64>>],
) -> Result<Vec<UsageRecord>> {
    if masks.len() != inputs.len() {
        return Err(Error::Config(format!(
            "mask/input example counts disagree: {} vs {}",
            masks.len(),
            inputs.len()
        )));
    }
    let mut records = Vec::new();
    for (ex, (mask, seq)) in masks.iter().zip(inputs).enumerate() {
        if mask.len() != seq.len() {
            return Err(Error::Config(format!(
                "mask/input lengths disagree on example {ex}: {} vs {}",
                mask.len(),
                seq.len()
            )));
        }
        for (step, (&used, vals)) in mask.iter().zip(seq).enumerate() {
            records.push(UsageRecord {
                example: ex,
                step,
                used,
                inputs: vals.clone(),
            });
        }
    }
    Ok(records)
}

/// Row-major pixel coordinate of a flattened 28x28 MNIST step.
pub fn mnist_step_to_rowcol(step: usize) -> (usize, usize) {
    (step / 28, step % 28)
}

/// Fraction of the steps falling in the given pixel rows that were skipped.
pub fn skip_fraction_in_pixel_rows(mask: &[bool], rows: &[usize]) -> f64 {
    let mut total = 0usize;
    let mut skipped = 0usize;
    for (step, &used) in mask.iter().enumerate() {
        let (row, _) = mnist_step_to_rowcol(step);
        if rows.contains(&row) {
            total += 1;
            if !used {
                skipped += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        skipped as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lstm_adding() -> CostModel {
        CostModel {
            cell: CellKind::Lstm,
            input_size: 2,
            layer_sizes: vec![110],
            gate_width: None,
        }
    }

    #[test]
    fn dense_lstm_adding_cost() {
        // 4 * (2 + 110) * 110 * 50 = 2,464,000.
        let flops = flops_per_sequence(&lstm_adding(), 50.0, 50).unwrap();
        assert_eq!(flops, 2_464_000.0);
        assert_eq!(round_sig(flops, 3), 2.46e6);
    }

    #[test]
    fn dense_gru_mnist_cost() {
        let model = CostModel {
            cell: CellKind::Gru,
            input_size: 1,
            layer_sizes: vec![110],
            gate_width: None,
        };
        let flops = flops_per_sequence(&model, 784.0, 784).unwrap();
        assert_eq!(round_sig(flops, 3), 2.87e7);
    }

    #[test]
    fn skip_lstm_mnist_cost() {
        let model = CostModel {
            cell: CellKind::Lstm,
            input_size: 1,
            layer_sizes: vec![110],
            gate_width: Some(110),
        };
        let flops = flops_per_sequence(&model, 379.38, 784).unwrap();
        assert_eq!(round_sig(flops, 3), 1.86e7);
    }

    #[test]
    fn updates_beyond_length_rejected() {
        assert!(flops_per_sequence(&lstm_adding(), 51.0, 50).is_err());
    }

    #[test]
    fn flops_monotone_in_updates() {
        let m = lstm_adding();
        let mut last = -1.0;
        for u in 0..=50 {
            let f = flops_per_sequence(&m, u as f64, 50).unwrap();
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn aggregate_examples() {
        let single = aggregate(&[0.8]);
        assert_eq!(single.mean, 0.8);
        assert_eq!(single.std, 0.0);

        let same = aggregate(&[0.8, 0.8, 0.8, 0.8]);
        assert_eq!(same.mean, 0.8);
        assert_eq!(same.std, 0.0);

        // Population std of {0, 1} is 0.5.
        let two = aggregate(&[0.0, 1.0]);
        assert_eq!(two.mean, 0.5);
        assert_eq!(two.std, 0.5);
    }

    #[test]
    fn usage_records_roundtrip() {
        let masks = vec![vec![true, false]];
        let inputs = vec![vec![vec![0.1], vec![0.9]]];
        let recs = usage_records(&masks, &inputs).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].used);
        assert!(!recs[1].used);
        assert_eq!(recs[1].inputs, vec![0.9]);
    }

    #[test]
    fn usage_records_length_mismatch_rejected() {
        let masks = vec![vec![true, false]];
        let inputs = vec![vec![vec![0.1]]];
        assert!(usage_records(&masks, &inputs).is_err());
    }

    #[test]
    fn mnist_pixel_mapping() {
        assert_eq!(mnist_step_to_rowcol(29), (1, 1));
        assert_eq!(mnist_step_to_rowcol(0), (0, 0));
        assert_eq!(mnist_step_to_rowcol(783), (27, 27));
    }

    #[test]
    fn padding_row_skip_fraction() {
        let mut mask = vec![true; 784];
        // Skip everything in rows 0..3.
        for step in 0..84 {
            mask[step] = false;
        }
        let frac = skip_fraction_in_pixel_rows(&mask, &[0, 1, 2]);
        assert_eq!(frac, 1.0);
        let frac_tail = skip_fraction_in_pixel_rows(&mask, &[25, 26, 27]);
        assert_eq!(frac_tail, 0.0);
    }
}
