//! Frequency discrimination: classify 100 ms sine waves whose period is
//! inside (5, 6) ms against those drawn from (1, 5) or (6, 100) ms.
//!
//! Negative periods are sampled uniformly over the union, weighted by
//! interval length (4 vs 94). The phase shift is uniform in [0, T), and
//! batches are stratified half and half.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::{Batch, Targets};
use crate::tensor::Tensor;

pub const DURATION_MS: f64 = 100.0;

/// Sampling periods the published results use. Other positive values work
/// but are flagged by the config layer.
pub const PAPER_SAMPLE_PERIODS: [f64; 2] = [0.5, 1.0];

pub fn seq_len(t_s: f64) -> usize {
    (DURATION_MS / t_s).round() as usize
}

/// Solved strictly above 99% held-out accuracy.
pub fn solved(accuracy: f64) -> bool {
    accuracy > 0.99
}

fn sample_positive_period(rng: &mut Rng) -> f64 {
    rng.uniform(5.0, 6.0)
}

fn sample_negative_period(rng: &mut Rng) -> f64 {
    // Length-weighted uniform over (1, 5) u (6, 100).
    let span_low = 4.0;
    let span_high = 94.0;
    let x = rng.uniform(0.0, span_low + span_high);
    if x < span_low {
        1.0 + x
    } else {
        6.0 + (x - span_low)
    }
}

pub fn generate(rng: &mut Rng, batch_size: usize, t_s: f64) -> Result<Batch> {
    if !(t_s > 0.0) {
        return Err(Error::Config(format!(
            "sampling period must be positive, got {t_s}"
        )));
    }
    if batch_size % 2 != 0 {
        return Err(Error::Config(format!(
            "stratified batches need an even size, got {batch_size}"
        )));
    }
    let len = seq_len(t_s);
    // Stratified labels, deterministically shuffled.
    let mut labels: Vec<usize> = (0..batch_size).map(|i| usize::from(i % 2 == 0)).collect();
    rng.shuffle(&mut labels);

    let mut waves = vec![0.0f64; batch_size * len];
    for (b, &label) in labels.iter().enumerate() {
        let period = if label == 1 {
            sample_positive_period(rng)
        } else {
            sample_negative_period(rng)
        };
        let phase = rng.uniform(0.0, period);
        for k in 0..len {
            let t_ms = k as f64 * t_s + phase;
            waves[b * len + k] = (2.0 * std::f64::consts::PI * t_ms / period).sin();
        }
    }
    let step_inputs = (0..len)
        .map(|k| {
            let data: Vec<f64> = (0..batch_size).map(|b| waves[b * len + k]).collect();
            Tensor::col(data)
        })
        .collect();
    Ok(Batch {
        step_inputs,
        targets: Targets::Class(labels),
    })
}
