//! The adding task: sequences of (value, marker) tuples where exactly two
//! steps are marked and the target is the sum of the two marked values.
//!
//! The first marker lands uniformly in the first 10% of the sequence, the
//! second uniformly in the last half, so at least 40% of every sequence is
//! guaranteed distractors.

use crate::rng::Rng;
use crate::tasks::{Batch, Targets};
use crate::tensor::Tensor;

pub const SEQ_LEN: usize = 50;

/// Analytic variance of the target: the sum of two independent
/// U(-0.5, 0.5) draws has variance 2/12.
pub const OUTPUT_VARIANCE: f64 = 1.0 / 6.0;

/// Solved when the held-out MSE is at least two orders of magnitude below
/// the output variance. The boundary itself counts as solved.
pub fn solved(mse_heldout: f64) -> bool {
    mse_heldout <= OUTPUT_VARIANCE / 100.0
}

pub fn solved_threshold() -> f64 {
    OUTPUT_VARIANCE / 100.0
}

/// First-marker window: indices [0, len/10).
pub fn first_marker_window(seq_len: usize) -> std::ops::Range<usize> {
    0..(seq_len / 10).max(1)
}

/// Second-marker window: the last half, [len/2, len).
pub fn second_marker_window(seq_len: usize) -> std::ops::Range<usize> {
    seq_len / 2..seq_len
}

pub fn generate(rng: &mut Rng, batch_size: usize) -> Batch {
    generate_with_len(rng, batch_size, SEQ_LEN)
}

pub fn generate_with_len(rng: &mut Rng, batch_size: usize, seq_len: usize) -> Batch {
    let w1 = first_marker_window(seq_len);
    let w2 = second_marker_window(seq_len);
    let mut values = vec![0.0f64; batch_size * seq_len];
    let mut markers = vec![0.0f64; batch_size * seq_len];
    let mut targets = Vec::with_capacity(batch_size);
    for b in 0..batch_size {
        for t in 0..seq_len {
            values[b * seq_len + t] = rng.uniform(-0.5, 0.5);
        }
        let m1 = w1.start + rng.below(w1.len());
        let m2 = w2.start + rng.below(w2.len());
        markers[b * seq_len + m1] = 1.0;
        markers[b * seq_len + m2] = 1.0;
        targets.push(values[b * seq_len + m1] + values[b * seq_len + m2]);
    }
    let step_inputs = (0..seq_len)
        .map(|t| {
            let mut data = Vec::with_capacity(batch_size * 2);
            for b in 0..batch_size {
                data.push(values[b * seq_len + t]);
                data.push(markers[b * seq_len + t]);
            }
            Tensor::from_vec(batch_size, 2, data)
        })
        .collect();
    Batch {
        step_inputs,
        targets: Targets::Scalar(Tensor::col(targets)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_and_target_invariants() {
        let mut rng = Rng::from_seed(1);
        let batch = generate(&mut rng, 64);
        assert_eq!(batch.seq_len(), 50);
        let Targets::Scalar(targets) = &batch.targets else {
            panic!("adding targets are scalar")
        };
        for b in 0..64 {
            let mut marked = Vec::new();
            let mut sum = 0.0;
            for (t, step) in batch.step_inputs.iter().enumerate() {
                let row = step.row_slice(b);
                let (value, marker) = (row[0], row[1]);
                assert!((-0.5..0.5).contains(&value));
                assert!(marker == 0.0 || marker == 1.0);
                if marker == 1.0 {
                    marked.push(t);
                    sum += value;
                }
            }
            assert_eq!(marked.len(), 2, "exactly two markers");
            assert!(marked[0] < 5, "first marker in the first 10%");
            assert!((25..50).contains(&marked[1]), "second marker in last half");
            assert_eq!(sum, targets.get(b, 0), "target is the exact marked sum");
        }
    }

    #[test]
    fn windows_never_overlap() {
        let w1 = first_marker_window(50);
        let w2 = second_marker_window(50);
        assert!(w1.end <= w2.start);
        assert_eq!(w1, 0..5);
        assert_eq!(w2, 25..50);
    }

    #[test]
    fn generation_is_reproducible() {
        let mut a = Rng::from_seed(7);
        let mut b = Rng::from_seed(7);
        let batch_a = generate(&mut a, 8);
        let batch_b = generate(&mut b, 8);
        for (x, y) in batch_a.step_inputs.iter().zip(&batch_b.step_inputs) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn solved_criterion_boundary() {
        assert!(solved(1.0e-3));
        assert!(!solved(1.7e-3));
        assert!(solved(solved_threshold()));
        assert!((solved_threshold() - 1.0 / 600.0).abs() < 1e-15);
    }
}
