//! Seeded, deterministic benchmark data: generators for the adding and
//! frequency discrimination tasks and an IDX-format MNIST loader, plus each
//! task's solved criterion.

pub mod adding;
pub mod freqdisc;
pub mod mnist;

use crate::tensor::Tensor;

/// One batch of sequences, laid out one [B x in] tensor per step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub step_inputs: Vec<Tensor>,
    pub targets: Targets,
}

#[derive(Debug, Clone)]
pub enum Targets {
    /// Regression targets, [B x 1].
    Scalar(Tensor),
    /// Class indices.
    Class(Vec<usize>),
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.step_inputs[0].rows()
    }

    pub fn seq_len(&self) -> usize {
        self.step_inputs.len()
    }

    /// Per-step input values of sequence `i` (for usage-mask export).
    pub fn seq_values(&self, i: usize) -> Vec<Vec<f64>> {
        self.step_inputs
            .iter()
            .map(|t| t.row_slice(i).to_vec())
            .collect()
    }
}
