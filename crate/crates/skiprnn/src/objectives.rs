//! Task losses, the update-budget penalty and the optimizer.
//!
//! The budget term prices each executed state update: cost-per-sample adds
//! lambda per update, the target variants penalize the distance between the
//! per-sequence update count and a target. All variants are added per
//! sequence and averaged over the batch, and reach the gate parameters
//! through the straight-through binarization.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    None,
    /// L_budget = lambda * sum_t u_t.
    CostPerSample { lambda: f64 },
    /// weight * |sum_t u_t - target|.
    L1Target { target: f64, weight: f64 },
    /// weight * (sum_t u_t - target)^2.
    L2Target { target: f64, weight: f64 },
}

impl BudgetSpec {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        match *self {
            BudgetSpec::None => Ok(()),
            BudgetSpec::CostPerSample { lambda } => {
                if lambda < 0.0 {
                    Err(Error::Config(format!("lambda must be >= 0, got {lambda}")))
                } else {
                    Ok(())
                }
            }
            BudgetSpec::L1Target { target, weight } | BudgetSpec::L2Target { target, weight } => {
                if !(0.0..=seq_len as f64).contains(&target) {
                    Err(Error::Config(format!(
                        "target {target} outside [0, {seq_len}]"
                    )))
                } else if weight < 0.0 {
                    Err(Error::Config(format!("weight must be >= 0, got {weight}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// True when the term can contribute a nonzero penalty.
    pub fn is_active(&self) -> bool {
        !matches!(
            *self,
            BudgetSpec::None | BudgetSpec::CostPerSample { lambda: 0.0 }
        )
    }
}

/// Batch-mean budget penalty over the recorded gate decisions, as a scalar
/// node. `gates` holds one [B x 1] node per step.
pub fn budget_loss(tape: &mut Tape, gates: &[NodeId], spec: BudgetSpec) -> Result<NodeId> {
    if gates.is_empty() {
        return Err(Error::Config("budget loss over zero gate nodes".into()));
    }
    let batch = tape.value(gates[0]).rows() as f64;
    // Per-sequence update counts: sum_t u_t, still [B x 1].
    let mut total = gates[0];
    for &u in &gates[1..] {
        total = tape.add(total, u)?;
    }
    match spec {
        BudgetSpec::None => {
            let s = tape.sum_all(total)?;
            tape.scale_shift(s, 0.0, 0.0)
        }
        BudgetSpec::CostPerSample { lambda } => {
            let s = tape.sum_all(total)?;
            tape.scale_shift(s, lambda / batch, 0.0)
        }
        BudgetSpec::L1Target { target, weight } => {
            let centered = tape.scale_shift(total, 1.0, -target)?;
            let dist = tape.abs(centered)?;
            let s = tape.sum_all(dist)?;
            tape.scale_shift(s, weight / batch, 0.0)
        }
        BudgetSpec::L2Target { target, weight } => {
            let centered = tape.scale_shift(total, 1.0, -target)?;
            let sq = tape.mul(centered, centered)?;
            let s = tape.sum_all(sq)?;
            tape.scale_shift(s, weight / batch, 0.0)
        }
    }
}

/// Batch-mean squared error.
pub fn mse_loss(tape: &mut Tape, prediction: NodeId, target: NodeId) -> Result<NodeId> {
    let (pr, pc) = tape.value(prediction).shape();
    let (tr, tc) = tape.value(target).shape();
    if (pr, pc) != (tr, tc) {
        return Err(Error::Config(format!(
            "mse shapes disagree: prediction {pr}x{pc} vs target {tr}x{tc}"
        )));
    }
    let diff = tape.sub(prediction, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_all(sq)
}

/// Batch-mean cross-entropy against class indices (stabilized log-softmax).
pub fn cross_entropy_loss(tape: &mut Tape, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
    tape.cross_entropy(logits, targets)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold applied jointly across all gradients
    /// before the moment updates.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Clip-then-update. A NaN or Inf gradient aborts with a diagnostic
    /// rather than poisoning the moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        grads
            .check_finite()
            .map_err(|e| Error::Numeric(format!("aborting optimizer step: {e}")))?;

        let mut grads = grads.clone();
        if let Some(threshold) = self.cfg.clip {
            let norm = grads.global_norm();
            if norm > threshold {
                grads.scale_all(threshold / norm);
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }

        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| {
                Tensor::zeros(param.rows(), param.cols())
            });
            let v = self.v[id.0].get_or_insert_with(|| {
                Tensor::zeros(param.rows(), param.cols())
            });
            let (b1, b2, lr, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.lr, self.cfg.eps);
            for ((p, mv), (vv, &gv)) in param
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut().iter_mut().zip(g.data()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Returns the parameter ids a tape training step must register so frozen
/// entries still receive (zero) moments.
pub fn all_param_ids(store: &ParamStore) -> Vec<ParamId> {
    (0..store.len()).map(ParamId).collect()
}
