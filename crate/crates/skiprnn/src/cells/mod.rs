//! LSTM/GRU stacks with an optional binary state-update gate.
//!
//! The gate emits, at every step, the probability of updating at the next
//! step. Its pre-activation accumulates while steps are skipped and flushes
//! after each update, so the likelihood of taking a new input grows with the
//! number of consecutively skipped samples. Training runs the whole
//! recurrence on the tape (skipped steps appear as mixture nodes so
//! gradients reach both branches); inference uses [`inference::fast_forward`]
//! which performs no cell or gate work at all on skipped steps.

mod step;

pub mod inference;

pub use step::{
    cell_step, initial_state, random_skip_step, rollout, skip_step, BoundCell, Rollout,
    SkipStateNodes, StateNodes,
};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    /// Affine gate groups per update: 4 for LSTM (i, f, g, o), 3 for GRU
    /// (z, r, candidate).
    pub fn gate_groups(&self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// How the binary update decision is produced from the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarizer {
    /// round(u_tilde), half rounds up. The default.
    Deterministic,
    /// u ~ Bernoulli(u_tilde).
    Bernoulli,
    /// Pass u_tilde through unbinarized. Makes the whole graph smooth;
    /// used for gradient diagnostics, not for benchmark runs.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Gate decisions come from the learned accumulator.
    Learned,
    /// Skip each step independently with fixed probability.
    Random { p_skip: f64 },
    /// Plain recurrence; every step updates.
    AlwaysUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipPolicy {
    pub kind: PolicyKind,
    pub binarizer: Binarizer,
}

impl SkipPolicy {
    pub fn learned() -> Self {
        SkipPolicy {
            kind: PolicyKind::Learned,
            binarizer: Binarizer::Deterministic,
        }
    }

    pub fn random(p_skip: f64) -> Self {
        SkipPolicy {
            kind: PolicyKind::Random { p_skip },
            binarizer: Binarizer::Deterministic,
        }
    }

    pub fn always_update() -> Self {
        SkipPolicy {
            kind: PolicyKind::AlwaysUpdate,
            binarizer: Binarizer::Deterministic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PolicyKind::Random { p_skip } = self.kind {
            if !(0.0..1.0).contains(&p_skip) {
                return Err(Error::Config(format!(
                    "p_skip must lie in [0, 1), got {p_skip}"
                )));
            }
        }
        Ok(())
    }
}

/// Architecture of one recurrent stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub cell: CellKind,
    pub input_size: usize,
    pub layer_sizes: Vec<usize>,
    /// Layers whose hidden state feeds the update gate.
    pub gate_layers: Vec<usize>,
}

impl StackSpec {
    pub fn new(cell: CellKind, input_size: usize, layer_sizes: Vec<usize>) -> Self {
        let gate_layers = (0..layer_sizes.len()).collect();
        StackSpec {
            cell,
            input_size,
            layer_sizes,
            gate_layers,
        }
    }

    /// Restrict the gate input to the last layer's hidden state.
    pub fn with_gate_on_last(mut self) -> Self {
        self.gate_layers = vec![self.layer_sizes.len() - 1];
        self
    }

    pub fn total_hidden(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Config(
                "layer sizes must be non-empty and positive".into(),
            ));
        }
        stack_gate_mask(&self.layer_sizes, &self.gate_layers)?;
        Ok(())
    }
}

/// Boolean mask over the concatenated hidden width: true columns feed the
/// gate, false columns are pinned to zero and never receive gradient.
pub fn stack_gate_mask(layer_sizes: &[usize], gate_layers: &[usize]) -> Result<Vec<bool>> {
    if gate_layers.is_empty() {
        return Err(Error::Config(
            "gate must read at least one layer's state".into(),
        ));
    }
    for &l in gate_layers {
        if l >= layer_sizes.len() {
            return Err(Error::Config(format!(
                "gate layer index {l} out of range for {} layers",
                layer_sizes.len()
            )));
        }
    }
    let mut mask = Vec::with_capacity(layer_sizes.iter().sum());
    for (l, &h) in layer_sizes.iter().enumerate() {
        let active = gate_layers.contains(&l);
        mask.extend(std::iter::repeat(active).take(h));
    }
    Ok(mask)
}

/// One layer's trainable tensors (handles into a [`ParamStore`]).
#[derive(Debug, Clone)]
pub enum LayerParams {
    Lstm {
        /// [in x 4H], gate column order i, f, g, o.
        w_x: ParamId,
        /// [H x 4H].
        w_h: ParamId,
        /// [1 x 4H]; forget-gate block initialized to 1.
        b: ParamId,
        /// Learned initial hidden state, [1 x H].
        h0: ParamId,
        /// Learned initial cell memory, [1 x H].
        c0: ParamId,
    },
    Gru {
        /// [in x 2H], column order z, r.
        w_xzr: ParamId,
        /// [H x 2H].
        w_hzr: ParamId,
        /// [1 x 2H].
        b_zr: ParamId,
        /// [in x H] candidate input weights.
        w_xg: ParamId,
        /// [H x H] candidate recurrent weights (applied to r * h).
        w_hg: ParamId,
        /// [1 x H].
        b_g: ParamId,
        h0: ParamId,
    },
}

/// Update-gate projection: delta = sigmoid(s . w + b).
#[derive(Debug, Clone)]
pub struct GateParams {
    /// [H_total x 1]; masked rows are zero and stay zero.
    pub w: ParamId,
    /// Scalar bias, initialized to 1 so every sample is used early in
    /// training.
    pub b: ParamId,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct CellParams {
    pub spec: StackSpec,
    pub layers: Vec<LayerParams>,
    /// Present only for the learned policy.
    pub gate: Option<GateParams>,
}

impl CellParams {
    /// Initialize a stack: orthogonal recurrent blocks, uniform fan-in
    /// scaled input weights, zero biases except the LSTM forget gate (+1)
    /// and the gate bias (1). Initial states start at zero and are trained.
    pub fn init(
        spec: StackSpec,
        with_gate: bool,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layer_sizes.len());
        let mut in_size = spec.input_size;
        for (l, &h) in spec.layer_sizes.iter().enumerate() {
            let layer = match spec.cell {
                CellKind::Lstm => {
                    let w_x = store.add(format!("layer{l}.w_x"), uniform_fanin(rng, in_size, 4 * h));
                    let w_h = store.add(format!("layer{l}.w_h"), orthogonal_blocks(rng, h, 4));
                    let mut bias = Tensor::zeros(1, 4 * h);
                    // Forget-gate bias starts at 1 (columns [H, 2H)).
                    for j in h..2 * h {
                        bias.set(0, j, 1.0);
                    }
                    let b = store.add(format!("layer{l}.b"), bias);
                    let h0 = store.add(format!("layer{l}.h0"), Tensor::zeros(1, h));
                    let c0 = store.add(format!("layer{l}.c0"), Tensor::zeros(1, h));
                    LayerParams::Lstm { w_x, w_h, b, h0, c0 }
                }
                CellKind::Gru => {
                    let w_xzr =
                        store.add(format!("layer{l}.w_xzr"), uniform_fanin(rng, in_size, 2 * h));
                    let w_hzr = store.add(format!("layer{l}.w_hzr"), orthogonal_blocks(rng, h, 2));
                    let b_zr = store.add(format!("layer{l}.b_zr"), Tensor::zeros(1, 2 * h));
                    let w_xg = store.add(format!("layer{l}.w_xg"), uniform_fanin(rng, in_size, h));
                    let w_hg = store.add(format!("layer{l}.w_hg"), orthogonal_blocks(rng, h, 1));
                    let b_g = store.add(format!("layer{l}.b_g"), Tensor::zeros(1, h));
                    let h0 = store.add(format!("layer{l}.h0"), Tensor::zeros(1, h));
                    LayerParams::Gru {
                        w_xzr,
                        w_hzr,
                        b_zr,
                        w_xg,
                        w_hg,
                        b_g,
                        h0,
                    }
                }
            };
            layers.push(layer);
            in_size = h;
        }

        let gate = if with_gate {
            let mask = stack_gate_mask(&spec.layer_sizes, &spec.gate_layers)?;
            let active = mask.iter().filter(|&&m| m).count();
            let mut w = uniform_fanin(rng, active, 1);
            // Reshape the active weights onto the full masked width.
            let mut data = vec![0.0; mask.len()];
            let mut src = 0;
            for (d, &m) in data.iter_mut().zip(&mask) {
                if m {
                    *d = w.data()[src];
                    src += 1;
                }
            }
            w = Tensor::from_vec(mask.len(), 1, data);
            let w = store.add("gate.w", w);
            let b = store.add("gate.b", Tensor::scalar(1.0));
            Some(GateParams { w, b, mask })
        } else {
            None
        };

        Ok(CellParams { spec, layers, gate })
    }

    /// Zero out gradient entries for masked gate columns so they are never
    /// updated.
    pub fn freeze_masked_gate_grads(&self, grads: &mut Gradients) {
        if let Some(gate) = &self.gate {
            if let Some(g) = grads.get_mut(gate.w) {
                for (v, &m) in g.data_mut().iter_mut().zip(&gate.mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Lstm { w_x, w_h, b, h0, c0 } => {
                    ids.extend([*w_x, *w_h, *b, *h0, *c0]);
                }
                LayerParams::Gru {
                    w_xzr,
                    w_hzr,
                    b_zr,
                    w_xg,
                    w_hg,
                    b_g,
                    h0,
                } => {
                    ids.extend([*w_xzr, *w_hzr, *b_zr, *w_xg, *w_hg, *b_g, *h0]);
                }
            }
        }
        if let Some(gate) = &self.gate {
            ids.extend([gate.w, gate.b]);
        }
        ids
    }
}

/// Linear readout head applied to the final hidden state.
#[derive(Debug, Clone)]
pub struct Head {
    pub w: ParamId,
    pub b: ParamId,
}

impl Head {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, in_size: usize, out_size: usize) -> Self {
        Head {
            w: store.add("head.w", uniform_fanin(rng, in_size, out_size)),
            b: store.add("head.b", Tensor::zeros(1, out_size)),
        }
    }
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn uniform_fanin(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let a = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-a, a)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// `blocks` independent H x H orthogonal matrices laid side by side into
/// [H x blocks*H], via modified Gram-Schmidt on Gaussian draws.
fn orthogonal_blocks(rng: &mut Rng, h: usize, blocks: usize) -> Tensor {
    let mut out = Tensor::zeros(h, blocks * h);
    for blk in 0..blocks {
        let q = orthogonal(rng, h);
        for r in 0..h {
            for c in 0..h {
                out.set(r, blk * h + c, q.get(r, c));
            }
        }
    }
    out
}

fn orthogonal(rng: &mut Rng, n: usize) -> Tensor {
    // Columns of a Gaussian matrix, orthonormalized in order.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    for j in 0..n {
        for i in 0..j {
            let proj: f64 = (0..n).map(|r| cols[i][r] * cols[j][r]).sum();
            for r in 0..n {
                cols[j][r] -= proj * cols[i][r];
            }
        }
        let norm: f64 = (0..n).map(|r| cols[j][r] * cols[j][r]).sum::<f64>().sqrt();
        for r in 0..n {
            cols[j][r] /= norm;
        }
    }
    let mut t = Tensor::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            t.set(r, c, cols[c][r]);
        }
    }
    t
}
