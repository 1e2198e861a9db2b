//! Tape-free forward passes.
//!
//! The skip paths here do no cell or gate work at all on skipped steps:
//! while the state is copied, the gate emission cannot change, so the next
//! update position is known ahead of time. [`fast_forward`] exploits the
//! closed form [`n_skip`] to jump straight to it.
//!
//! Arithmetic deliberately mirrors the tape ops kernel-for-kernel so that a
//! fast-forward rollout is bit-identical to the recorded recurrence.

use crate::cells::{Binarizer, CellKind, CellParams, LayerParams};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{self, round_half_up, sigmoid, Tensor};

/// Borrowed weight slices for allocation-free stepping.
pub struct CellWeights<'a> {
    pub kind: CellKind,
    pub input_size: usize,
    pub layer_sizes: Vec<usize>,
    layers: Vec<RawLayer<'a>>,
    gate: Option<(&'a [f64], f64)>,
}

enum RawLayer<'a> {
    Lstm {
        w_x: &'a [f64],
        w_h: &'a [f64],
        b: &'a [f64],
        h0: &'a [f64],
        c0: &'a [f64],
    },
    Gru {
        w_xzr: &'a [f64],
        w_hzr: &'a [f64],
        b_zr: &'a [f64],
        w_xg: &'a [f64],
        w_hg: &'a [f64],
        b_g: &'a [f64],
        h0: &'a [f64],
    },
}

impl<'a> CellWeights<'a> {
    pub fn new(params: &CellParams, store: &'a ParamStore) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|layer| match layer {
                LayerParams::Lstm { w_x, w_h, b, h0, c0 } => RawLayer::Lstm {
                    w_x: store.get(*w_x).data(),
                    w_h: store.get(*w_h).data(),
                    b: store.get(*b).data(),
                    h0: store.get(*h0).data(),
                    c0: store.get(*c0).data(),
                },
                LayerParams::Gru {
                    w_xzr,
                    w_hzr,
                    b_zr,
                    w_xg,
                    w_hg,
                    b_g,
                    h0,
                } => RawLayer::Gru {
                    w_xzr: store.get(*w_xzr).data(),
                    w_hzr: store.get(*w_hzr).data(),
                    b_zr: store.get(*b_zr).data(),
                    w_xg: store.get(*w_xg).data(),
                    w_hg: store.get(*w_hg).data(),
                    b_g: store.get(*b_g).data(),
                    h0: store.get(*h0).data(),
                },
            })
            .collect();
        let gate = params
            .gate
            .as_ref()
            .map(|g| (store.get(g.w).data(), store.get(g.b).item()));
        CellWeights {
            kind: params.spec.cell,
            input_size: params.spec.input_size,
            layer_sizes: params.spec.layer_sizes.clone(),
            layers,
            gate,
        }
    }

    pub fn has_gate(&self) -> bool {
        self.gate.is_some()
    }
}

/// Recurrent state buffers, `batch` rows per layer.
#[derive(Debug, Clone)]
pub struct RawState {
    pub batch: usize,
    pub layers: Vec<RawLayerState>,
}

#[derive(Debug, Clone)]
pub struct RawLayerState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl RawState {
    fn init(w: &CellWeights, batch: usize) -> Self {
        let layers = w
            .layers
            .iter()
            .map(|layer| match layer {
                RawLayer::Lstm { h0, c0, .. } => RawLayerState {
                    h: tile(h0, batch),
                    c: Some(tile(c0, batch)),
                },
                RawLayer::Gru { h0, .. } => RawLayerState {
                    h: tile(h0, batch),
                    c: None,
                },
            })
            .collect();
        RawState { batch, layers }
    }

    /// Final hidden state of the top layer.
    pub fn top_hidden(&self) -> &[f64] {
        &self.layers.last().unwrap().h
    }
}

fn tile(row: &[f64], batch: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(row.len() * batch);
    for _ in 0..batch {
        v.extend_from_slice(row);
    }
    v
}

/// Reusable per-step scratch space.
pub struct StepBuffers {
    pre: Vec<f64>,
    aux: Vec<f64>,
    tmp: Vec<f64>,
    next_h: Vec<f64>,
    next_c: Vec<f64>,
    chained: Vec<f64>,
}

impl StepBuffers {
    pub fn new() -> Self {
        StepBuffers {
            pre: Vec::new(),
            aux: Vec::new(),
            tmp: Vec::new(),
            next_h: Vec::new(),
            next_c: Vec::new(),
            chained: Vec::new(),
        }
    }
}

impl Default for StepBuffers {
    fn default() -> Self {
        Self::new()
    }
}

/// One full stacked transition, batched, in place.
pub fn cell_update(
    w: &CellWeights,
    state: &mut RawState,
    x: &[f64],
    buf: &mut StepBuffers,
) {
    let batch = state.batch;
    let n_layers = w.layers.len();
    // Chained input buffer is taken out of the scratch struct so its borrow
    // does not conflict with the other scratch buffers.
    let mut chained = std::mem::take(&mut buf.chained);
    for li in 0..n_layers {
        let (input, in_size): (&[f64], usize) = if li == 0 {
            (x, w.input_size)
        } else {
            (chained.as_slice(), w.layer_sizes[li - 1])
        };
        let h_size = w.layer_sizes[li];
        let layer = &w.layers[li];
        let st = &mut state.layers[li];
        match layer {
            RawLayer::Lstm { w_x, w_h, b, .. } => {
                buf.pre.resize(batch * 4 * h_size, 0.0);
                tensor::dual_affine_raw(
                    input, w_x, &st.h, w_h, b, &mut buf.pre, batch, in_size, h_size,
                    4 * h_size,
                );
                buf.next_h.resize(batch * h_size, 0.0);
                buf.next_c.resize(batch * h_size, 0.0);
                let c = st.c.as_ref().expect("lstm state carries cell memory");
                for r in 0..batch {
                    let pre = &buf.pre[r * 4 * h_size..(r + 1) * 4 * h_size];
                    for j in 0..h_size {
                        let i = sigmoid(pre[j]);
                        let f = sigmoid(pre[h_size + j]);
                        let g = pre[2 * h_size + j].tanh();
                        let o = sigmoid(pre[3 * h_size + j]);
                        let cv = f * c[r * h_size + j] + i * g;
                        buf.next_c[r * h_size + j] = cv;
                        buf.next_h[r * h_size + j] = o * cv.tanh();
                    }
                }
                st.h.copy_from_slice(&buf.next_h);
                st.c.as_mut().unwrap().copy_from_slice(&buf.next_c);
            }
            RawLayer::Gru {
                w_xzr,
                w_hzr,
                b_zr,
                w_xg,
                w_hg,
                b_g,
                ..
            } => {
                buf.pre.resize(batch * 2 * h_size, 0.0);
                tensor::dual_affine_raw(
                    input, w_xzr, &st.h, w_hzr, b_zr, &mut buf.pre, batch, in_size, h_size,
                    2 * h_size,
                );
                for v in buf.pre.iter_mut() {
                    *v = sigmoid(*v);
                }
                // r * h feeds the candidate's recurrent term.
                buf.tmp.resize(batch * h_size, 0.0);
                for r in 0..batch {
                    for j in 0..h_size {
                        buf.tmp[r * h_size + j] =
                            buf.pre[r * 2 * h_size + h_size + j] * st.h[r * h_size + j];
                    }
                }
                buf.aux.resize(batch * h_size, 0.0);
                tensor::dual_affine_raw(
                    input, w_xg, &buf.tmp, w_hg, b_g, &mut buf.aux, batch, in_size, h_size,
                    h_size,
                );
                buf.next_h.resize(batch * h_size, 0.0);
                for r in 0..batch {
                    for j in 0..h_size {
                        let z = buf.pre[r * 2 * h_size + j];
                        let cand = buf.aux[r * h_size + j].tanh();
                        buf.next_h[r * h_size + j] =
                            z * cand + (1.0 - z) * st.h[r * h_size + j];
                    }
                }
                st.h.copy_from_slice(&buf.next_h);
            }
        }
        if li + 1 < n_layers {
            chained.clear();
            chained.extend_from_slice(&state.layers[li].h);
        }
    }
    buf.chained = chained;
}

/// delta = sigmoid(W_p s + b_p), accumulated in the same order as the tape's
/// concat-then-affine.
pub fn gate_delta_raw(w: &CellWeights, state: &RawState, row: usize) -> Result<f64> {
    let (gw, gb) = w
        .gate
        .ok_or_else(|| Error::Config("gate weights required for skip inference".into()))?;
    let mut acc = 0.0;
    let mut offset = 0;
    for (st, &h_size) in state.layers.iter().zip(&w.layer_sizes) {
        let h = &st.h[row * h_size..(row + 1) * h_size];
        for (j, &hv) in h.iter().enumerate() {
            acc += hv * gw[offset + j];
        }
        offset += h_size;
    }
    Ok(sigmoid(acc + gb))
}

/// Closed-form count of skipped steps after an update whose gate emission is
/// `delta_u`: the smallest positive n with n * delta_u >= 0.5, minus one.
///
/// Saturates for vanishingly small emissions (callers clamp to the steps
/// remaining in the sequence anyway).
pub fn n_skip(delta_u: f64) -> Result<u64> {
    if !(delta_u > 0.0) || delta_u.is_nan() {
        return Err(Error::Numeric(format!(
            "n_skip requires delta_u > 0, got {delta_u} (gate emission corrupted upstream)"
        )));
    }
    const SATURATE: u64 = 1 << 60;
    if delta_u >= 0.5 {
        return Ok(0);
    }
    let ratio = 0.5 / delta_u;
    if ratio >= SATURATE as f64 {
        return Ok(SATURATE);
    }
    let mut n = ratio.ceil() as u64;
    while n > 1 && (n - 1) as f64 * delta_u >= 0.5 {
        n -= 1;
    }
    while (n as f64) * delta_u < 0.5 {
        n += 1;
    }
    Ok(n - 1)
}

/// Extract sequence `i`'s per-step input rows from a batch of step tensors.
pub fn seq_rows<'a>(step_inputs: &'a [Tensor], i: usize) -> Vec<&'a [f64]> {
    step_inputs.iter().map(|t| t.row_slice(i)).collect()
}

/// Plain rollout: every step updates. Batched.
pub fn dense_forward(w: &CellWeights, step_inputs: &[Tensor]) -> Result<RawState> {
    if step_inputs.is_empty() {
        return Err(Error::Config("forward over an empty sequence".into()));
    }
    let batch = step_inputs[0].rows();
    let mut state = RawState::init(w, batch);
    let mut buf = StepBuffers::new();
    for x_t in step_inputs {
        cell_update(w, &mut state, x_t.data(), &mut buf);
    }
    Ok(state)
}

/// Step-by-step skip rollout for one sequence. Skipped steps do no cell or
/// gate work: the gate emission is carried over from the last update.
pub fn skip_forward_naive(
    w: &CellWeights,
    steps: &[&[f64]],
    binarizer: Binarizer,
    mut rng: Option<&mut Rng>,
) -> Result<(RawState, Vec<bool>)> {
    if matches!(binarizer, Binarizer::Identity) {
        return Err(Error::Config(
            "identity binarizer has no inference semantics".into(),
        ));
    }
    let mut state = RawState::init(w, 1);
    let mut buf = StepBuffers::new();
    let mut mask = vec![false; steps.len()];
    let mut u_tilde = 1.0f64;
    let mut delta = f64::NAN; // initialized at the forced first update
    for (t, x_t) in steps.iter().enumerate() {
        let update = match binarizer {
            Binarizer::Deterministic => round_half_up(u_tilde) == 1.0,
            Binarizer::Bernoulli => rng
                .as_deref_mut()
                .ok_or_else(|| {
                    Error::Config("bernoulli inference needs a generator".into())
                })?
                .bernoulli(u_tilde),
            Binarizer::Identity => unreachable!(),
        };
        if update {
            cell_update(w, &mut state, x_t, &mut buf);
            delta = gate_delta_raw(w, &state, 0)?;
            u_tilde = delta;
            mask[t] = true;
        } else {
            // Same arithmetic as the recorded accumulator update.
            let headroom = 1.0 - u_tilde;
            let inc = if delta <= headroom { delta } else { headroom };
            u_tilde += inc;
        }
    }
    Ok((state, mask))
}

/// Jump-ahead skip rollout for one sequence (deterministic binarizer): after
/// each executed update the next update position comes from [`n_skip`], so
/// skipped steps are never visited at all.
pub fn fast_forward(w: &CellWeights, steps: &[&[f64]]) -> Result<(RawState, Vec<bool>)> {
    let mut state = RawState::init(w, 1);
    let mut buf = StepBuffers::new();
    let t_len = steps.len();
    let mut mask = vec![false; t_len];
    let mut t = 0usize;
    // u_tilde starts at 1, so position 0 always updates.
    while t < t_len {
        mask[t] = true;
        cell_update(w, &mut state, steps[t], &mut buf);
        let delta = gate_delta_raw(w, &state, 0)?;
        let skips = n_skip(delta)?;
        t = t
            .saturating_add(1)
            .saturating_add(usize::try_from(skips).unwrap_or(usize::MAX));
    }
    Ok((state, mask))
}

/// Random-skip rollout for one sequence: each step is skipped independently
/// with probability `p_skip`; skipped steps do no work.
pub fn random_forward(
    w: &CellWeights,
    steps: &[&[f64]],
    p_skip: f64,
    rng: &mut Rng,
) -> Result<(RawState, Vec<bool>)> {
    let mut state = RawState::init(w, 1);
    let mut buf = StepBuffers::new();
    let mut mask = vec![false; steps.len()];
    for (t, x_t) in steps.iter().enumerate() {
        if !rng.bernoulli(p_skip) {
            cell_update(w, &mut state, x_t, &mut buf);
            mask[t] = true;
        }
    }
    Ok((state, mask))
}

/// Affine readout y = h . w + b.
pub fn head_forward_raw(
    h: &[f64],
    w: &Tensor,
    b: &Tensor,
    batch: usize,
) -> Vec<f64> {
    let (in_size, out_size) = w.shape();
    let mut out = vec![0.0; batch * out_size];
    tensor::affine_raw(h, w.data(), b.data(), &mut out, batch, in_size, out_size);
    out
}
