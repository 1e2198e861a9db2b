//! Tape-recorded forward steps: plain cells, the skip recurrence and the
//! random-skip baseline.
//!
//! Training always records every step. Skipped steps stay on the tape as
//! gate mixtures so gradients flow through both the updated and the copied
//! branch; the zero-work shortcut exists only in the inference path.

use crate::cells::{Binarizer, CellKind, CellParams, LayerParams, PolicyKind, SkipPolicy};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Parameter leaves registered on one tape.
#[derive(Debug, Clone)]
pub struct BoundCell {
    pub kind: CellKind,
    pub layer_sizes: Vec<usize>,
    layers: Vec<BoundLayer>,
    gate: Option<(NodeId, NodeId)>,
}

#[derive(Debug, Clone)]
enum BoundLayer {
    Lstm {
        w_x: NodeId,
        w_h: NodeId,
        b: NodeId,
        h0: NodeId,
        c0: NodeId,
    },
    Gru {
        w_xzr: NodeId,
        w_hzr: NodeId,
        b_zr: NodeId,
        w_xg: NodeId,
        w_hg: NodeId,
        b_g: NodeId,
        h0: NodeId,
    },
}

impl BoundCell {
    pub fn bind(tape: &mut Tape, params: &CellParams, store: &ParamStore) -> Result<Self> {
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            layers.push(match layer {
                LayerParams::Lstm { w_x, w_h, b, h0, c0 } => BoundLayer::Lstm {
                    w_x: tape.param(*w_x, store)?,
                    w_h: tape.param(*w_h, store)?,
                    b: tape.param(*b, store)?,
                    h0: tape.param(*h0, store)?,
                    c0: tape.param(*c0, store)?,
                },
                LayerParams::Gru {
                    w_xzr,
                    w_hzr,
                    b_zr,
                    w_xg,
                    w_hg,
                    b_g,
                    h0,
                } => BoundLayer::Gru {
                    w_xzr: tape.param(*w_xzr, store)?,
                    w_hzr: tape.param(*w_hzr, store)?,
                    b_zr: tape.param(*b_zr, store)?,
                    w_xg: tape.param(*w_xg, store)?,
                    w_hg: tape.param(*w_hg, store)?,
                    b_g: tape.param(*b_g, store)?,
                    h0: tape.param(*h0, store)?,
                },
            });
        }
        let gate = match &params.gate {
            Some(g) => Some((tape.param(g.w, store)?, tape.param(g.b, store)?)),
            None => None,
        };
        Ok(BoundCell {
            kind: params.spec.cell,
            layer_sizes: params.spec.layer_sizes.clone(),
            layers,
            gate,
        })
    }
}

/// Per-layer recurrent state on the tape.
#[derive(Debug, Clone)]
pub struct StateNodes {
    pub layers: Vec<LayerState>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

/// Skip-cell state: recurrent state plus the update-gate accumulator.
#[derive(Debug, Clone)]
pub struct SkipStateNodes {
    pub cell: StateNodes,
    /// [B x 1], in [0, 1]; equals 1 at t = 0 so the first step updates.
    pub u_tilde: NodeId,
}

/// Broadcast the learned initial state over the batch.
pub fn initial_state(tape: &mut Tape, bound: &BoundCell, batch: usize) -> Result<StateNodes> {
    let mut layers = Vec::with_capacity(bound.layers.len());
    for layer in &bound.layers {
        let state = match layer {
            BoundLayer::Lstm { h0, c0, .. } => LayerState {
                h: tape.broadcast_rows(*h0, batch)?,
                c: Some(tape.broadcast_rows(*c0, batch)?),
            },
            BoundLayer::Gru { h0, .. } => LayerState {
                h: tape.broadcast_rows(*h0, batch)?,
                c: None,
            },
        };
        layers.push(state);
    }
    Ok(StateNodes { layers })
}

/// One full stacked transition S(s, x).
pub fn cell_step(
    tape: &mut Tape,
    bound: &BoundCell,
    state: &StateNodes,
    x: NodeId,
) -> Result<StateNodes> {
    let mut layers = Vec::with_capacity(bound.layers.len());
    let mut input = x;
    for (layer, (prev, &h_size)) in bound
        .layers
        .iter()
        .zip(state.layers.iter().zip(&bound.layer_sizes))
    {
        let next = match layer {
            BoundLayer::Lstm { w_x, w_h, b, .. } => {
                let pre = tape.dual_affine(input, *w_x, prev.h, *w_h, *b)?;
                let i_pre = tape.slice_cols(pre, 0, h_size)?;
                let f_pre = tape.slice_cols(pre, h_size, h_size)?;
                let g_pre = tape.slice_cols(pre, 2 * h_size, h_size)?;
                let o_pre = tape.slice_cols(pre, 3 * h_size, h_size)?;
                let i = tape.sigmoid(i_pre)?;
                let f = tape.sigmoid(f_pre)?;
                let g = tape.tanh(g_pre)?;
                let o = tape.sigmoid(o_pre)?;
                let c_prev = prev.c.expect("lstm state carries cell memory");
                let fc = tape.mul(f, c_prev)?;
                let ig = tape.mul(i, g)?;
                let c = tape.add(fc, ig)?;
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                LayerState { h, c: Some(c) }
            }
            BoundLayer::Gru {
                w_xzr,
                w_hzr,
                b_zr,
                w_xg,
                w_hg,
                b_g,
                ..
            } => {
                let zr_pre = tape.dual_affine(input, *w_xzr, prev.h, *w_hzr, *b_zr)?;
                let zr = tape.sigmoid(zr_pre)?;
                let z = tape.slice_cols(zr, 0, h_size)?;
                let r = tape.slice_cols(zr, h_size, h_size)?;
                let rh = tape.mul(r, prev.h)?;
                let cand_pre = tape.dual_affine(input, *w_xg, rh, *w_hg, *b_g)?;
                let cand = tape.tanh(cand_pre)?;
                // h' = z * cand + (1 - z) * h
                let h = tape.gate_mix(z, cand, prev.h)?;
                LayerState { h, c: None }
            }
        };
        input = next.h;
        layers.push(next);
    }
    Ok(StateNodes { layers })
}

/// The skip transition: binarize, mix states, re-emit the gate, accumulate.
///
/// Returns the new state and the binary decision node u_t.
pub fn skip_step(
    tape: &mut Tape,
    bound: &BoundCell,
    st: &SkipStateNodes,
    x: NodeId,
    binarizer: Binarizer,
    rng: &mut Rng,
) -> Result<(SkipStateNodes, NodeId)> {
    let u = match binarizer {
        Binarizer::Deterministic => tape.round_st(st.u_tilde)?,
        Binarizer::Bernoulli => tape.bernoulli_st(st.u_tilde, rng)?,
        Binarizer::Identity => st.u_tilde,
    };
    let cand = cell_step(tape, bound, &st.cell, x)?;
    let mixed = mix_states(tape, u, &cand, &st.cell)?;
    let delta = gate_delta(tape, bound, &mixed)?;
    let u_tilde = accumulator_update(tape, u, st.u_tilde, delta)?;
    Ok((
        SkipStateNodes {
            cell: mixed,
            u_tilde,
        },
        u,
    ))
}

/// s_t = u * S(s, x) + (1 - u) * s, per layer (and per LSTM memory).
pub fn mix_states(
    tape: &mut Tape,
    u: NodeId,
    new: &StateNodes,
    old: &StateNodes,
) -> Result<StateNodes> {
    let mut layers = Vec::with_capacity(new.layers.len());
    for (n, o) in new.layers.iter().zip(&old.layers) {
        let h = tape.gate_mix(u, n.h, o.h)?;
        let c = match (n.c, o.c) {
            (Some(nc), Some(oc)) => Some(tape.gate_mix(u, nc, oc)?),
            _ => None,
        };
        layers.push(LayerState { h, c });
    }
    Ok(StateNodes { layers })
}

/// delta = sigmoid(W_p s + b_p) over the concatenated hidden states.
pub fn gate_delta(tape: &mut Tape, bound: &BoundCell, state: &StateNodes) -> Result<NodeId> {
    let (w, b) = bound
        .gate
        .ok_or_else(|| Error::Config("skip step requires gate parameters".into()))?;
    let hs: Vec<NodeId> = state.layers.iter().map(|l| l.h).collect();
    let s = if hs.len() == 1 {
        hs[0]
    } else {
        tape.concat_cols(&hs)?
    };
    let pre = tape.affine(s, w, b)?;
    tape.sigmoid(pre)
}

/// u_tilde' = u * delta + (1 - u) * (u_tilde + min(delta, 1 - u_tilde)).
///
/// After an update the accumulator flushes to delta; while skipping it grows
/// by delta, clamped so it never exceeds 1.
pub fn accumulator_update(
    tape: &mut Tape,
    u: NodeId,
    u_tilde: NodeId,
    delta: NodeId,
) -> Result<NodeId> {
    let headroom = tape.one_minus(u_tilde)?;
    let inc = tape.min_elem(delta, headroom)?;
    let grown = tape.add(u_tilde, inc)?;
    tape.gate_mix(u, delta, grown)
}

/// One step of the random-skip baseline: u is a sampled constant, not a
/// learned quantity, but the state mixture still lets gradients flow
/// through executed updates.
pub fn random_skip_step(
    tape: &mut Tape,
    bound: &BoundCell,
    state: &StateNodes,
    x: NodeId,
    u: NodeId,
) -> Result<StateNodes> {
    let cand = cell_step(tape, bound, state, x)?;
    mix_states(tape, u, &cand, state)
}

/// A full recorded unroll over one batch of sequences.
pub struct Rollout {
    pub final_state: StateNodes,
    /// Final hidden state of the top layer; feeds the readout head.
    pub final_hidden: NodeId,
    /// Binary gate nodes u_t, one per step (learned policy only).
    pub gates: Vec<NodeId>,
    /// Executed updates per sequence.
    pub update_counts: Vec<f64>,
}

/// Unroll the recurrence over `inputs` (one [B x in] tensor per step).
pub fn rollout(
    tape: &mut Tape,
    bound: &BoundCell,
    policy: SkipPolicy,
    inputs: &[Tensor],
    rng: &mut Rng,
) -> Result<Rollout> {
    policy.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("rollout over an empty sequence".into()));
    }
    let batch = inputs[0].rows();
    let state = initial_state(tape, bound, batch)?;
    let steps = inputs.len();

    match policy.kind {
        PolicyKind::AlwaysUpdate => {
            let mut st = state;
            for x_t in inputs {
                let x = tape.input(x_t.clone())?;
                st = cell_step(tape, bound, &st, x)?;
            }
            let final_hidden = st.layers.last().unwrap().h;
            Ok(Rollout {
                final_state: st,
                final_hidden,
                gates: Vec::new(),
                update_counts: vec![steps as f64; batch],
            })
        }
        PolicyKind::Learned => {
            // u_tilde starts at exactly 1 to force the first update.
            let u0 = tape.constant(Tensor::full(batch, 1, 1.0));
            let mut st = SkipStateNodes {
                cell: state,
                u_tilde: u0,
            };
            let mut gates = Vec::with_capacity(steps);
            let mut counts = vec![0.0; batch];
            for x_t in inputs {
                let x = tape.input(x_t.clone())?;
                let (next, u) = skip_step(tape, bound, &st, x, policy.binarizer, rng)?;
                for (cnt, &uv) in counts.iter_mut().zip(tape.value(u).data()) {
                    *cnt += uv;
                }
                gates.push(u);
                st = next;
            }
            let final_hidden = st.cell.layers.last().unwrap().h;
            Ok(Rollout {
                final_state: st.cell,
                final_hidden,
                gates,
                update_counts: counts,
            })
        }
        PolicyKind::Random { p_skip } => {
            let mut st = state;
            let mut counts = vec![0.0; batch];
            for x_t in inputs {
                let x = tape.input(x_t.clone())?;
                let mask: Vec<f64> = (0..batch)
                    .map(|_| if rng.bernoulli(p_skip) { 0.0 } else { 1.0 })
                    .collect();
                for (cnt, &uv) in counts.iter_mut().zip(&mask) {
                    *cnt += uv;
                }
                let u = tape.constant(Tensor::col(mask));
                st = random_skip_step(tape, bound, &st, x, u)?;
            }
            let final_hidden = st.layers.last().unwrap().h;
            Ok(Rollout {
                final_state: st,
                final_hidden,
                gates: Vec::new(),
                update_counts: counts,
            })
        }
    }
}
