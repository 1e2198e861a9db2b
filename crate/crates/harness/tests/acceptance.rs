//! Acceptance suite. One test per criterion; each prints a PASS/FAIL line.
//!
//! Criteria 1-3 and 7 are cheap and always run. Criteria 4-6 are full
//! training runs (tens of minutes to hours on a 2-core box) and are ignored
//! by default; run them with:
//!
//! ```text
//! cargo test --release -p skiprnn-harness --test acceptance -- --include-ignored
//! ```
//!
//! Criterion 6 needs the four official MNIST IDX files; point
//! SKIPRNN_DATA_DIR at them (default /root/data/mnist).

use rayon::prelude::*;
use skiprnn::cells::{
    self, inference, Binarizer, BoundCell, CellKind, CellParams, PolicyKind, SkipPolicy,
    StackSpec,
};
use skiprnn::metrics::{flops_per_sequence, round_sig, CostModel};
use skiprnn::objectives::{budget_loss, mse_loss, Adam, AdamConfig, BudgetSpec};
use skiprnn::params::{ParamId, ParamStore};
use skiprnn::rng::Rng;
use skiprnn::tape::{NodeId, Tape};
use skiprnn::tensor::{round_half_up, Tensor};
use skiprnn_harness::config::ExperimentConfig;
use skiprnn_harness::runner::{run_experiment, RunOutcome};
use std::collections::BTreeMap;
use std::path::PathBuf;

fn report(criterion: &str, pass: bool, details: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} -- {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {details}");
}

// ── Criterion 1: FLOP-table reproduction ────────────────────────────

struct CostCell {
    name: &'static str,
    model: CostModel,
    updates: f64,
    seq_len: usize,
    published: f64,
    /// One cell's published value is internally inconsistent with its own
    /// rounded update count (no per-update cost fits it together with the
    /// other cells); it is held to 0.5% instead of exact 3-figure equality.
    rounded_outlier: bool,
}

fn adding_model(cell: CellKind, gate: bool) -> CostModel {
    CostModel {
        cell,
        input_size: 2,
        layer_sizes: vec![110],
        gate_width: gate.then_some(110),
    }
}

fn mnist_model(cell: CellKind, gate: bool) -> CostModel {
    CostModel {
        cell,
        input_size: 1,
        layer_sizes: vec![110],
        gate_width: gate.then_some(110),
    }
}

#[test]
fn criterion_1_flop_table_reproduction() {
    use CellKind::{Gru, Lstm};
    let t1 = 50usize;
    let t2 = 784usize;
    let cells = vec![
        // Adding-task table: update percentages of T = 50.
        CostCell { name: "adding LSTM dense", model: adding_model(Lstm, false), updates: 50.0, seq_len: t1, published: 2.46e6, rounded_outlier: false },
        CostCell { name: "adding LSTM p_skip=0.2", model: adding_model(Lstm, false), updates: 0.800 * 50.0, seq_len: t1, published: 1.97e6, rounded_outlier: false },
        CostCell { name: "adding LSTM p_skip=0.5", model: adding_model(Lstm, false), updates: 0.501 * 50.0, seq_len: t1, published: 1.23e6, rounded_outlier: false },
        CostCell { name: "adding Skip LSTM l=0", model: adding_model(Lstm, true), updates: 0.811 * 50.0, seq_len: t1, published: 2.00e6, rounded_outlier: false },
        CostCell { name: "adding Skip LSTM l=1e-5", model: adding_model(Lstm, true), updates: 0.539 * 50.0, seq_len: t1, published: 1.33e6, rounded_outlier: false },
        CostCell { name: "adding GRU dense", model: adding_model(Gru, false), updates: 50.0, seq_len: t1, published: 1.85e6, rounded_outlier: false },
        CostCell { name: "adding GRU p_skip=0.02", model: adding_model(Gru, false), updates: 0.980 * 50.0, seq_len: t1, published: 1.81e6, rounded_outlier: false },
        CostCell { name: "adding GRU p_skip=0.5", model: adding_model(Gru, false), updates: 0.499 * 50.0, seq_len: t1, published: 9.25e5, rounded_outlier: true },
        CostCell { name: "adding Skip GRU l=0", model: adding_model(Gru, true), updates: 0.979 * 50.0, seq_len: t1, published: 1.81e6, rounded_outlier: false },
        CostCell { name: "adding Skip GRU l=1e-5", model: adding_model(Gru, true), updates: 0.507 * 50.0, seq_len: t1, published: 9.40e5, rounded_outlier: false },
        // Sequential-MNIST table: absolute update counts of T = 784.
        CostCell { name: "mnist LSTM dense", model: mnist_model(Lstm, false), updates: 784.0, seq_len: t2, published: 3.83e7, rounded_outlier: false },
        CostCell { name: "mnist LSTM p_skip=0.5", model: mnist_model(Lstm, false), updates: 392.03, seq_len: t2, published: 1.91e7, rounded_outlier: false },
        CostCell { name: "mnist Skip LSTM l=1e-4", model: mnist_model(Lstm, true), updates: 379.38, seq_len: t2, published: 1.86e7, rounded_outlier: false },
        CostCell { name: "mnist GRU dense", model: mnist_model(Gru, false), updates: 784.0, seq_len: t2, published: 2.87e7, rounded_outlier: false },
        CostCell { name: "mnist GRU p_skip=0.5", model: mnist_model(Gru, false), updates: 391.86, seq_len: t2, published: 1.44e7, rounded_outlier: false },
        CostCell { name: "mnist Skip GRU l=1e-4", model: mnist_model(Gru, true), updates: 392.62, seq_len: t2, published: 1.44e7, rounded_outlier: false },
    ];

    let mut all_ok = true;
    let mut details = String::new();
    for cell in &cells {
        let flops = flops_per_sequence(&cell.model, cell.updates, cell.seq_len).unwrap();
        let rounded = round_sig(flops, 3);
        let rel = (flops - cell.published).abs() / cell.published;
        let ok = if cell.rounded_outlier {
            rel <= 0.005
        } else {
            rounded == cell.published
        };
        if !ok {
            all_ok = false;
            details.push_str(&format!(
                "{}: model {rounded:.3e} vs published {:.3e}; ",
                cell.name, cell.published
            ));
        }
    }
    if details.is_empty() {
        details = format!("{} cost cells reproduced at 3 significant figures", cells.len());
    }
    report("criterion 1 (FLOP tables)", all_ok, &details);
}

// ── Criterion 2: closed-form skip count vs accumulator simulation ───

/// Brute-force oracle: simulate the flushed accumulator until it rounds up.
fn simulate_skips(delta: f64) -> u64 {
    let mut u_tilde = delta;
    let mut skipped = 0u64;
    while round_half_up(u_tilde) < 1.0 {
        let headroom = 1.0 - u_tilde;
        let inc = if delta <= headroom { delta } else { headroom };
        u_tilde += inc;
        skipped += 1;
    }
    skipped
}

#[test]
fn criterion_2_skip_count_and_fast_forward_equivalence() {
    // (a) 1e4 random gate emissions in (0, 1].
    let mut rng = Rng::from_seed(2024);
    let mut mismatches = 0usize;
    for _ in 0..10_000 {
        let delta = loop {
            let d = rng.next_f64();
            if d > 1e-4 {
                break d;
            }
        };
        if inference::n_skip(delta).unwrap() != simulate_skips(delta) {
            mismatches += 1;
        }
    }

    // (b) 200 random networks/sequences: fast-forward vs naive stepping vs
    // the recorded training rollout, masks and final states bitwise.
    let mut net_mismatches = 0usize;
    for trial in 0..200u64 {
        let kind = if trial % 2 == 0 { CellKind::Lstm } else { CellKind::Gru };
        let hidden = 4 + (trial % 13) as usize;
        let t_len = 20 + (trial % 41) as usize;
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(9000 + trial);
        let spec = StackSpec::new(kind, 2, vec![hidden]);
        let params = CellParams::init(spec, true, &mut store, &mut init_rng).unwrap();
        // Spread the gate bias so trials cover sparse and dense regimes.
        let gate_b = params.gate.as_ref().unwrap().b;
        store.get_mut(gate_b).set(0, 0, init_rng.uniform(-3.0, 2.0));

        let mut data_rng = Rng::from_seed(7000 + trial);
        let inputs: Vec<Tensor> = (0..t_len)
            .map(|_| {
                Tensor::from_vec(1, 2, vec![data_rng.uniform(-2.0, 2.0), data_rng.uniform(-2.0, 2.0)])
            })
            .collect();

        let weights = inference::CellWeights::new(&params, &store);
        let rows = inference::seq_rows(&inputs, 0);
        let (fast_state, fast_mask) = inference::fast_forward(&weights, &rows).unwrap();
        let (naive_state, naive_mask) =
            inference::skip_forward_naive(&weights, &rows, Binarizer::Deterministic, None)
                .unwrap();

        let mut tape = Tape::new();
        let bound = BoundCell::bind(&mut tape, &params, &store).unwrap();
        let mut roll_rng = Rng::from_seed(1);
        let out =
            cells::rollout(&mut tape, &bound, SkipPolicy::learned(), &inputs, &mut roll_rng)
                .unwrap();
        let tape_mask: Vec<bool> = out
            .gates
            .iter()
            .map(|&u| tape.value(u).item() == 1.0)
            .collect();

        let states_equal = fast_state.top_hidden() == naive_state.top_hidden()
            && fast_state
                .top_hidden()
                .iter()
                .zip(tape.value(out.final_hidden).data())
                .all(|(a, b)| a == b);
        if fast_mask != naive_mask || fast_mask != tape_mask || !states_equal {
            net_mismatches += 1;
        }
    }

    let pass = mismatches == 0 && net_mismatches == 0;
    report(
        "criterion 2 (skip-count oracle equivalence)",
        pass,
        &format!(
            "10000 gate emissions, 0 expected mismatches, got {mismatches}; \
             200 networks, mask/state mismatches {net_mismatches}"
        ),
    );
}

// ── Criterion 3: gradient correctness ───────────────────────────────

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn fd_gradient_check(
    store: &ParamStore,
    build: &dyn Fn(&mut Tape, &ParamStore) -> NodeId,
) -> Result<(), String> {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    let eval = |s: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.value(l).item()
    };
    for pid in 0..store.len() {
        let pid = ParamId(pid);
        for idx in 0..store.get(pid).len() {
            let mut plus = store.clone();
            plus.get_mut(pid).data_mut()[idx] += FD_EPS;
            let mut minus = store.clone();
            minus.get_mut(pid).data_mut()[idx] -= FD_EPS;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
            let tg = grads.get(pid).map(|g| g.data()[idx]).unwrap_or(0.0);
            let scale = 1.0f64.max(fd.abs()).max(tg.abs());
            if (fd - tg).abs() > FD_TOL * scale {
                return Err(format!(
                    "param {} entry {idx}: fd {fd} vs tape {tg}",
                    pid.0
                ));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_3_gradient_correctness() {
    let mut failures: Vec<String> = Vec::new();

    // Every differentiable op through a weighted-sum head.
    let mut rng = Rng::from_seed(31);
    for instance in 0..100u64 {
        let mut store = ParamStore::new();
        store.add(
            "a",
            Tensor::from_vec(2, 3, (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        );
        store.add(
            "b",
            Tensor::from_vec(2, 3, (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        );
        store.add(
            "w",
            Tensor::from_vec(3, 2, (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        );
        store.add(
            "u",
            Tensor::from_vec(2, 1, (0..2).map(|_| rng.uniform(0.1, 0.9)).collect()),
        );
        let mix = Tensor::from_vec(2, 2, (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let targets = vec![rng.below(2), rng.below(2)];
        let result = fd_gradient_check(&store, &move |tape, s| {
            let a = tape.param(ParamId(0), s).unwrap();
            let b = tape.param(ParamId(1), s).unwrap();
            let w = tape.param(ParamId(2), s).unwrap();
            let u = tape.param(ParamId(3), s).unwrap();
            let sum = tape.add(a, b).unwrap();
            let diff = tape.sub(a, b).unwrap();
            let prod = tape.mul(sum, diff).unwrap();
            let mn = tape.min_elem(a, b).unwrap();
            let sg = tape.sigmoid(prod).unwrap();
            let th = tape.tanh(mn).unwrap();
            let mixed_in = tape.add(sg, th).unwrap();
            let mm = tape.matmul(mixed_in, w).unwrap(); // 2x2
            let old = tape.scale_shift(mm, 0.5, -0.1).unwrap();
            let gm = tape.gate_mix(u, mm, old).unwrap();
            let mixv = tape.input(mix.clone()).unwrap();
            let weighted = tape.mul(gm, mixv).unwrap();
            let s1 = tape.sum_all(weighted).unwrap();
            let ce = tape.cross_entropy(mm, &targets).unwrap();
            tape.add(s1, ce).unwrap()
        });
        if let Err(e) = result {
            failures.push(format!("op composite #{instance}: {e}"));
            break;
        }
    }

    // Straight-through binarization: forward rounds half up, backward is
    // exactly the identity.
    {
        let mut store = ParamStore::new();
        store.add("p", Tensor::from_vec(1, 4, vec![0.49, 0.5, 0.51, 0.999]));
        let mut tape = Tape::new();
        let p = tape.param(ParamId(0), &store).unwrap();
        let u = tape.round_st(p).unwrap();
        if tape.value(u).data() != [0.0, 1.0, 1.0, 1.0] {
            failures.push("round_st forward is not round-half-up".into());
        }
        let weights = tape
            .input(Tensor::from_vec(1, 4, vec![2.0, -3.0, 0.5, 1.25]))
            .unwrap();
        let weighted = tape.mul(u, weights).unwrap();
        let loss = tape.sum_all(weighted).unwrap();
        let grads = tape.backward(loss).unwrap();
        if grads.get(ParamId(0)).unwrap().data() != [2.0, -3.0, 0.5, 1.25] {
            failures.push("round_st backward is not the exact identity".into());
        }
    }

    // Full Skip-LSTM rollout over 5 steps, smooth passthrough binarizer.
    {
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(32);
        let spec = StackSpec::new(CellKind::Lstm, 2, vec![3]);
        let params = CellParams::init(spec, true, &mut store, &mut init_rng).unwrap();
        let inputs: Vec<Tensor> = (0..5)
            .map(|_| Tensor::from_vec(2, 2, (0..4).map(|_| init_rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let target = Tensor::from_vec(2, 3, (0..6).map(|_| init_rng.uniform(-0.5, 0.5)).collect());
        let policy = SkipPolicy {
            kind: PolicyKind::Learned,
            binarizer: Binarizer::Identity,
        };
        let result = fd_gradient_check(&store, &move |tape, s| {
            let bound = BoundCell::bind(tape, &params, s).unwrap();
            let mut roll_rng = Rng::from_seed(1);
            let out = cells::rollout(tape, &bound, policy, &inputs, &mut roll_rng).unwrap();
            let tv = tape.input(target.clone()).unwrap();
            let task = mse_loss(tape, out.final_hidden, tv).unwrap();
            let budget =
                budget_loss(tape, &out.gates, BudgetSpec::CostPerSample { lambda: 1e-2 })
                    .unwrap();
            tape.add(task, budget).unwrap()
        });
        if let Err(e) = result {
            failures.push(format!("skip-lstm rollout: {e}"));
        }
    }

    let pass = failures.is_empty();
    let fail_detail = failures.join("; ");
    report(
        "criterion 3 (gradient correctness)",
        pass,
        if pass {
            "100 op composites, straight-through exactness, 5-step skip-LSTM rollout"
        } else {
            &fail_detail
        },
    );
}

// ── Criterion 7: invariant suites ───────────────────────────────────

#[test]
fn criterion_7_invariant_suites() {
    let mut failures: Vec<String> = Vec::new();

    // (a) Accumulator bounds and (b) copy fidelity over random rollouts.
    for trial in 0..30u64 {
        let kind = if trial % 2 == 0 { CellKind::Lstm } else { CellKind::Gru };
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(700 + trial);
        let spec = StackSpec::new(kind, 2, vec![5]);
        let params = CellParams::init(spec, true, &mut store, &mut init_rng).unwrap();
        let gate_b = params.gate.as_ref().unwrap().b;
        store.get_mut(gate_b).set(0, 0, init_rng.uniform(-2.0, 2.0));
        let mut data_rng = Rng::from_seed(800 + trial);
        let inputs: Vec<Tensor> = (0..15)
            .map(|_| Tensor::from_vec(1, 2, vec![data_rng.uniform(-2.0, 2.0), data_rng.uniform(-2.0, 2.0)]))
            .collect();

        let mut tape = Tape::new();
        let bound = BoundCell::bind(&mut tape, &params, &store).unwrap();
        let cell = cells::initial_state(&mut tape, &bound, 1).unwrap();
        let u0 = tape.constant(Tensor::full(1, 1, 1.0));
        let mut st = cells::SkipStateNodes { cell, u_tilde: u0 };
        let mut rng = Rng::from_seed(1);
        let mut prev_h: Option<Vec<f64>> = None;
        let mut prev_u_tilde = 1.0;
        for (t, x_t) in inputs.iter().enumerate() {
            let x = tape.input(x_t.clone()).unwrap();
            let (next, u) = cells::skip_step(
                &mut tape,
                &bound,
                &st,
                x,
                Binarizer::Deterministic,
                &mut rng,
            )
            .unwrap();
            let ut = tape.value(next.u_tilde).item();
            if !(0.0..=1.0).contains(&ut) {
                failures.push(format!("trial {trial} step {t}: accumulator {ut} out of bounds"));
            }
            let uv = tape.value(u).item();
            let h = tape.value(next.cell.layers[0].h).data().to_vec();
            if uv == 0.0 {
                if let Some(prev) = &prev_h {
                    if &h != prev {
                        failures.push(format!("trial {trial} step {t}: copy step changed state"));
                    }
                }
                // Monotone trigger while skipping.
                if ut < prev_u_tilde {
                    failures.push(format!(
                        "trial {trial} step {t}: accumulator decreased while skipping"
                    ));
                }
            }
            prev_u_tilde = ut;
            prev_h = Some(h);
            st = next;
        }
    }

    // (c) always_update == plain rollout (exact).
    {
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(41);
        let spec = StackSpec::new(CellKind::Gru, 2, vec![6]);
        let params = CellParams::init(spec, false, &mut store, &mut init_rng).unwrap();
        let mut data_rng = Rng::from_seed(42);
        let inputs: Vec<Tensor> = (0..8)
            .map(|_| Tensor::from_vec(3, 2, (0..6).map(|_| data_rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let mut tape = Tape::new();
        let bound = BoundCell::bind(&mut tape, &params, &store).unwrap();
        let mut rng = Rng::from_seed(1);
        let plain =
            cells::rollout(&mut tape, &bound, SkipPolicy::always_update(), &inputs, &mut rng)
                .unwrap();
        let w = inference::CellWeights::new(&params, &store);
        let dense = inference::dense_forward(&w, &inputs).unwrap();
        if tape.value(plain.final_hidden).data() != dense.top_hidden() {
            failures.push("always_update differs from the plain rollout".into());
        }
    }

    // (d) End-to-end determinism: identical config and seed give identical
    // record bytes.
    {
        let cfg = tiny_adding_config("det_check", PolicyKind::Learned, 11);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        if a.record.to_json() != b.record.to_json() {
            failures.push("reruns with the same seed produced different records".into());
        }
    }

    // (e) Frozen gate columns stay exactly zero through training
    // (covered at unit level too; here across a short real run).
    {
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(51);
        let spec = StackSpec::new(CellKind::Gru, 2, vec![3, 4]).with_gate_on_last();
        let params = CellParams::init(spec, true, &mut store, &mut init_rng).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
        let mut data_rng = Rng::from_seed(52);
        for _ in 0..50 {
            let inputs: Vec<Tensor> = (0..6)
                .map(|_| Tensor::from_vec(2, 2, (0..4).map(|_| data_rng.uniform(-1.0, 1.0)).collect()))
                .collect();
            let mut tape = Tape::new();
            let bound = BoundCell::bind(&mut tape, &params, &store).unwrap();
            let mut rng = Rng::from_seed(1);
            let out =
                cells::rollout(&mut tape, &bound, SkipPolicy::learned(), &inputs, &mut rng)
                    .unwrap();
            let target = tape.input(Tensor::zeros(2, 4)).unwrap();
            let loss = mse_loss(&mut tape, out.final_hidden, target).unwrap();
            let budget = budget_loss(
                &mut tape,
                &out.gates,
                BudgetSpec::CostPerSample { lambda: 1e-3 },
            )
            .unwrap();
            let total = tape.add(loss, budget).unwrap();
            let mut grads = tape.backward(total).unwrap();
            params.freeze_masked_gate_grads(&mut grads);
            adam.step(&mut store, &grads).unwrap();
        }
        let gate = params.gate.as_ref().unwrap();
        let w = store.get(gate.w);
        if w.data().iter().zip(&gate.mask).any(|(&v, &m)| !m && v != 0.0) {
            failures.push("masked gate columns drifted from zero".into());
        }
    }

    // (f) Budget with lambda = 0 changes nothing: parameter trajectories
    // with and without the zero-priced budget node are bit-identical.
    {
        let run = |with_budget: bool| -> Vec<u64> {
            let mut store = ParamStore::new();
            let mut init_rng = Rng::from_seed(61);
            let spec = StackSpec::new(CellKind::Lstm, 2, vec![4]);
            let params = CellParams::init(spec, true, &mut store, &mut init_rng).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            let mut data_rng = Rng::from_seed(62);
            for _ in 0..10 {
                let inputs: Vec<Tensor> = (0..5)
                    .map(|_| Tensor::from_vec(2, 2, (0..4).map(|_| data_rng.uniform(-1.0, 1.0)).collect()))
                    .collect();
                let mut tape = Tape::new();
                let bound = BoundCell::bind(&mut tape, &params, &store).unwrap();
                let mut rng = Rng::from_seed(1);
                let out = cells::rollout(
                    &mut tape, &bound, SkipPolicy::learned(), &inputs, &mut rng,
                )
                .unwrap();
                let target = tape.input(Tensor::zeros(2, 4)).unwrap();
                let task = mse_loss(&mut tape, out.final_hidden, target).unwrap();
                let total = if with_budget {
                    let b = budget_loss(
                        &mut tape,
                        &out.gates,
                        BudgetSpec::CostPerSample { lambda: 0.0 },
                    )
                    .unwrap();
                    tape.add(task, b).unwrap()
                } else {
                    task
                };
                let mut grads = tape.backward(total).unwrap();
                params.freeze_masked_gate_grads(&mut grads);
                adam.step(&mut store, &grads).unwrap();
            }
            store
                .iter()
                .flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        if run(true) != run(false) {
            failures.push("lambda = 0 budget perturbed the trajectory".into());
        }
    }

    // (g) Loss is non-increasing after one tiny-lr Adam step on a frozen
    // batch.
    {
        let mut store = ParamStore::new();
        let mut init_rng = Rng::from_seed(71);
        let spec = StackSpec::new(CellKind::Lstm, 2, vec![6]);
        let params = CellParams::init(spec, false, &mut store, &mut init_rng).unwrap();
        let mut data_rng = Rng::from_seed(72);
        let inputs: Vec<Tensor> = (0..6)
            .map(|_| Tensor::from_vec(4, 2, (0..8).map(|_| data_rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let target = Tensor::from_vec(4, 6, (0..24).map(|_| data_rng.uniform(-0.5, 0.5)).collect());
        let loss_on = |store: &ParamStore| -> (f64, skiprnn::Gradients) {
            let mut tape = Tape::new();
            let bound = BoundCell::bind(&mut tape, &params, store).unwrap();
            let mut rng = Rng::from_seed(1);
            let out = cells::rollout(
                &mut tape, &bound, SkipPolicy::always_update(), &inputs, &mut rng,
            )
            .unwrap();
            let tv = tape.input(target.clone()).unwrap();
            let l = mse_loss(&mut tape, out.final_hidden, tv).unwrap();
            let v = tape.value(l).item();
            let g = tape.backward(l).unwrap();
            (v, g)
        };
        let (before, grads) = loss_on(&store);
        let mut adam = Adam::new(AdamConfig { lr: 1e-6, ..AdamConfig::default() });
        adam.step(&mut store, &grads).unwrap();
        let (after, _) = loss_on(&store);
        if after > before {
            failures.push(format!("loss increased after a 1e-6-lr step: {before} -> {after}"));
        }
    }

    let pass = failures.is_empty();
    let fail_detail = failures.join("; ");
    report(
        "criterion 7 (invariant suites)",
        pass,
        if pass {
            "bounds, copy fidelity, dense equivalence, determinism, frozen columns, \
             zero-lambda neutrality, descent smoke"
        } else {
            &fail_detail
        },
    );
}

// ── Training-run criteria (ignored by default; run with --include-ignored) ──

fn desk_config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let map: BTreeMap<String, String> = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    ExperimentConfig::from_pairs(map).expect("valid desk config").0
}

fn tiny_adding_config(label: &str, policy: PolicyKind, seed: u64) -> ExperimentConfig {
    let mut pairs = vec![
        ("task", "adding".to_string()),
        ("cell", "lstm".to_string()),
        ("hidden", "8".to_string()),
        ("batch_size", "16".to_string()),
        ("max_batches", "20".to_string()),
        ("eval_every", "10".to_string()),
        ("eval_size", "64".to_string()),
        ("early_exit", "false".to_string()),
        ("label", label.to_string()),
        ("seed", seed.to_string()),
    ];
    match policy {
        PolicyKind::Learned => {
            pairs.push(("policy", "learned".to_string()));
            pairs.push(("lambda", "1e-5".to_string()));
        }
        PolicyKind::AlwaysUpdate => pairs.push(("policy", "dense".to_string())),
        PolicyKind::Random { p_skip } => {
            pairs.push(("policy", "random".to_string()));
            pairs.push(("p_skip", p_skip.to_string()));
        }
    }
    let map: BTreeMap<String, String> = pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    ExperimentConfig::from_pairs(map).unwrap().0
}

fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<RunOutcome> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            run_experiment(&c).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", c.label))
        })
        .collect()
}

const DESK_SEEDS: [u64; 2] = [1, 2];

#[test]
#[ignore = "training run (~1-2 h on 2 cores); invoke with --include-ignored in release mode"]
fn criterion_4_adding_task_desk_scale() {
    // Desk scale: batch 64 instead of 256 (4x more optimizer steps per
    // FLOP) and explicit batch budgets; spec-default lr/clip/init are
    // untouched.
    let dense_lstm = desk_config(&[
        ("task", "adding"), ("policy", "dense"), ("cell", "lstm"),
        ("batch_size", "64"), ("max_batches", "12000"), ("eval_size", "10000"),
        ("early_exit", "true"), ("label", "acc4_dense_lstm"),
    ]);
    let dense_gru = desk_config(&[
        ("task", "adding"), ("policy", "dense"), ("cell", "gru"),
        ("batch_size", "64"), ("max_batches", "12000"), ("eval_size", "10000"),
        ("early_exit", "true"), ("label", "acc4_dense_gru"),
    ]);
    let skip_lstm = desk_config(&[
        ("task", "adding"), ("policy", "learned"), ("lambda", "1e-5"), ("cell", "lstm"),
        ("batch_size", "64"), ("max_batches", "20000"), ("eval_size", "10000"),
        ("early_exit", "false"), ("label", "acc4_skip_lstm"),
    ]);
    let random_lstm = desk_config(&[
        ("task", "adding"), ("policy", "random"), ("p_skip", "0.5"), ("cell", "lstm"),
        ("batch_size", "64"), ("max_batches", "12000"), ("eval_size", "10000"),
        ("early_exit", "true"), ("label", "acc4_random_lstm"),
    ]);

    let jobs: Vec<(&ExperimentConfig, u64)> = [&dense_lstm, &dense_gru, &skip_lstm, &random_lstm]
        .into_iter()
        .flat_map(|c| DESK_SEEDS.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Vec<(String, u64, RunOutcome)> = jobs
        .into_par_iter()
        .map(|(cfg, seed)| {
            let mut c = cfg.clone();
            c.seed = seed;
            let out = run_experiment(&c).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", c.label));
            (c.label.clone(), seed, out)
        })
        .collect();

    let by = |label: &str| -> Vec<&RunOutcome> {
        outcomes
            .iter()
            .filter(|(l, _, _)| l == label)
            .map(|(_, _, o)| o)
            .collect()
    };

    let mut failures = Vec::new();
    for label in ["acc4_dense_lstm", "acc4_dense_gru"] {
        for o in by(label) {
            if !o.record.solved {
                failures.push(format!("{label}: mse {:.5} not solved", o.record.final_metric));
            }
        }
    }
    let skips = by("acc4_skip_lstm");
    let mean_frac =
        skips.iter().map(|o| o.record.update_frac_mean).sum::<f64>() / skips.len() as f64;
    for o in &skips {
        if !o.record.solved {
            failures.push(format!("skip lstm: mse {:.5} not solved", o.record.final_metric));
        }
    }
    if !(0.45..=0.65).contains(&mean_frac) {
        failures.push(format!("skip lstm update fraction {mean_frac:.3} outside [0.45, 0.65]"));
    }
    for o in by("acc4_random_lstm") {
        if o.record.solved {
            failures.push("random skip p=0.5 unexpectedly solved the task".to_string());
        }
    }

    let pass = failures.is_empty();
    let fail_detail = failures.join("; ");
    let detail = format!(
        "dense lstm mse {:?}, dense gru mse {:?}, skip mse {:?} update_frac {:.3}, random mse {:?}",
        by("acc4_dense_lstm").iter().map(|o| o.record.final_metric).collect::<Vec<_>>(),
        by("acc4_dense_gru").iter().map(|o| o.record.final_metric).collect::<Vec<_>>(),
        skips.iter().map(|o| o.record.final_metric).collect::<Vec<_>>(),
        mean_frac,
        by("acc4_random_lstm").iter().map(|o| o.record.final_metric).collect::<Vec<_>>(),
    );
    report(
        "criterion 4 (adding task, desk scale)",
        pass,
        if pass { &detail } else { &fail_detail },
    );
}

#[test]
#[ignore = "training run (~1-2 h on 2 cores); invoke with --include-ignored in release mode"]
fn criterion_5_frequency_discrimination_desk_scale() {
    let base = [
        ("task", "freqdisc"), ("policy", "learned"), ("lambda", "1e-4"), ("cell", "lstm"),
        ("batch_size", "64"), ("max_batches", "15000"), ("eval_size", "10000"),
        ("early_exit", "false"),
    ];
    let mut cfg_1ms = desk_config(&base);
    cfg_1ms.label = "acc5_ts1".into();
    cfg_1ms.t_s = 1.0;
    let mut cfg_05ms = desk_config(&base);
    cfg_05ms.label = "acc5_ts05".into();
    cfg_05ms.t_s = 0.5;

    let (out_1ms, out_05ms) = rayon::join(
        || run_seeds(&cfg_1ms, &DESK_SEEDS),
        || run_seeds(&cfg_05ms, &DESK_SEEDS),
    );

    let mut failures = Vec::new();
    let acc = |o: &RunOutcome| o.record.final_metric;
    for o in out_1ms.iter().chain(&out_05ms) {
        if !o.record.solved {
            failures.push(format!("accuracy {:.4} below the 99% bar", acc(o)));
        }
    }
    let updates_1 =
        out_1ms.iter().map(|o| o.record.updates_mean).sum::<f64>() / out_1ms.len() as f64;
    let updates_05 =
        out_05ms.iter().map(|o| o.record.updates_mean).sum::<f64>() / out_05ms.len() as f64;
    if !(8.0..=25.0).contains(&updates_1) {
        failures.push(format!("T_s=1 ms mean updates {updates_1:.1} outside [8, 25]"));
    }
    let ratio = updates_05 / updates_1;
    if !(0.5..=2.0).contains(&ratio) {
        failures.push(format!(
            "update count not sampling-robust: {updates_05:.1} vs {updates_1:.1} (ratio {ratio:.2})"
        ));
    }

    let pass = failures.is_empty();
    let fail_detail = failures.join("; ");
    let detail = format!(
        "acc(1ms) {:?}, acc(0.5ms) {:?}, updates {updates_1:.1} vs {updates_05:.1} (ratio {ratio:.2})",
        out_1ms.iter().map(|o| acc(o)).collect::<Vec<_>>(),
        out_05ms.iter().map(|o| acc(o)).collect::<Vec<_>>(),
    );
    report(
        "criterion 5 (frequency discrimination)",
        pass,
        if pass { &detail } else { &fail_detail },
    );
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(skiprnn_harness::config::DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data/mnist"))
}

#[test]
#[ignore = "training run (~2-4 h on 2 cores); needs MNIST IDX files (SKIPRNN_DATA_DIR)"]
fn criterion_6_sequential_mnist_desk_profile() {
    let dir = mnist_dir();
    assert!(
        dir.join(skiprnn::tasks::mnist::TRAIN_IMAGES).exists(),
        "MNIST IDX files not found under {} (set SKIPRNN_DATA_DIR)",
        dir.display()
    );
    let dir_s = dir.to_string_lossy().to_string();
    let skip_gru = desk_config(&[
        ("task", "mnist"), ("policy", "learned"), ("lambda", "1e-4"), ("cell", "gru"),
        ("mnist_profile", "desk"), ("batch_size", "64"), ("epochs", "100"),
        ("mnist_dir", &dir_s), ("label", "acc6_skip_gru"), ("seed", "1"),
    ]);
    let dense_gru = desk_config(&[
        ("task", "mnist"), ("policy", "dense"), ("cell", "gru"),
        ("mnist_profile", "desk"), ("batch_size", "64"), ("epochs", "100"),
        ("mnist_dir", &dir_s), ("label", "acc6_dense_gru"), ("seed", "1"),
    ]);

    let (skip_out, dense_out) = rayon::join(
        || run_experiment(&skip_gru).unwrap_or_else(|e| panic!("skip gru: {e}")),
        || run_experiment(&dense_gru).unwrap_or_else(|e| panic!("dense gru: {e}")),
    );

    let mut failures = Vec::new();
    let acc_gap = dense_out.record.final_metric - skip_out.record.final_metric;
    if acc_gap > 0.03 {
        failures.push(format!(
            "skip accuracy {:.4} trails dense {:.4} by more than 3 points",
            skip_out.record.final_metric, dense_out.record.final_metric
        ));
    }
    if skip_out.record.update_frac_mean > 0.65 {
        failures.push(format!(
            "skip gru used {:.1}% of steps (> 65%)",
            100.0 * skip_out.record.update_frac_mean
        ));
    }
    // Padding-skip structure: most steps in the first/last three pixel rows
    // skipped, on at least half of the test digits.
    let border_rows = [0usize, 1, 2, 25, 26, 27];
    let digits_with_skipped_padding = skip_out
        .final_masks
        .iter()
        .filter(|mask| {
            skiprnn::metrics::skip_fraction_in_pixel_rows(mask, &border_rows) > 0.8
        })
        .count();
    let frac_digits = digits_with_skipped_padding as f64 / skip_out.final_masks.len() as f64;
    if frac_digits < 0.5 {
        failures.push(format!(
            "only {:.1}% of digits skip >80% of the padding rows",
            100.0 * frac_digits
        ));
    }

    let pass = failures.is_empty();
    let fail_detail = failures.join("; ");
    let detail = format!(
        "skip acc {:.4} vs dense acc {:.4}; update_frac {:.3}; padding-skip digits {:.1}%",
        skip_out.record.final_metric,
        dense_out.record.final_metric,
        skip_out.record.update_frac_mean,
        100.0 * frac_digits
    );
    report(
        "criterion 6 (sequential MNIST desk profile)",
        pass,
        if pass { &detail } else { &fail_detail },
    );
}
