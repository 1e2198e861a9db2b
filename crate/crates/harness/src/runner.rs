//! Training and evaluation loops.
//!
//! Each run is a pure function of (config, seed): data generation, weight
//! initialization, rollout stochasticity and evaluation sets all draw from
//! tagged substreams of the run seed, and evaluation fans out across
//! threads without changing any result bit.

use crate::config::{ExperimentConfig, MnistProfile, TaskKind};
use crate::emit::{CurvePoint, ResultRecord};
use crate::HarnessError;
use rayon::prelude::*;
use skiprnn::cells::{
    inference, Binarizer, BoundCell, CellParams, Head, PolicyKind, StackSpec,
};
use skiprnn::metrics::{
    flops_per_sequence, usage_records, CostModel, EvalPoint, RunMetrics, Summary, UsageRecord,
};
use skiprnn::objectives::{budget_loss, cross_entropy_loss, mse_loss, Adam};
use skiprnn::params::ParamStore;
use skiprnn::rng::Rng;
use skiprnn::tape::Tape;
use skiprnn::tasks::{adding, freqdisc, mnist, Batch, Targets};
use std::path::PathBuf;
use std::time::Instant;

// Substream tags off the run seed.
const TAG_INIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_ROLLOUT: u64 = 3;
const TAG_EVAL_BASE: u64 = 1_000;
const TAG_EVAL_SEQ: u64 = 1 << 40;

const EVAL_CHUNK: usize = 250;

pub struct RunOutcome {
    pub record: ResultRecord,
    pub metrics: RunMetrics,
    /// Usage masks for every sequence of the final evaluation set.
    pub final_masks: Vec<Vec<bool>>,
    pub usage: Vec<UsageRecord>,
    pub store: ParamStore,
    pub params: CellParams,
}

struct Model {
    store: ParamStore,
    params: CellParams,
    head: Head,
}

fn build_model(cfg: &ExperimentConfig, root: &Rng) -> Result<Model, HarnessError> {
    let mut store = ParamStore::new();
    let mut rng = root.derive(TAG_INIT);
    let mut spec = StackSpec::new(cfg.cell, cfg.input_size(), cfg.hidden.clone());
    if cfg.gate_layers_last_only {
        spec = spec.with_gate_on_last();
    }
    let with_gate = matches!(cfg.policy, PolicyKind::Learned);
    let params = CellParams::init(spec, with_gate, &mut store, &mut rng)?;
    let head = Head::init(
        &mut store,
        &mut rng,
        *cfg.hidden.last().unwrap(),
        cfg.output_size(),
    );
    Ok(Model {
        store,
        params,
        head,
    })
}

fn cost_model(cfg: &ExperimentConfig, params: &CellParams) -> CostModel {
    CostModel {
        cell: cfg.cell,
        input_size: cfg.input_size(),
        layer_sizes: cfg.hidden.clone(),
        gate_width: params
            .gate
            .as_ref()
            .map(|g| g.mask.iter().filter(|&&m| m).count()),
    }
}

fn train_step(
    cfg: &ExperimentConfig,
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    roll_rng: &mut Rng,
) -> Result<f64, HarnessError> {
    let mut tape = Tape::new();
    let bound = BoundCell::bind(&mut tape, &model.params, &model.store)?;
    let out = skiprnn::cells::rollout(
        &mut tape,
        &bound,
        cfg.skip_policy(),
        &batch.step_inputs,
        roll_rng,
    )?;
    let w = tape.param(model.head.w, &model.store)?;
    let b = tape.param(model.head.b, &model.store)?;
    let pred = tape.affine(out.final_hidden, w, b)?;
    let task_loss = match &batch.targets {
        Targets::Scalar(t) => {
            let tv = tape.input(t.clone())?;
            mse_loss(&mut tape, pred, tv)?
        }
        Targets::Class(labels) => cross_entropy_loss(&mut tape, pred, labels)?,
    };
    let total = if matches!(cfg.policy, PolicyKind::Learned) && cfg.budget.is_active() {
        let budget = budget_loss(&mut tape, &out.gates, cfg.budget)?;
        tape.add(task_loss, budget)?
    } else {
        task_loss
    };
    let loss_val = tape.value(total).item();
    let mut grads = tape.backward(total)?;
    model.params.freeze_masked_gate_grads(&mut grads);
    adam.step(&mut model.store, &grads)?;
    Ok(loss_val)
}

struct EvalOutput {
    loss: f64,
    metric: f64,
    solved: bool,
    masks: Vec<Vec<bool>>,
    /// Inputs of the first `mask_samples` sequences, for usage export.
    sample_inputs: Vec<Vec<Vec<f64>>>,
}

/// Run one full evaluation pass over `batches`.
fn evaluate(
    cfg: &ExperimentConfig,
    model: &Model,
    root: &Rng,
    eval_idx: u64,
    batches: &[Batch],
) -> Result<EvalOutput, HarnessError> {
    let weights = inference::CellWeights::new(&model.params, &model.store);
    let head_w = model.store.get(model.head.w);
    let head_b = model.store.get(model.head.b);
    let h_size = *cfg.hidden.last().unwrap();

    let mut total_loss = 0.0f64;
    let mut total_sq_err = 0.0f64;
    let mut correct = 0usize;
    let mut count = 0usize;
    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut sample_inputs: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut seq_base = 0u64;

    for batch in batches {
        let b = batch.batch_size();
        let t_len = batch.seq_len();
        // Final hidden states [b x H] and per-sequence masks.
        let (hidden, batch_masks): (Vec<f64>, Vec<Vec<bool>>) = match cfg.policy {
            PolicyKind::AlwaysUpdate => {
                let state = inference::dense_forward(&weights, &batch.step_inputs)?;
                (
                    state.top_hidden().to_vec(),
                    vec![vec![true; t_len]; b],
                )
            }
            PolicyKind::Learned => {
                let per_seq: Vec<(Vec<f64>, Vec<bool>)> = (0..b)
                    .into_par_iter()
                    .map(|i| -> Result<(Vec<f64>, Vec<bool>), skiprnn::Error> {
                        let rows = inference::seq_rows(&batch.step_inputs, i);
                        let (state, mask) = match cfg.binarizer {
                            Binarizer::Deterministic => {
                                inference::fast_forward(&weights, &rows)?
                            }
                            Binarizer::Bernoulli => {
                                let mut rng = root.derive(
                                    TAG_EVAL_SEQ + (eval_idx << 20) + seq_base + i as u64,
                                );
                                inference::skip_forward_naive(
                                    &weights,
                                    &rows,
                                    Binarizer::Bernoulli,
                                    Some(&mut rng),
                                )?
                            }
                            Binarizer::Identity => {
                                return Err(skiprnn::Error::Config(
                                    "identity binarizer is diagnostic-only".into(),
                                ))
                            }
                        };
                        Ok((state.top_hidden().to_vec(), mask))
                    })
                    .collect::<Result<_, _>>()?;
                let mut hidden = Vec::with_capacity(b * h_size);
                let mut bm = Vec::with_capacity(b);
                for (h, m) in per_seq {
                    hidden.extend_from_slice(&h);
                    bm.push(m);
                }
                (hidden, bm)
            }
            PolicyKind::Random { p_skip } => {
                let per_seq: Vec<(Vec<f64>, Vec<bool>)> = (0..b)
                    .into_par_iter()
                    .map(|i| -> Result<(Vec<f64>, Vec<bool>), skiprnn::Error> {
                        let rows = inference::seq_rows(&batch.step_inputs, i);
                        let mut rng = root
                            .derive(TAG_EVAL_SEQ + (eval_idx << 20) + seq_base + i as u64);
                        let (state, mask) =
                            inference::random_forward(&weights, &rows, p_skip, &mut rng)?;
                        Ok((state.top_hidden().to_vec(), mask))
                    })
                    .collect::<Result<_, _>>()?;
                let mut hidden = Vec::with_capacity(b * h_size);
                let mut bm = Vec::with_capacity(b);
                for (h, m) in per_seq {
                    hidden.extend_from_slice(&h);
                    bm.push(m);
                }
                (hidden, bm)
            }
        };

        let preds = inference::head_forward_raw(&hidden, head_w, head_b, b);
        let out_size = cfg.output_size();
        match &batch.targets {
            Targets::Scalar(targets) => {
                for i in 0..b {
                    let err = preds[i] - targets.get(i, 0);
                    total_sq_err += err * err;
                }
                total_loss = total_sq_err;
            }
            Targets::Class(labels) => {
                for (i, &label) in labels.iter().enumerate() {
                    let row = &preds[i * out_size..(i + 1) * out_size];
                    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = maxv
                        + row.iter().map(|&x| (x - maxv).exp()).sum::<f64>().ln();
                    total_loss += lse - row[label];
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    if argmax == label {
                        correct += 1;
                    }
                }
            }
        }

        if sample_inputs.len() < cfg.mask_samples {
            let want = (cfg.mask_samples - sample_inputs.len()).min(b);
            for i in 0..want {
                sample_inputs.push(batch.seq_values(i));
            }
        }
        count += b;
        seq_base += b as u64;
        masks.extend(batch_masks);
    }

    let n = count as f64;
    let (loss, metric, solved) = match cfg.task {
        TaskKind::Adding => {
            let mse = total_sq_err / n;
            (mse, mse, adding::solved(mse))
        }
        TaskKind::FreqDisc => {
            let acc = correct as f64 / n;
            (total_loss / n, acc, freqdisc::solved(acc))
        }
        TaskKind::Mnist => {
            let acc = correct as f64 / n;
            (total_loss / n, acc, false)
        }
    };
    Ok(EvalOutput {
        loss,
        metric,
        solved,
        masks,
        sample_inputs,
    })
}

/// Generate one evaluation set for a synthetic task (fresh per evaluation).
fn synthetic_eval_batches(
    cfg: &ExperimentConfig,
    root: &Rng,
    eval_idx: u64,
) -> Result<Vec<Batch>, HarnessError> {
    let mut rng = root.derive(TAG_EVAL_BASE + eval_idx);
    let mut remaining = cfg.eval_size;
    let mut batches = Vec::new();
    while remaining > 0 {
        let b = remaining.min(EVAL_CHUNK);
        let batch = match cfg.task {
            TaskKind::Adding => adding::generate(&mut rng, b),
            TaskKind::FreqDisc => freqdisc::generate(&mut rng, b, cfg.t_s)?,
            TaskKind::Mnist => unreachable!("mnist evaluates on fixed splits"),
        };
        batches.push(batch);
        remaining -= b;
    }
    Ok(batches)
}

fn mnist_eval_batches(data: &mnist::MnistData, split: mnist::Split, indices: &[u32]) -> Vec<Batch> {
    indices
        .chunks(EVAL_CHUNK)
        .map(|chunk| data.batch(split, chunk))
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let root = Rng::from_seed(cfg.seed);
    let mut model = build_model(cfg, &root)?;
    let mut adam = Adam::new(cfg.adam());
    let cost = cost_model(cfg, &model.params);

    let result = match cfg.task {
        TaskKind::Adding | TaskKind::FreqDisc => {
            run_synthetic(cfg, &root, &mut model, &mut adam)
        }
        TaskKind::Mnist => run_mnist(cfg, &root, &mut model, &mut adam),
    };

    match result {
        Ok(TrainOutput {
            curve,
            final_eval,
            train_batches,
            data_checksums,
        }) => {
            let t_len = cfg.seq_len();
            let (updates, fracs) = RunMetrics::update_stats(&final_eval.masks, t_len);
            let flops = flops_per_sequence(&cost, updates.mean, t_len)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let per_step_usage = per_step_usage(&final_eval.masks, t_len);
            let sample_masks: Vec<Vec<bool>> = final_eval
                .masks
                .iter()
                .take(cfg.mask_samples)
                .cloned()
                .collect();
            let usage = usage_records(&sample_masks, &final_eval.sample_inputs)
                .map_err(|e| HarnessError::Config(e.to_string()))?;

            let metrics = RunMetrics {
                curve: curve
                    .iter()
                    .map(|p| EvalPoint {
                        step: p.step,
                        loss: p.loss,
                        metric: p.metric,
                        update_frac: p.update_frac,
                        solved: p.solved,
                    })
                    .collect(),
                final_loss: final_eval.loss,
                final_metric: final_eval.metric,
                solved: final_eval.solved,
                updates_mean: updates.mean,
                updates_std_per_seq: updates.std,
                update_frac_mean: fracs.mean,
                update_frac_std_per_seq: fracs.std,
                flops_per_seq: flops,
                seq_len: t_len,
                sample_masks,
                per_step_usage,
            };
            let record = ResultRecord {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: cfg.hash(),
                config: cfg.canonical(),
                seed: cfg.seed,
                status: "ok".into(),
                solved: metrics.solved,
                metric_kind: match cfg.task {
                    TaskKind::Adding => "mse",
                    _ => "accuracy",
                }
                .into(),
                final_loss: metrics.final_loss,
                final_metric: metrics.final_metric,
                seq_len: t_len,
                updates_mean: metrics.updates_mean,
                updates_std_per_seq: metrics.updates_std_per_seq,
                update_frac_mean: metrics.update_frac_mean,
                update_frac_std_per_seq: metrics.update_frac_std_per_seq,
                flops_per_seq: metrics.flops_per_seq,
                train_batches,
                curve,
                data_checksums,
            };
            Ok(RunOutcome {
                record,
                metrics,
                final_masks: final_eval.masks,
                usage,
                store: model.store,
                params: model.params,
            })
        }
        Err(TrainFailure {
            error,
            curve,
            train_batches,
        }) => {
            // Numeric divergence: flag a partial record so callers can file
            // the failure; other errors pass through.
            if let HarnessError::Numeric { message, .. } = error {
                let record = ResultRecord {
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    config_hash: cfg.hash(),
                    config: cfg.canonical(),
                    seed: cfg.seed,
                    status: "failed_numeric".into(),
                    solved: false,
                    metric_kind: match cfg.task {
                        TaskKind::Adding => "mse",
                        _ => "accuracy",
                    }
                    .into(),
                    final_loss: f64::NAN,
                    final_metric: f64::NAN,
                    seq_len: cfg.seq_len(),
                    updates_mean: 0.0,
                    updates_std_per_seq: 0.0,
                    update_frac_mean: 0.0,
                    update_frac_std_per_seq: 0.0,
                    flops_per_seq: 0.0,
                    train_batches,
                    curve,
                    data_checksums: Vec::new(),
                };
                Err(HarnessError::Numeric {
                    message,
                    partial: Some(Box::new(record)),
                })
            } else {
                Err(error)
            }
        }
    }
}

struct TrainOutput {
    curve: Vec<CurvePoint>,
    final_eval: EvalOutput,
    train_batches: u64,
    data_checksums: Vec<(String, String)>,
}

struct TrainFailure {
    error: HarnessError,
    curve: Vec<CurvePoint>,
    train_batches: u64,
}

fn run_synthetic(
    cfg: &ExperimentConfig,
    root: &Rng,
    model: &mut Model,
    adam: &mut Adam,
) -> Result<TrainOutput, TrainFailure> {
    let mut data_rng = root.derive(TAG_TRAIN);
    let mut roll_rng = root.derive(TAG_ROLLOUT);
    let mut curve = Vec::new();
    let mut eval_idx = 0u64;
    let mut consecutive_solved = 0u32;
    let mut executed = 0u64;
    let started = Instant::now();

    let fail = |e: HarnessError, curve: &[CurvePoint], executed: u64| TrainFailure {
        error: e,
        curve: curve.to_vec(),
        train_batches: executed,
    };

    for bi in 0..cfg.max_batches {
        let batch = match cfg.task {
            TaskKind::Adding => adding::generate(&mut data_rng, cfg.batch_size),
            TaskKind::FreqDisc => {
                match freqdisc::generate(&mut data_rng, cfg.batch_size, cfg.t_s) {
                    Ok(b) => b,
                    Err(e) => return Err(fail(e.into(), &curve, executed)),
                }
            }
            TaskKind::Mnist => unreachable!(),
        };
        let train_loss = match train_step(cfg, model, adam, &batch, &mut roll_rng) {
            Ok(l) => l,
            Err(e) => return Err(fail(e, &curve, executed)),
        };
        executed += 1;

        if (bi + 1) % cfg.eval_every == 0 {
            let batches = match synthetic_eval_batches(cfg, root, eval_idx) {
                Ok(b) => b,
                Err(e) => return Err(fail(e, &curve, executed)),
            };
            let ev = match evaluate(cfg, model, root, eval_idx, &batches) {
                Ok(ev) => ev,
                Err(e) => return Err(fail(e, &curve, executed)),
            };
            eval_idx += 1;
            let (_, fracs) = RunMetrics::update_stats(&ev.masks, cfg.seq_len());
            eprintln!(
                "[{} seed={}] batch {} train_loss {:.6} eval {} {:.6} update_frac {:.3} ({:.1}s)",
                cfg.label,
                cfg.seed,
                bi + 1,
                train_loss,
                if cfg.task == TaskKind::Adding { "mse" } else { "acc" },
                ev.metric,
                fracs.mean,
                started.elapsed().as_secs_f64(),
            );
            curve.push(CurvePoint {
                step: bi + 1,
                loss: ev.loss,
                metric: ev.metric,
                update_frac: fracs.mean,
                solved: ev.solved,
            });
            if ev.solved {
                consecutive_solved += 1;
            } else {
                consecutive_solved = 0;
            }
            if cfg.early_exit && consecutive_solved >= cfg.early_exit_evals {
                break;
            }
        }
    }

    let batches = synthetic_eval_batches(cfg, root, eval_idx)
        .map_err(|e| fail(e, &curve, executed))?;
    let final_eval = evaluate(cfg, model, root, eval_idx, &batches)
        .map_err(|e| fail(e, &curve, executed))?;
    Ok(TrainOutput {
        curve,
        final_eval,
        train_batches: executed,
        data_checksums: Vec::new(),
    })
}

fn run_mnist(
    cfg: &ExperimentConfig,
    root: &Rng,
    model: &mut Model,
    adam: &mut Adam,
) -> Result<TrainOutput, TrainFailure> {
    let fail = |e: HarnessError, curve: &[CurvePoint], executed: u64| TrainFailure {
        error: e,
        curve: curve.to_vec(),
        train_batches: executed,
    };
    let mut curve = Vec::new();
    let mut executed = 0u64;

    let dir = match cfg.resolved_mnist_dir() {
        Some(d) => d,
        None => {
            return Err(fail(
                HarnessError::Data(format!(
                    "mnist_dir not set and {} is unset",
                    crate::config::DATA_DIR_ENV
                )),
                &curve,
                0,
            ))
        }
    };
    let data = match mnist::MnistData::load(&dir) {
        Ok(d) => d,
        Err(e) => return Err(fail(e.into(), &curve, 0)),
    };
    for (name, sum) in &data.checksums {
        eprintln!("[{} seed={}] {name} sha256 {sum}", cfg.label, cfg.seed);
    }

    let train_inds: Vec<u32> = match cfg.mnist_profile {
        MnistProfile::Desk => data.desk_subset(cfg.desk_train),
        MnistProfile::Full => data.train_indices.clone(),
    };
    let val_subset: Vec<u32> = data.val_indices
        [..cfg.eval_subset.min(data.val_indices.len())]
        .to_vec();

    let mut shuffle_rng = root.derive(TAG_TRAIN);
    let mut roll_rng = root.derive(TAG_ROLLOUT);
    let mut order = train_inds;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut steps = 0u32;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(mnist::Split::Pool, chunk);
            let l = match train_step(cfg, model, adam, &batch, &mut roll_rng) {
                Ok(l) => l,
                Err(e) => return Err(fail(e, &curve, executed)),
            };
            epoch_loss += l;
            steps += 1;
            executed += 1;
        }
        let batches = mnist_eval_batches(&data, mnist::Split::Pool, &val_subset);
        let ev = match evaluate(cfg, model, root, epoch as u64, &batches) {
            Ok(ev) => ev,
            Err(e) => return Err(fail(e, &curve, executed)),
        };
        let (_, fracs) = RunMetrics::update_stats(&ev.masks, mnist::SEQ_LEN);
        eprintln!(
            "[{} seed={}] epoch {} train_loss {:.4} val_acc {:.4} update_frac {:.3} ({:.1}s)",
            cfg.label,
            cfg.seed,
            epoch + 1,
            epoch_loss / steps.max(1) as f64,
            ev.metric,
            fracs.mean,
            started.elapsed().as_secs_f64(),
        );
        curve.push(CurvePoint {
            step: (epoch + 1) as u64,
            loss: ev.loss,
            metric: ev.metric,
            update_frac: fracs.mean,
            solved: ev.solved,
        });
    }

    // Final evaluation on the full test set.
    let test_indices: Vec<u32> = (0..data.test_len() as u32).collect();
    let batches = mnist_eval_batches(&data, mnist::Split::Test, &test_indices);
    let final_eval = evaluate(cfg, model, root, u64::from(cfg.epochs) + 1, &batches)
        .map_err(|e| fail(e, &curve, executed))?;
    Ok(TrainOutput {
        curve,
        final_eval,
        train_batches: executed,
        data_checksums: data.checksums.clone(),
    })
}

fn per_step_usage(masks: &[Vec<bool>], t_len: usize) -> Vec<f64> {
    let mut usage = vec![0.0; t_len];
    for mask in masks {
        for (u, &m) in usage.iter_mut().zip(mask) {
            if m {
                *u += 1.0;
            }
        }
    }
    let n = masks.len().max(1) as f64;
    for u in &mut usage {
        *u /= n;
    }
    usage
}

/// Run and write all artifacts under `out_dir/label/seed<k>/`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(RunOutcome, PathBuf), HarnessError> {
    let dir = cfg
        .out_dir
        .join(&cfg.label)
        .join(format!("seed{}", cfg.seed));
    match run_experiment(cfg) {
        Ok(outcome) => {
            crate::emit::write_run(&dir, cfg.task, &outcome.record, &outcome.usage)?;
            skiprnn::checkpoint::save(
                &dir.join("checkpoint.skrn"),
                &outcome.store,
                cfg.skip_policy(),
            )
            .map_err(|e| HarnessError::Io(e.to_string()))?;
            Ok((outcome, dir))
        }
        Err(HarnessError::Numeric { message, partial }) => {
            if let Some(record) = &partial {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| HarnessError::Io(e.to_string()))?;
                std::fs::write(dir.join("record.json"), record.to_json())
                    .map_err(|e| HarnessError::Io(e.to_string()))?;
            }
            Err(HarnessError::Numeric { message, partial })
        }
        Err(e) => Err(e),
    }
}

/// Aggregated table row over the seeds of one configuration.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub runs: u32,
    pub solved_count: usize,
    /// True when any seed failed; statistics then cover the finished seeds.
    pub incomplete: bool,
    pub metric: Summary,
    pub update_frac: Summary,
    pub updates: Summary,
    pub flops: Summary,
}

/// Execute `runs` seeds per configuration (seed, seed+1, ...), in parallel,
/// and aggregate each configuration's finished runs.
pub fn run_table(configs: &[ExperimentConfig], runs: u32) -> Result<Vec<TableRow>, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::Config("runs must be >= 1".into()));
    }
    let jobs: Vec<(usize, ExperimentConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(ci, cfg)| {
            (0..runs).map(move |k| {
                let mut c = cfg.clone();
                c.seed = cfg.seed + u64::from(k);
                (ci, c)
            })
        })
        .collect();
    let results: Vec<(usize, Result<RunOutcome, HarnessError>)> = jobs
        .into_par_iter()
        .map(|(ci, cfg)| (ci, run_experiment(&cfg)))
        .collect();

    let mut rows = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        let mut metrics = Vec::new();
        let mut failed = 0u32;
        for (rci, res) in &results {
            if *rci != ci {
                continue;
            }
            match res {
                Ok(out) => metrics.push(out.metrics.clone()),
                Err(_) => failed += 1,
            }
        }
        if metrics.is_empty() {
            rows.push(TableRow {
                label: cfg.label.clone(),
                runs,
                solved_count: 0,
                incomplete: true,
                metric: Summary { mean: f64::NAN, std: f64::NAN },
                update_frac: Summary { mean: f64::NAN, std: f64::NAN },
                updates: Summary { mean: f64::NAN, std: f64::NAN },
                flops: Summary { mean: f64::NAN, std: f64::NAN },
            });
            continue;
        }
        let agg = skiprnn::metrics::aggregate_runs(&metrics)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        rows.push(TableRow {
            label: cfg.label.clone(),
            runs,
            solved_count: agg.solved_count,
            incomplete: failed > 0,
            metric: agg.metric,
            update_frac: agg.update_frac,
            updates: agg.updates,
            flops: agg.flops,
        });
    }
    Ok(rows)
}

pub const TABLE_HEADER: &str = "label,runs,solved,incomplete,metric_mean,metric_std,update_frac_mean,update_frac_std,updates_mean,updates_std,flops_mean,flops_std";

pub fn table_csv(rows: &[TableRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.runs,
            r.solved_count,
            r.incomplete,
            r.metric.mean,
            r.metric.std,
            r.update_frac.mean,
            r.update_frac.std,
            r.updates.mean,
            r.updates.std,
            r.flops.mean,
            r.flops.std,
        );
    }
    out
}
