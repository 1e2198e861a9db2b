//! Flat key=value experiment configuration with command-line overrides.
//!
//! A config file is a sequence of `key = value` lines ('#' starts a
//! comment). Every run resolves to a fully explicit canonical form whose
//! SHA-256 hash identifies the configuration in result records.

use crate::HarnessError;
use skiprnn::cells::{Binarizer, CellKind, PolicyKind, SkipPolicy};
use skiprnn::objectives::{AdamConfig, BudgetSpec};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

pub const DATA_DIR_ENV: &str = "SKIPRNN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Adding,
    FreqDisc,
    Mnist,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Adding => "adding",
            TaskKind::FreqDisc => "freqdisc",
            TaskKind::Mnist => "mnist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistProfile {
    /// The published protocol: all 55k training images, 600 epochs.
    Full,
    /// Desk-scale variant: a fixed 2,000-image subset for fewer epochs.
    Desk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub task: TaskKind,
    pub cell: CellKind,
    pub policy: PolicyKind,
    pub binarizer: Binarizer,
    pub budget: BudgetSpec,
    pub hidden: Vec<usize>,
    /// "all" or "last".
    pub gate_layers_last_only: bool,
    pub t_s: f64,
    pub batch_size: usize,
    pub max_batches: u64,
    pub epochs: u32,
    pub mnist_profile: MnistProfile,
    pub mnist_dir: Option<PathBuf>,
    pub desk_train: usize,
    pub eval_every: u64,
    pub eval_size: usize,
    pub eval_subset: usize,
    pub early_exit: bool,
    pub early_exit_evals: u32,
    pub mask_samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
}

impl ExperimentConfig {
    /// Spec defaults for everything but the task, which has no default.
    fn defaults(task: TaskKind) -> Self {
        ExperimentConfig {
            label: String::new(),
            task,
            cell: CellKind::Lstm,
            policy: PolicyKind::AlwaysUpdate,
            binarizer: Binarizer::Deterministic,
            budget: BudgetSpec::None,
            hidden: vec![110],
            gate_layers_last_only: false,
            t_s: 1.0,
            batch_size: 256,
            max_batches: match task {
                TaskKind::Adding => 60_000,
                TaskKind::FreqDisc => 30_000,
                TaskKind::Mnist => 0,
            },
            epochs: match task {
                TaskKind::Mnist => 100,
                _ => 0,
            },
            mnist_profile: MnistProfile::Desk,
            mnist_dir: None,
            desk_train: 2_000,
            eval_every: 250,
            eval_size: 10_000,
            eval_subset: 500,
            early_exit: !matches!(task, TaskKind::Mnist),
            early_exit_evals: 5,
            mask_samples: 20,
            seed: 1,
            out_dir: PathBuf::from("runs"),
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip: 1.0,
        }
    }

    pub fn parse(text: &str) -> Result<(Self, Vec<String>), HarnessError> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if pairs.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(HarnessError::Config(format!("duplicate key '{key}'")));
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<(Self, Vec<String>), HarnessError> {
        let err = |msg: String| HarnessError::Config(msg);
        let task = match pairs.get("task").map(String::as_str) {
            Some("adding") => TaskKind::Adding,
            Some("freqdisc") => TaskKind::FreqDisc,
            Some("mnist") => TaskKind::Mnist,
            Some(other) => return Err(err(format!("unknown task '{other}'"))),
            None => return Err(err("missing required key 'task'".into())),
        };
        let mut cfg = Self::defaults(task);
        let mut warnings = Vec::new();
        let mut policy_key: Option<String> = None;
        let mut lambda: Option<f64> = None;
        let mut p_skip: Option<f64> = None;
        let mut budget_kind: Option<String> = None;
        let mut budget_target: Option<f64> = None;
        let mut budget_weight: Option<f64> = None;

        for (key, value) in &pairs {
            match key.as_str() {
                "task" => {}
                "label" => cfg.label = value.clone(),
                "cell" => {
                    cfg.cell = match value.as_str() {
                        "lstm" => CellKind::Lstm,
                        "gru" => CellKind::Gru,
                        other => return Err(err(format!("unknown cell '{other}'"))),
                    }
                }
                "policy" => policy_key = Some(value.clone()),
                "lambda" => lambda = Some(parse_f64(key, value)?),
                "p_skip" => p_skip = Some(parse_f64(key, value)?),
                "budget" => budget_kind = Some(value.clone()),
                "budget_target" => budget_target = Some(parse_f64(key, value)?),
                "budget_weight" => budget_weight = Some(parse_f64(key, value)?),
                "binarizer" => {
                    cfg.binarizer = match value.as_str() {
                        "deterministic" => Binarizer::Deterministic,
                        "bernoulli" => Binarizer::Bernoulli,
                        other => return Err(err(format!("unknown binarizer '{other}'"))),
                    }
                }
                "hidden" => {
                    cfg.hidden = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(format!("hidden: {e}")))?;
                }
                "gate_layers" => {
                    cfg.gate_layers_last_only = match value.as_str() {
                        "all" => false,
                        "last" => true,
                        other => return Err(err(format!("gate_layers must be all|last, got '{other}'"))),
                    }
                }
                "t_s" => cfg.t_s = parse_f64(key, value)?,
                "batch_size" => cfg.batch_size = parse_usize(key, value)?,
                "max_batches" => cfg.max_batches = parse_u64(key, value)?,
                "epochs" => cfg.epochs = parse_u64(key, value)? as u32,
                "mnist_profile" => {
                    cfg.mnist_profile = match value.as_str() {
                        "full" => MnistProfile::Full,
                        "desk" => MnistProfile::Desk,
                        other => return Err(err(format!("unknown mnist profile '{other}'"))),
                    }
                }
                "mnist_dir" => cfg.mnist_dir = Some(PathBuf::from(value)),
                "desk_train" => cfg.desk_train = parse_usize(key, value)?,
                "eval_every" => cfg.eval_every = parse_u64(key, value)?,
                "eval_size" => cfg.eval_size = parse_usize(key, value)?,
                "eval_subset" => cfg.eval_subset = parse_usize(key, value)?,
                "early_exit" => cfg.early_exit = parse_bool(key, value)?,
                "early_exit_evals" => cfg.early_exit_evals = parse_u64(key, value)? as u32,
                "mask_samples" => cfg.mask_samples = parse_usize(key, value)?,
                "seed" => cfg.seed = parse_u64(key, value)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "lr" => cfg.lr = parse_f64(key, value)?,
                "beta1" => cfg.beta1 = parse_f64(key, value)?,
                "beta2" => cfg.beta2 = parse_f64(key, value)?,
                "epsilon" => cfg.epsilon = parse_f64(key, value)?,
                "clip" => cfg.clip = parse_f64(key, value)?,
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }

        // Exactly one policy, with only its own auxiliary keys.
        let policy_name = policy_key.ok_or_else(|| err("missing required key 'policy'".into()))?;
        cfg.policy = match policy_name.as_str() {
            "dense" => {
                if lambda.is_some() || p_skip.is_some() || budget_kind.is_some() {
                    return Err(err("dense policy takes no lambda/p_skip/budget keys".into()));
                }
                PolicyKind::AlwaysUpdate
            }
            "random" => {
                if lambda.is_some() || budget_kind.is_some() {
                    return Err(err("random policy takes no lambda/budget keys".into()));
                }
                let p = p_skip.ok_or_else(|| err("random policy requires p_skip".into()))?;
                if !(0.0..1.0).contains(&p) {
                    return Err(err(format!("p_skip must lie in [0, 1), got {p}")));
                }
                PolicyKind::Random { p_skip: p }
            }
            "learned" => {
                if p_skip.is_some() {
                    return Err(err("learned policy takes no p_skip".into()));
                }
                let kind = budget_kind.as_deref().unwrap_or("cost_per_sample");
                cfg.budget = match kind {
                    "cost_per_sample" => {
                        if budget_target.is_some() || budget_weight.is_some() {
                            return Err(err(
                                "cost_per_sample takes lambda, not target/weight".into()
                            ));
                        }
                        BudgetSpec::CostPerSample {
                            lambda: lambda.unwrap_or(0.0),
                        }
                    }
                    "l1_target" | "l2_target" => {
                        if lambda.is_some() {
                            return Err(err("target budgets take target/weight, not lambda".into()));
                        }
                        let target = budget_target
                            .ok_or_else(|| err("target budget requires budget_target".into()))?;
                        let weight = budget_weight
                            .ok_or_else(|| err("target budget requires budget_weight".into()))?;
                        if kind == "l1_target" {
                            BudgetSpec::L1Target { target, weight }
                        } else {
                            BudgetSpec::L2Target { target, weight }
                        }
                    }
                    other => return Err(err(format!("unknown budget kind '{other}'"))),
                };
                PolicyKind::Learned
            }
            other => return Err(err(format!("unknown policy '{other}'"))),
        };

        cfg.validate()?;
        if cfg.task == TaskKind::FreqDisc
            && !skiprnn::tasks::freqdisc::PAPER_SAMPLE_PERIODS.contains(&cfg.t_s)
        {
            warnings.push(format!(
                "t_s = {} ms is outside the published sampling periods {:?}",
                cfg.t_s,
                skiprnn::tasks::freqdisc::PAPER_SAMPLE_PERIODS
            ));
        }
        if cfg.label.is_empty() {
            cfg.label = format!("{}_{}", cfg.task.as_str(), policy_name);
        }
        Ok((cfg, warnings))
    }

    pub fn apply_overrides(
        mut pairs: BTreeMap<String, String>,
        sets: &[(String, String)],
    ) -> BTreeMap<String, String> {
        for (k, v) in sets {
            pairs.insert(k.clone(), v.clone());
        }
        pairs
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(HarnessError::Config("hidden sizes must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.task == TaskKind::FreqDisc && self.batch_size % 2 != 0 {
            return Err(HarnessError::Config(
                "freqdisc batches are stratified; batch_size must be even".into(),
            ));
        }
        if !(self.t_s > 0.0) {
            return Err(HarnessError::Config("t_s must be positive".into()));
        }
        if self.task != TaskKind::Mnist && self.max_batches == 0 {
            return Err(HarnessError::Config("max_batches must be positive".into()));
        }
        if self.task == TaskKind::Mnist && self.epochs == 0 {
            return Err(HarnessError::Config("epochs must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(HarnessError::Config("eval_every must be positive".into()));
        }
        if self.lr <= 0.0 || self.clip <= 0.0 {
            return Err(HarnessError::Config("lr and clip must be positive".into()));
        }
        if let PolicyKind::Learned = self.policy {
            let seq = self.seq_len();
            self.budget
                .validate(seq)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        SkipPolicy {
            kind: self.policy,
            binarizer: self.binarizer,
        }
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        match self.task {
            TaskKind::Adding => skiprnn::tasks::adding::SEQ_LEN,
            TaskKind::FreqDisc => skiprnn::tasks::freqdisc::seq_len(self.t_s),
            TaskKind::Mnist => skiprnn::tasks::mnist::SEQ_LEN,
        }
    }

    pub fn input_size(&self) -> usize {
        match self.task {
            TaskKind::Adding => 2,
            TaskKind::FreqDisc | TaskKind::Mnist => 1,
        }
    }

    pub fn output_size(&self) -> usize {
        match self.task {
            TaskKind::Adding => 1,
            TaskKind::FreqDisc => 2,
            TaskKind::Mnist => 10,
        }
    }

    pub fn skip_policy(&self) -> SkipPolicy {
        SkipPolicy {
            kind: self.policy,
            binarizer: self.binarizer,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
            clip: Some(self.clip),
        }
    }

    /// MNIST data directory: explicit key, then the environment fallback.
    pub fn resolved_mnist_dir(&self) -> Option<PathBuf> {
        self.mnist_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }

    /// Fully explicit canonical form: every knob, sorted by key.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("label", self.label.clone());
        put("task", self.task.as_str().to_string());
        put(
            "cell",
            match self.cell {
                CellKind::Lstm => "lstm",
                CellKind::Gru => "gru",
            }
            .to_string(),
        );
        match self.policy {
            PolicyKind::AlwaysUpdate => put("policy", "dense".to_string()),
            PolicyKind::Random { p_skip } => {
                put("policy", "random".to_string());
                put("p_skip", fmt_f64(p_skip));
            }
            PolicyKind::Learned => {
                put("policy", "learned".to_string());
                match self.budget {
                    BudgetSpec::None => put("budget", "none".to_string()),
                    BudgetSpec::CostPerSample { lambda } => {
                        put("budget", "cost_per_sample".to_string());
                        put("lambda", fmt_f64(lambda));
                    }
                    BudgetSpec::L1Target { target, weight } => {
                        put("budget", "l1_target".to_string());
                        put("budget_target", fmt_f64(target));
                        put("budget_weight", fmt_f64(weight));
                    }
                    BudgetSpec::L2Target { target, weight } => {
                        put("budget", "l2_target".to_string());
                        put("budget_target", fmt_f64(target));
                        put("budget_weight", fmt_f64(weight));
                    }
                }
            }
        }
        put(
            "binarizer",
            match self.binarizer {
                Binarizer::Deterministic => "deterministic",
                Binarizer::Bernoulli => "bernoulli",
                Binarizer::Identity => "identity",
            }
            .to_string(),
        );
        put(
            "hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "gate_layers",
            if self.gate_layers_last_only { "last" } else { "all" }.to_string(),
        );
        put("t_s", fmt_f64(self.t_s));
        put("batch_size", self.batch_size.to_string());
        put("max_batches", self.max_batches.to_string());
        put("epochs", self.epochs.to_string());
        put(
            "mnist_profile",
            match self.mnist_profile {
                MnistProfile::Full => "full",
                MnistProfile::Desk => "desk",
            }
            .to_string(),
        );
        put("desk_train", self.desk_train.to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_size", self.eval_size.to_string());
        put("eval_subset", self.eval_subset.to_string());
        put("early_exit", self.early_exit.to_string());
        put("early_exit_evals", self.early_exit_evals.to_string());
        put("mask_samples", self.mask_samples.to_string());
        put("seed", self.seed.to_string());
        put("lr", fmt_f64(self.lr));
        put("beta1", fmt_f64(self.beta1));
        put("beta2", fmt_f64(self.beta2));
        put("epsilon", fmt_f64(self.epsilon));
        put("clip", fmt_f64(self.clip));
        m
    }

    /// SHA-256 over the canonical "key=value\n" lines. Output paths and
    /// data locations do not participate.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut text = String::new();
        for (k, v) in self.canonical() {
            let _ = writeln!(text, "{k}={v}");
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn fmt_f64(x: f64) -> String {
    // Shortest roundtrip representation; stable across runs.
    format!("{x}")
}

fn parse_f64(key: &str, v: &str) -> Result<f64, HarnessError> {
    v.parse()
        .map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, HarnessError> {
    v.parse()
        .map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, HarnessError> {
    v.parse()
        .map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(HarnessError::Config(format!(
            "{key}: expected true/false, got '{other}'"
        ))),
    }
}
