use clap::{Parser, Subcommand};
use skiprnn_harness::config::{ExperimentConfig, DATA_DIR_ENV};
use skiprnn_harness::runner::{run_and_write, run_table, table_csv};
use skiprnn_harness::HarnessError;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

/// Skip RNN benchmark harness.
///
/// Exit codes: 0 success, 1 invalid configuration, 2 data error,
/// 3 numeric divergence.
#[derive(Parser)]
#[command(name = "skiprnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration (optionally over several seeds).
    Run {
        /// Path to a key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Override single keys, e.g. --set lambda=1e-5.
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
        /// Comma-separated seed list; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every config in a directory for N seeds and aggregate a table.
    Table {
        #[arg(long = "config-dir")]
        config_dir: PathBuf,
        /// Seeds per configuration.
        #[arg(long)]
        runs: u32,
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate MNIST IDX files and print their checksums.
    CheckData {
        /// Directory with the four IDX files; falls back to SKIPRNN_DATA_DIR.
        #[arg(long)]
        mnist: Option<PathBuf>,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

fn load_config(
    path: &PathBuf,
    sets: &[(String, String)],
    out: &Option<PathBuf>,
) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            ))
        })?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let pairs = ExperimentConfig::apply_overrides(pairs, sets);
    let (mut cfg, warnings) = ExperimentConfig::from_pairs(pairs)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = out {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn cmd_run(
    config: PathBuf,
    set: Vec<(String, String)>,
    seeds: Vec<u64>,
    out: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let base = load_config(&config, &set, &out)?;
    let seeds = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds
    };
    let results: Vec<Result<(), HarnessError>> = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let (outcome, dir) = run_and_write(&cfg)?;
            println!(
                "{} seed={} solved={} {}={:.6} update_frac={:.4} flops={:.3e} -> {}",
                cfg.label,
                seed,
                outcome.record.solved,
                outcome.record.metric_kind,
                outcome.record.final_metric,
                outcome.record.update_frac_mean,
                outcome.record.flops_per_seq,
                dir.display()
            );
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(())
}

fn cmd_table(
    config_dir: PathBuf,
    runs: u32,
    set: Vec<(String, String)>,
    out: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&config_dir)
        .map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", config_dir.display()))
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "cfg").unwrap_or(false))
        .collect();
    paths.sort();
    let configs: Vec<ExperimentConfig> = paths
        .iter()
        .map(|p| load_config(p, &set, &out))
        .collect::<Result<_, _>>()?;
    if configs.is_empty() {
        println!("{}", table_csv(&[]));
        return Ok(());
    }
    let rows = run_table(&configs, runs)?;
    let csv = table_csv(&rows);
    print!("{csv}");
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(dir.join("table.csv"), &csv)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_check_data(mnist_dir: Option<PathBuf>) -> Result<(), HarnessError> {
    let dir = mnist_dir
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            HarnessError::Data(format!("--mnist not given and {DATA_DIR_ENV} is unset"))
        })?;
    let data = skiprnn::tasks::mnist::MnistData::load(&dir)?;
    for (name, sum) in &data.checksums {
        println!("{name}  sha256 {sum}");
    }
    println!(
        "train {} / val {} / test {}",
        data.train_indices.len(),
        data.val_indices.len(),
        data.test_len()
    );
    println!("ok");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            set,
            seeds,
            out,
        } => cmd_run(config, set, seeds, out),
        Command::Table {
            config_dir,
            runs,
            set,
            out,
        } => cmd_table(config_dir, runs, set, out),
        Command::CheckData { mnist } => cmd_check_data(mnist),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
