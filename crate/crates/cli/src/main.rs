//! `odda`: dataset preparation, augmentation, training, noise sweeps,
//! ablation grids, and evaluation, with replayable manifests.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};

use odda_core::{ErrorKind, OddaError};

#[derive(Parser)]
#[command(name = "odda", version, about = "Denoised data augmentation for text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file (or a previous run's manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dot-path config overrides, e.g. --set train.lr=0.05
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seeds to run, e.g. --seeds 1,2,3,4,5
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory (manifest.json, report.json, table.csv, ...)
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for sweep/ablate cells (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Noise levels, e.g. --p-n 0,0.1,0.3,0.5
    #[arg(long = "p-n", value_delimiter = ',')]
    p_n: Option<Vec<f64>>,
    /// Methods to sweep, e.g. --methods eda,odda_both
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize an augmented dataset (JSONL with origin ids).
    Augment(CommonArgs),
    /// Train one method over the given seeds and report macro-F1.
    Train(CommonArgs),
    /// Methods x noise-level matrix of mean macro-F1.
    #[command(name = "sweep-noise")]
    SweepNoise(SweepArgs),
    /// Factorial grid over distillation temperature, SR coefficient, and
    /// dropout-pass count.
    Ablate(AblateArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(CommonArgs),
    /// Generate a synthetic corpus with known Bayes accuracy.
    #[command(name = "gen-synthetic")]
    GenSynthetic(CommonArgs),
}

static VERBOSITY: OnceLock<u8> = OnceLock::new();

fn verbosity() -> u8 {
    *VERBOSITY.get_or_init(|| match std::env::var("ODDA_LOG").as_deref() {
        Ok("debug") => 2,
        Ok("warn") => 0,
        _ => 1,
    })
}

pub(crate) fn log_warn(msg: &str) {
    eprintln!("[warn] {msg}");
}

pub(crate) fn log_info(msg: &str) {
    if verbosity() >= 1 {
        eprintln!("[info] {msg}");
    }
}

pub(crate) fn log_debug(msg: &str) {
    if verbosity() >= 2 {
        eprintln!("[debug] {msg}");
    }
}

const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn run(cli: Cli) -> odda_core::Result<()> {
    match cli.command {
        Command::Augment(args) => {
            let (cfg, resolved, _) = config::resolve_config(args.config.as_deref(), &args.set)?;
            commands::augment(&cfg, resolved, &args.out)
        }
        Command::GenSynthetic(args) => {
            let (cfg, resolved, _) = config::resolve_config(args.config.as_deref(), &args.set)?;
            commands::gen_synthetic(&cfg, resolved, &args.out)
        }
        Command::Eval(args) => {
            let (cfg, resolved, _) = config::resolve_config(args.config.as_deref(), &args.set)?;
            commands::eval(&cfg, resolved, &args.out)
        }
        Command::Train(args) => {
            let (cfg, resolved, manifest_seeds) =
                config::resolve_config(args.config.as_deref(), &args.set)?;
            let seeds = pick_seeds(args.seeds, manifest_seeds);
            commands::train(&cfg, resolved, &args.out, &seeds)
        }
        Command::SweepNoise(args) => {
            let (mut cfg, _, manifest_seeds) =
                config::resolve_config(args.common.config.as_deref(), &args.common.set)?;
            if let Some(p_n) = args.p_n {
                cfg.sweep.p_n_list = p_n;
            }
            if let Some(methods) = args.methods {
                cfg.sweep.methods = methods;
            }
            let resolved = serde_json::to_value(&cfg).expect("config serializes");
            let seeds = pick_seeds(args.common.seeds, manifest_seeds);
            with_pool(args.common.threads, || {
                commands::sweep_noise(&cfg, resolved, &args.common.out, &seeds)
            })
        }
        Command::Ablate(args) => {
            let (mut cfg, _, manifest_seeds) =
                config::resolve_config(args.common.config.as_deref(), &args.common.set)?;
            if let Some(taus) = args.taus {
                cfg.ablate.taus = taus;
            }
            if let Some(alphas) = args.alphas {
                cfg.ablate.alphas = alphas;
            }
            if let Some(ms) = args.ms {
                cfg.ablate.ms = ms;
            }
            let resolved = serde_json::to_value(&cfg).expect("config serializes");
            let seeds = pick_seeds(args.common.seeds, manifest_seeds);
            with_pool(args.common.threads, || {
                commands::ablate(&cfg, resolved, &args.common.out, &seeds)
            })
        }
    }
}

fn pick_seeds(flag: Option<Vec<u64>>, manifest: Option<Vec<u64>>) -> Vec<u64> {
    flag.or(manifest).unwrap_or_else(|| DEFAULT_SEEDS.to_vec())
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> odda_core::Result<T> + Send) -> odda_core::Result<T>
where
    T: Send,
{
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| OddaError::Config(format!("thread pool: {e}")))?;
            pool.install(f)
        }
        None => f(),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
            std::process::exit(code);
        }
    }
}
