//! `condcl`: train, evaluate, benchmark and inspect condition-aware
//! sentence encoders from the command line.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error,
//! 3 runtime abort. Set `CONDCL_LOG=info` or `debug` for progress output.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use condcl_core::{Mode, Task};

use crate::config::{EncoderSpec, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "condcl", version, about = "Condition-aware sentence embeddings via generated projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a composer and write `model.ckpt` and `report.json` under --out.
    Train(TrainArgs),
    /// Score a checkpoint on C-STS or link-prediction data; prints metric JSON.
    Eval(EvalArgs),
    /// Replay a request stream through bi, tri and hyper caches; prints TSV.
    BenchCache(BenchArgs),
    /// Embedding-space analyses of a trained checkpoint.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Train and evaluate low-rank models for nk = nh / d over divisors d.
    SweepRank(SweepArgs),
    /// Compare analytic and numeric gradients of both losses.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset with its embedding store.
    #[command(subcommand)]
    MakeSynthetic(SyntheticCommand),
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// K-means impurity of sentence embeddings before and after projection.
    Clusters(ClustersArgs),
    /// Variance of per-condition operator norms against the Hadamard baseline.
    Frobenius(FrobeniusArgs),
}

#[derive(Subcommand)]
enum SyntheticCommand {
    Csts(SynthCstsArgs),
    Kg(SynthKgArgs),
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    nh: Option<usize>,
    #[arg(long)]
    nk: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
struct Inputs {
    /// JSONL embedding store (`{"text":…,"vector":[…]}` per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// store | hashing | mlp
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Csts,
    Kgc,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Csts => Task::Csts,
            TaskArg::Kgc => Task::Kgc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Seen,
    Unseen,
    Overall,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Training data: C-STS JSONL or triple TSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training data; defines seen conditions and, for KGC, the filter set.
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "overall")]
    split: Split,
    /// KGC: rank tails only instead of averaging tail and head queries.
    #[arg(long)]
    tail_only: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// Request stream as `sentence<TAB>condition` lines.
    #[arg(long, conflicts_with_all = ["sentences", "conditions"])]
    workload: Option<PathBuf>,
    /// Generate the full sentence × condition cross instead.
    #[arg(long, default_value_t = 10)]
    sentences: usize,
    #[arg(long, default_value_t = 5)]
    conditions: usize,
    /// Shuffle the generated cross with --seed.
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Comma-separated subset of bi, tri, hyper-full, hyper-lowrank.
    #[arg(long, value_delimiter = ',', default_value = "bi,tri,hyper-full,hyper-lowrank")]
    arms: Vec<String>,
}

#[derive(Args, Debug)]
struct ClustersArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Points as `sentence<TAB>condition` lines.
    #[arg(long, conflicts_with = "data")]
    points: Option<PathBuf>,
    /// C-STS JSONL; its distinct sentences are dealt round-robin to its conditions.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Points per condition when building from --data.
    #[arg(long, default_value_t = 20)]
    per_condition: usize,
    /// Clusters; defaults to the number of conditions.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct FrobeniusArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// One condition per line.
    #[arg(long, conflicts_with = "data")]
    conditions: Option<PathBuf>,
    /// C-STS JSONL; its distinct conditions are used.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8,12,16,24")]
    divisors: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    #[arg(long, default_value_t = 16)]
    nh: usize,
    #[arg(long, default_value_t = 4)]
    nk: usize,
}

#[derive(Args, Debug)]
struct SynthCstsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    nh: usize,
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    #[arg(long, default_value_t = 4)]
    conditions: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Args, Debug)]
struct SynthKgArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    nh: usize,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
}

/// Loads `--config` and applies the shared flags on top.
fn resolve(common: &Common, inputs: &Inputs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.train.mode = m;
    }
    if let Some(nh) = common.nh {
        cfg.train.nh = nh;
    }
    if let Some(nk) = common.nk {
        cfg.train.nk = Some(nk);
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(e) = &inputs.embeddings {
        cfg.embeddings = Some(e.clone());
        cfg.encoder = EncoderSpec::Store;
    }
    if let Some(kind) = &inputs.encoder {
        cfg.encoder = EncoderSpec::parse(kind, inputs.encoder_seed)?;
    }
    Ok(cfg)
}

fn set_task(cfg: &mut RunConfig, task: Option<TaskArg>) {
    if let Some(t) = task {
        cfg.train.task = t.into();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            set_task(&mut cfg, a.task);
            if let Some(d) = a.data {
                cfg.train_data = Some(d);
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            commands::train(&cfg)
        }
        Command::Eval(a) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            set_task(&mut cfg, a.task);
            if let Some(c) = a.checkpoint {
                cfg.checkpoint = Some(c);
            }
            if let Some(d) = a.data {
                cfg.eval_data = Some(d);
            }
            if let Some(d) = a.train_data {
                cfg.train_data = Some(d);
            }
            commands::eval(&cfg, a.split, !a.tail_only)
        }
        Command::BenchCache(a) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            if a.inputs.encoder.is_none() && a.inputs.embeddings.is_none() && a.common.config.is_none() {
                cfg.encoder = EncoderSpec::Hashing { seed: a.inputs.encoder_seed };
            }
            let stream = commands::Stream {
                workload: a.workload,
                sentences: a.sentences,
                conditions: a.conditions,
                shuffle: a.shuffle,
            };
            commands::bench_cache(&cfg, &stream, &a.arms, a.repetitions)
        }
        Command::Analyze(AnalyzeCommand::Clusters(a)) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            if let Some(c) = a.checkpoint {
                cfg.checkpoint = Some(c);
            }
            let source = match (a.points, a.data.or(cfg.eval_data.clone())) {
                (Some(p), _) => commands::PointSource::Tsv(p),
                (None, Some(d)) => commands::PointSource::Csts(d, a.per_condition),
                (None, None) => return Err(CliError::usage("analyze clusters needs --points or --data")),
            };
            commands::clusters(&cfg, &source, a.k)
        }
        Command::Analyze(AnalyzeCommand::Frobenius(a)) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            if let Some(c) = a.checkpoint {
                cfg.checkpoint = Some(c);
            }
            let source = match (a.conditions, a.data.or(cfg.eval_data.clone())) {
                (Some(p), _) => commands::ConditionSource::Lines(p),
                (None, Some(d)) => commands::ConditionSource::Csts(d),
                (None, None) => return Err(CliError::usage("analyze frobenius needs --conditions or --data")),
            };
            commands::frobenius(&cfg, &source)
        }
        Command::SweepRank(a) => {
            let mut cfg = resolve(&a.common, &a.inputs)?;
            set_task(&mut cfg, a.task);
            if let Some(d) = a.data {
                cfg.train_data = Some(d);
            }
            if let Some(d) = a.eval_data {
                cfg.eval_data = Some(d);
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            commands::sweep_rank(&cfg, &a.divisors)
        }
        Command::Gradcheck(a) => commands::gradcheck(&condcl_core::trainer::GradCheckOptions {
            nh: a.nh,
            nk: a.nk,
            epsilon: a.epsilon,
            seed: a.seed,
            probes: a.probes,
            ..Default::default()
        }),
        Command::MakeSynthetic(SyntheticCommand::Csts(a)) => {
            commands::make_csts(&a.out, a.pairs, a.conditions, a.nh, a.seed, a.test_fraction)
        }
        Command::MakeSynthetic(SyntheticCommand::Kg(a)) => {
            commands::make_kg(&a.out, a.entities, a.relations, a.nh, a.seed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONDCL_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("condcl: {e}");
            e.exit_code()
        }
    }
}
