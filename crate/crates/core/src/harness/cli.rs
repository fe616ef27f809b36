//! Command-line parsing. Settings resolve as built-in defaults, then flags,
//! then the `--config` JSON file (whose values win).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::bench::{run_bench, BenchRun};
use super::{
    apply_config_file, run_evaluate, run_generate, run_train, EvaluateRun, GenerateRun, MethodName, TrainRun,
};
use crate::datamodel::GeneratorConfig;
use crate::error::Result;
use crate::metrics::MetricConfig;
use crate::trainer::reinforce::ReinforceConfig;
use crate::trainer::{TrainerConfig, LOG_CUTOFF};

#[derive(Debug, Parser)]
#[command(name = "ma4div", version, about = "Multi-agent search result diversification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a learned ranker and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Score methods on a dataset and print the comparison table.
    Evaluate(EvaluateArgs),
    /// Episodes-to-threshold and latency benchmarks.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file overriding any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub subtopics: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub coverage_rate: Option<f64>,
    #[arg(long)]
    pub signal_strength: Option<f64>,
}

impl GeneratorArgs {
    fn apply(&self, g: &mut GeneratorConfig) {
        set(&mut g.queries, self.queries);
        set(&mut g.docs, self.docs);
        set(&mut g.subtopics, self.subtopics);
        set(&mut g.embed_dim, self.embed_dim);
        set(&mut g.coverage_rate, self.coverage_rate);
        set(&mut g.signal_strength, self.signal_strength);
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "ma4div")]
    pub method: MethodName,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub updates_per_epoch: Option<usize>,
    /// Per-agent action count; defaults to the documents per query.
    #[arg(long)]
    pub actions: Option<usize>,
    /// Stop once training α-NDCG@10 reaches this value.
    #[arg(long)]
    pub stop_at: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Methods to score; repeat or comma-separate.
    #[arg(long = "method", value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodName>,
    #[arg(long, default_value_t = MetricConfig::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Cutoff used for tuning λ of MMR and xQuAD.
    #[arg(long, default_value_t = LOG_CUTOFF)]
    pub k: usize,
    /// Score only the held-out queries of this split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset file; a synthetic one is generated when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long = "method", value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodName>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub threshold_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub latency_sizes: Vec<usize>,
    #[arg(long)]
    pub latency_repeats: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn generate_run(args: &GenerateArgs) -> Result<GenerateRun> {
    let mut generator = GeneratorConfig::default();
    set(&mut generator.seed, args.common.seed);
    args.generator.apply(&mut generator);
    let run = GenerateRun {
        out: args.common.out.clone(),
        generator,
    };
    apply_config_file(run, args.common.config.as_deref())
}

pub fn train_run(args: &TrainArgs) -> Result<TrainRun> {
    let mut trainer = TrainerConfig::default();
    let mut reinforce = ReinforceConfig::default();
    set(&mut trainer.seed, args.common.seed);
    set(&mut reinforce.seed, args.common.seed);
    set(&mut trainer.alpha, args.alpha);
    set(&mut reinforce.alpha, args.alpha);
    set(&mut trainer.epochs, args.epochs);
    set(&mut reinforce.epochs, args.epochs);
    set(&mut trainer.optimizer.lr, args.lr);
    set(&mut reinforce.optimizer.lr, args.lr);
    set(&mut trainer.batch_size, args.batch_size);
    set(&mut trainer.updates_per_epoch, args.updates_per_epoch);
    if args.actions.is_some() {
        trainer.model.actions = args.actions;
    }
    trainer.stop_at = args.stop_at;
    reinforce.stop_at = args.stop_at;
    let run = TrainRun {
        dataset: args.dataset.clone(),
        out: args.common.out.clone(),
        method: args.method,
        train_fraction: args.train_fraction,
        split_seed: args.common.seed.unwrap_or(0),
        trainer,
        reinforce,
    };
    apply_config_file(run, args.common.config.as_deref())
}

pub fn evaluate_run(args: &EvaluateArgs) -> Result<EvaluateRun> {
    let seed = args.common.seed.unwrap_or(0);
    let run = EvaluateRun {
        dataset: args.dataset.clone(),
        out: args.common.out.clone(),
        checkpoint: args.checkpoint.clone(),
        methods: args.methods.clone(),
        alpha: args.alpha,
        k: args.k,
        train_fraction: args.train_fraction,
        split_seed: seed,
        seed,
    };
    apply_config_file(run, args.common.config.as_deref())
}

pub fn bench_run(args: &BenchArgs) -> Result<BenchRun> {
    let mut run = BenchRun {
        dataset: args.dataset.clone(),
        out: args.common.out.clone(),
        ..BenchRun::default()
    };
    set(&mut run.seed, args.common.seed);
    set(&mut run.alpha, args.alpha);
    set(&mut run.lr, args.lr);
    set(&mut run.max_epochs, args.max_epochs);
    set(&mut run.threshold_fraction, args.threshold_fraction);
    set(&mut run.latency_repeats, args.latency_repeats);
    if !args.methods.is_empty() {
        run.methods = args.methods.clone();
    }
    if !args.latency_sizes.is_empty() {
        run.latency_sizes = args.latency_sizes.clone();
    }
    apply_config_file(run, args.common.config.as_deref())
}

/// Runs one parsed command; returns the text printed on success.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Generate(a) => {
            let path = run_generate(&generate_run(a)?)?;
            Ok(format!("wrote {}\n", path.display()))
        }
        Command::Train(a) => {
            let summary = run_train(&train_run(a)?)?;
            let mut s = summary.table.to_text();
            s.push_str(&format!("checkpoint: {}\n", summary.checkpoint.display()));
            Ok(s)
        }
        Command::Evaluate(a) => Ok(run_evaluate(&evaluate_run(a)?)?.to_text()),
        Command::Bench(a) => Ok(run_bench(&bench_run(a)?)?.to_text()),
    }
}
