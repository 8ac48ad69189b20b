use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hagmn::io::read_json;
use hagmn::pipeline::{self, AblateOptions, EvalOptions, GenerateOptions, TrainOptions};
use hagmn::Result;
use hagmn_core::infer::{AnatomyTable, CostTransform, InferConfig};
use hagmn_core::synth::GeneratorConfig;
use hagmn_core::train::TrainConfig;

/// Hypergraph matching for vessel-tree labeling: generate data, train,
/// evaluate, benchmark and ablate.
#[derive(Parser)]
#[command(name = "hagmn", version)]
struct Cli {
    /// Log filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus and its folds.
    Generate(GenerateArgs),
    /// Train a model on one fold.
    Train(TrainArgs),
    /// Label a fold's test trees and score them.
    Eval(EvalArgs),
    /// Compare inference cost with and without the confidence gate.
    Bench(BenchArgs),
    /// Train and score the EGT / VGT / UQ ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 121)]
    feature_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "CRA,CAU")]
    views: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    template_fraction: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// JSON file with generator settings.
    #[arg(long)]
    generator: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory or its dataset.json.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    /// JSON file with a training configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs without improvement before stopping; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    /// Pairs per epoch; 0 means one per training tree.
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    #[arg(long)]
    max_alignments: Option<usize>,
    #[arg(long)]
    no_egt: bool,
    #[arg(long)]
    no_vgt: bool,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        set(&mut c.epochs, self.epochs);
        set(&mut c.learning_rate, self.lr);
        set(&mut c.alpha, self.alpha);
        set(&mut c.hidden, self.hidden);
        set(&mut c.rounds, self.rounds);
        set(&mut c.seed, self.seed);
        set(&mut c.patience, self.patience);
        set(&mut c.pairs_per_epoch, self.pairs_per_epoch);
        set(&mut c.max_alignments, self.max_alignments);
        c.use_egt &= !self.no_egt;
        c.use_vgt &= !self.no_vgt;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    NegLog,
    Complement,
}

#[derive(Args)]
struct InferFlags {
    /// Confidence threshold for accepting a node.
    #[arg(long, default_value_t = 0.4)]
    tc: f64,
    /// Assignment cost derived from match probabilities.
    #[arg(long, value_enum, default_value = "neg-log")]
    cost: Cost,
    /// Allow LAD and LCX segments to touch in the anatomy table.
    #[arg(long)]
    lad_lcx_contact: bool,
}

impl InferFlags {
    fn resolve(&self, use_uq: bool) -> InferConfig {
        InferConfig {
            threshold: self.tc,
            use_uq,
            cost: match self.cost {
                Cost::NegLog => CostTransform::NegLog,
                Cost::Complement => CostTransform::Complement,
            },
            anatomy: AnatomyTable::new(self.lad_lcx_contact),
            ..InferConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Continue from a checkpoint; `--epochs` sets the new total.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    infer: InferFlags,
    /// Compare every same-view template and majority-vote.
    #[arg(long)]
    no_uq: bool,
    /// Also run the ablation grid, reusing the checkpoint as the full model.
    #[arg(long)]
    ablate: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    infer: InferFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    infer: InferFlags,
    /// Checkpoint to use for the full model instead of training it.
    #[arg(long)]
    full_model: Option<PathBuf>,
}

fn eval_options(data: &DataArgs, checkpoint: &Path, infer: InferConfig) -> EvalOptions {
    EvalOptions {
        dataset: data.dataset.clone(),
        fold: data.fold,
        checkpoint: checkpoint.to_path_buf(),
        out: data.out.clone(),
        infer,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let generator = match &a.generator {
                Some(p) => read_json(p)?,
                None => GeneratorConfig::default(),
            };
            pipeline::generate(&GenerateOptions {
                out: a.out,
                count: a.count,
                seed: a.seed,
                feature_dim: a.feature_dim,
                views: a.views,
                template_fraction: a.template_fraction,
                folds: a.folds,
                generator,
            })?;
        }
        Command::Train(a) => {
            let ck = pipeline::train(&TrainOptions {
                dataset: a.data.dataset,
                fold: a.data.fold,
                out: a.data.out,
                config: a.train.resolve()?,
                resume: a.resume,
                checkpoint_every: a.checkpoint_every,
            })?;
            if let Some(last) = ck.history.last() {
                println!("trained {} epochs, final loss {:.6}", last.epoch, last.loss.total);
            }
        }
        Command::Eval(a) => {
            let infer = a.infer.resolve(!a.no_uq);
            let eval = pipeline::eval(&eval_options(&a.data, &a.checkpoint, infer))?;
            print!("{}", eval.metrics.to_csv());
            println!(
                "mean templates compared: {:.3} of {:.3}",
                eval.mean_templates_compared(),
                eval.mean_same_view_templates()
            );
            if a.ablate {
                let rows = pipeline::ablate(&AblateOptions {
                    dataset: a.data.dataset,
                    fold: a.data.fold,
                    out: a.data.out,
                    train: TrainConfig::default(),
                    infer,
                    full_model: Some(a.checkpoint),
                })?;
                print!("{}", hagmn::report::ablation_csv(&rows));
            }
        }
        Command::Bench(a) => {
            let b = pipeline::bench(&eval_options(&a.data, &a.checkpoint, a.infer.resolve(true)))?;
            println!(
                "with gate: {:.3} templates, {:.1} ms per tree; without: {:.3} templates, {:.1} ms per tree",
                b.uq.mean_templates_compared, b.uq.wall_time.mean_ms, b.no_uq.mean_templates_compared, b.no_uq.wall_time.mean_ms
            );
        }
        Command::Ablate(a) => {
            let rows = pipeline::ablate(&AblateOptions {
                dataset: a.data.dataset,
                fold: a.data.fold,
                out: a.data.out,
                train: a.train.resolve()?,
                infer: a.infer.resolve(true),
                full_model: a.full_model,
            })?;
            print!("{}", hagmn::report::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

