//! The commands behind the CLI, as library functions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hagmn_core::hypergraph::{build_individual, IndividualHypergraph};
use hagmn_core::infer::{ablation_run, infer_with_uq, score, AblationRow, Evaluation, InferConfig, Inference};
use hagmn_core::net::ModelParams;
use hagmn_core::synth::{generate_corpus, split_dataset, GeneratorConfig};
use hagmn_core::train::{TrainConfig, Trainer};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::io::{manifest_path, read_dataset, write_dataset, write_json, write_text, Dataset, DatasetManifest, DATASET_FORMAT};
use crate::manifest::RunManifest;
use crate::report::{ablation_csv, train_log_csv, verdicts_csv, BenchmarkReport};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Clone, Debug, Serialize)]
pub struct GenerateOptions {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub views: Vec<String>,
    pub template_fraction: f64,
    pub folds: usize,
    pub generator: GeneratorConfig,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            out: PathBuf::from("data"),
            count: 200,
            seed: 0,
            feature_dim: 121,
            views: vec!["CRA".into(), "CAU".into()],
            template_fraction: 0.1,
            folds: 5,
            generator: GeneratorConfig::default(),
        }
    }
}

/// Writes a synthetic corpus, its folds and a run manifest to `opts.out`.
pub fn generate(opts: &GenerateOptions) -> Result<DatasetManifest> {
    let trees = generate_corpus(opts.count, opts.seed, &opts.views, opts.feature_dim, &opts.generator)?;
    let folds = split_dataset(&trees, opts.template_fraction, opts.folds, opts.seed)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        seed: opts.seed,
        feature_dim: opts.feature_dim,
        views: opts.views.clone(),
        template_fraction: opts.template_fraction,
        generator: opts.generator.clone(),
        trees: trees.iter().map(|t| format!("trees/{}.json", t.name)).collect(),
        folds,
    };
    write_dataset(&opts.out, &manifest, &trees)?;
    let mut run = RunManifest::new("generate", opts.seed, opts);
    run.output(&manifest_path(&opts.out))?;
    for f in &manifest.trees {
        run.output(&opts.out.join(f))?;
    }
    run.write(&opts.out)?;
    log::info!("wrote {} trees and {} folds to {}", trees.len(), manifest.folds.len(), opts.out.display());
    Ok(manifest)
}

/// Hypergraphs of the template, training and test trees of one fold.
pub struct FoldGraphs {
    pub templates: Vec<IndividualHypergraph>,
    pub train: Vec<IndividualHypergraph>,
    pub test: Vec<IndividualHypergraph>,
}

pub fn fold_graphs(data: &Dataset, fold: usize) -> Result<FoldGraphs> {
    let split = data.fold(fold)?;
    let build = |idx: &[usize]| {
        idx.iter()
            .map(|&i| build_individual(&data.trees[i]).map_err(Error::from))
            .collect::<Result<Vec<_>>>()
    };
    Ok(FoldGraphs {
        templates: build(&split.templates)?,
        train: build(&split.train)?,
        test: build(&split.test)?,
    })
}

fn record_dataset_inputs(run: &mut RunManifest, dataset: &Path, data: &Dataset) -> Result<()> {
    let manifest = manifest_path(dataset);
    run.input(&manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    for f in &data.manifest.trees {
        run.input(&base.join(f))?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub dataset: PathBuf,
    pub fold: usize,
    pub out: PathBuf,
    pub config: TrainConfig,
    /// Continue from this checkpoint. Its configuration is used, with the
    /// epoch budget taken from `config`.
    pub resume: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    dataset: &'a Path,
    fold: usize,
    resume: Option<&'a Path>,
    checkpoint_every: usize,
    train: &'a TrainConfig,
}

/// Trains on one fold's training trees and writes the checkpoint, the
/// training log and a run manifest to `opts.out`.
pub fn train(opts: &TrainOptions) -> Result<Checkpoint> {
    let data = read_dataset(&opts.dataset)?;
    let graphs = fold_graphs(&data, opts.fold)?.train;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let config = TrainConfig {
                epochs: opts.config.epochs,
                ..ck.config
            };
            Trainer::resume(config, &graphs, ck.params, ck.adam, ck.history)?
        }
        None => {
            let config = TrainConfig {
                feature_dim: data.manifest.feature_dim,
                ..opts.config.clone()
            };
            Trainer::new(config, &graphs)?
        }
    };
    let config = trainer.config().clone();
    let ckpt_path = opts.out.join(CHECKPOINT_FILE);
    let log_path = opts.out.join(TRAIN_LOG_FILE);
    let mut wall: Vec<Option<f64>> = vec![None; trainer.epochs_done()];
    let start = Instant::now();
    let snapshot = |t: &Trainer<'_>| Checkpoint {
        config: t.config().clone(),
        params: t.params().clone(),
        adam: t.adam().clone(),
        history: t.history().to_vec(),
    };
    while !trainer.finished() {
        let stats = trainer.run_epoch()?;
        wall.push(Some(start.elapsed().as_secs_f64()));
        log::info!(
            "epoch {}: perm {:.4} tcp {:.4} total {:.4}",
            stats.epoch,
            stats.loss.perm,
            stats.loss.tcp,
            stats.loss.total
        );
        if opts.checkpoint_every > 0 && stats.epoch % opts.checkpoint_every == 0 {
            snapshot(&trainer).save(&ckpt_path)?;
            write_text(&log_path, &train_log_csv(trainer.history(), &wall))?;
        }
    }
    let ck = snapshot(&trainer);
    ck.save(&ckpt_path)?;
    write_text(&log_path, &train_log_csv(&ck.history, &wall))?;

    let record = TrainRecord {
        dataset: &opts.dataset,
        fold: opts.fold,
        resume: opts.resume.as_deref(),
        checkpoint_every: opts.checkpoint_every,
        train: &config,
    };
    let mut run = RunManifest::new("train", config.seed, &record);
    record_dataset_inputs(&mut run, &opts.dataset, &data)?;
    if let Some(r) = &opts.resume {
        run.input(r)?;
    }
    run.output(&ckpt_path)?;
    run.timing_output(&log_path);
    run.write(&opts.out)?;
    Ok(ck)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub dataset: PathBuf,
    pub fold: usize,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub infer: InferConfig,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    dataset: &'a Path,
    fold: usize,
    checkpoint: &'a Path,
    infer: &'a InferConfig,
}

/// Inference over every test graph, in order, with per-graph wall time.
pub fn run_inference(
    tests: &[IndividualHypergraph],
    templates: &[IndividualHypergraph],
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<(Vec<Inference>, Vec<f64>)> {
    let mut inferences = Vec::with_capacity(tests.len());
    let mut seconds = Vec::with_capacity(tests.len());
    for t in tests {
        let start = Instant::now();
        inferences.push(infer_with_uq(t, templates, params, cfg)?);
        seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((inferences, seconds))
}

fn inference_config(ck: &Checkpoint, cfg: &InferConfig) -> InferConfig {
    InferConfig {
        assoc: ck.config.assoc_config(),
        ..*cfg
    }
}

/// Labels one fold's test trees and writes the metrics, verdict log,
/// benchmark and run manifest to `opts.out`.
pub fn eval(opts: &EvalOptions) -> Result<Evaluation> {
    let data = read_dataset(&opts.dataset)?;
    let graphs = fold_graphs(&data, opts.fold)?;
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let cfg = inference_config(&ck, &opts.infer);
    let (inferences, seconds) = run_inference(&graphs.test, &graphs.templates, &ck.params, &cfg)?;
    let eval = score(&graphs.test, inferences)?;

    let metrics_path = opts.out.join(METRICS_FILE);
    let verdicts_path = opts.out.join(VERDICTS_FILE);
    let bench_path = opts.out.join(BENCHMARK_FILE);
    write_text(&metrics_path, &eval.metrics.to_csv())?;
    write_text(&verdicts_path, &verdicts_csv(&graphs.test, &eval.inferences, &graphs.templates))?;
    let bench = BenchmarkReport::new(cfg.use_uq, cfg.threshold, eval.metrics.accuracy, &eval.inferences, &seconds);
    write_json(&bench_path, &bench)?;

    let record = EvalRecord {
        dataset: &opts.dataset,
        fold: opts.fold,
        checkpoint: &opts.checkpoint,
        infer: &cfg,
    };
    let mut run = RunManifest::new("eval", ck.config.seed, &record);
    record_dataset_inputs(&mut run, &opts.dataset, &data)?;
    run.input(&opts.checkpoint)?;
    run.output(&metrics_path)?;
    run.output(&verdicts_path)?;
    run.timing_output(&bench_path);
    run.write(&opts.out)?;
    log::info!(
        "accuracy {:.4}, macro F1 {:.4}, mean templates compared {:.3} of {:.3}",
        eval.metrics.accuracy,
        eval.metrics.macro_f1,
        eval.mean_templates_compared(),
        eval.mean_same_view_templates()
    );
    Ok(eval)
}

#[derive(Clone, Debug, Serialize)]
pub struct Benchmark {
    pub uq: BenchmarkReport,
    pub no_uq: BenchmarkReport,
}

/// Runs the test fold with and without the confidence gate and writes both
/// cost reports to `benchmark.json`.
pub fn bench(opts: &EvalOptions) -> Result<Benchmark> {
    let data = read_dataset(&opts.dataset)?;
    let graphs = fold_graphs(&data, opts.fold)?;
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let mut reports = Vec::with_capacity(2);
    for use_uq in [true, false] {
        let cfg = InferConfig {
            use_uq,
            ..inference_config(&ck, &opts.infer)
        };
        let (inferences, seconds) = run_inference(&graphs.test, &graphs.templates, &ck.params, &cfg)?;
        let eval = score(&graphs.test, inferences)?;
        reports.push(BenchmarkReport::new(use_uq, cfg.threshold, eval.metrics.accuracy, &eval.inferences, &seconds));
    }
    let no_uq = reports.pop().expect("two reports");
    let uq = reports.pop().expect("two reports");
    let out = Benchmark { uq, no_uq };
    let bench_path = opts.out.join(BENCHMARK_FILE);
    write_json(&bench_path, &out)?;

    let record = EvalRecord {
        dataset: &opts.dataset,
        fold: opts.fold,
        checkpoint: &opts.checkpoint,
        infer: &opts.infer,
    };
    let mut run = RunManifest::new("bench", ck.config.seed, &record);
    record_dataset_inputs(&mut run, &opts.dataset, &data)?;
    run.input(&opts.checkpoint)?;
    run.timing_output(&bench_path);
    run.write(&opts.out)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AblateOptions {
    pub dataset: PathBuf,
    pub fold: usize,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub infer: InferConfig,
    /// Use this checkpoint for the full EGT + VGT model instead of training it.
    pub full_model: Option<PathBuf>,
}

#[derive(Serialize)]
struct AblateRecord<'a> {
    dataset: &'a Path,
    fold: usize,
    full_model: Option<&'a Path>,
    train: &'a TrainConfig,
    infer: &'a InferConfig,
}

/// Trains the EGT / VGT variants, evaluates each with and without the
/// confidence gate and writes `ablation.csv`.
pub fn ablate(opts: &AblateOptions) -> Result<Vec<AblationRow>> {
    let data = read_dataset(&opts.dataset)?;
    let graphs = fold_graphs(&data, opts.fold)?;
    let full = opts.full_model.as_deref().map(Checkpoint::load).transpose()?;
    let base = match &full {
        Some(ck) => ck.config.clone(),
        None => TrainConfig {
            feature_dim: data.manifest.feature_dim,
            ..opts.train.clone()
        },
    };
    let cfg = InferConfig {
        assoc: base.assoc_config(),
        ..opts.infer
    };
    let rows = ablation_run(&graphs.test, &graphs.templates, &cfg, |use_egt, use_vgt| {
        if let (true, true, Some(ck)) = (use_egt, use_vgt, &full) {
            return Ok(ck.params.clone());
        }
        let config = TrainConfig {
            use_egt,
            use_vgt,
            ..base.clone()
        };
        log::info!("training ablation model egt={use_egt} vgt={use_vgt}");
        let outcome = hagmn_core::train::train(&config, &graphs.train, |_, s| {
            log::debug!("egt={use_egt} vgt={use_vgt} epoch {}: total {:.4}", s.epoch, s.loss.total)
        })?;
        Ok(outcome.params)
    })?;
    let path = opts.out.join(ABLATION_FILE);
    write_text(&path, &ablation_csv(&rows))?;

    let record = AblateRecord {
        dataset: &opts.dataset,
        fold: opts.fold,
        full_model: opts.full_model.as_deref(),
        train: &base,
        infer: &cfg,
    };
    let mut run = RunManifest::new("ablate", base.seed, &record);
    record_dataset_inputs(&mut run, &opts.dataset, &data)?;
    if let Some(p) = &opts.full_model {
        run.input(p)?;
    }
    run.output(&path)?;
    run.write(&opts.out)?;
    Ok(rows)
}
