//! Losses and the training loop.
//!
//! The objective for one graph pair is
//! `bce(match prob, M) + alpha * Σ (confidence - TCP)²`, where `TCP` is the
//! probability the network currently assigns to the true class of each
//! vertex when that class is "match", and zero otherwise. `TCP` is computed
//! from the forward values and enters the loss as a constant.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentMatrix;
use crate::error::{mismatch, Error, Result};
use crate::hypergraph::{build_assoc, ground_truth_assignment, AssocConfig, AssocGraph, IndividualHypergraph};
use crate::net::{ForwardResult, ModelConfig, ModelParams};
use crate::tensor::{AdamConfig, AdamState, DenseMatrix, Tape, Var};

/// Lower clamp on probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy summed over all vertices. `match_prob` is the
/// `n1·n2 x 1` column from [`ForwardResult::match_prob`].
pub fn perm_loss(tape: &mut Tape, match_prob: Var, truth: &AssignmentMatrix) -> Result<Var> {
    let target = column_target(truth);
    let shape = tape.value(match_prob)?.shape();
    if shape != target.shape() {
        return Err(mismatch("perm_loss", format!("{:?}", target.shape()), format!("{shape:?}")));
    }
    tape.bce_sum(match_prob, &target, PROB_CLAMP)
}

/// `TCP = M ⊙ p_match`: the match probability where the truth is "match",
/// zero elsewhere. Shape follows `match_prob`.
pub fn tcp_target(match_prob: &DenseMatrix, truth: &AssignmentMatrix) -> Result<DenseMatrix> {
    let n = truth.rows() * truth.cols();
    if match_prob.len() != n {
        return Err(mismatch("tcp_target", format!("{n} entries"), format!("{}", match_prob.len())));
    }
    let mut out = DenseMatrix::zeros(match_prob.rows(), match_prob.cols());
    for (i, a) in truth.pairs() {
        let k = i * truth.cols() + a;
        out.data_mut()[k] = match_prob.data()[k];
    }
    Ok(out)
}

/// `Σ (confidence - target)²`.
pub fn tcp_loss(tape: &mut Tape, confidence: Var, target: &DenseMatrix) -> Result<Var> {
    tape.squared_error_sum(confidence, target)
}

fn column_target(truth: &AssignmentMatrix) -> DenseMatrix {
    let dense = truth.to_dense();
    DenseMatrix::column_vector(dense.data())
}

/// Loss values of one pair or averaged over an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub perm: f64,
    pub tcp: f64,
    pub total: f64,
}

/// Records the full objective for one forward pass. Returns the scalar to
/// differentiate and its value breakdown.
pub fn pair_objective(
    tape: &mut Tape,
    out: &ForwardResult,
    truth: &AssignmentMatrix,
    alpha: f64,
) -> Result<(Var, LossReport)> {
    let perm = perm_loss(tape, out.match_prob, truth)?;
    let target = tcp_target(tape.value(out.match_prob)?, truth)?;
    let tcp = tcp_loss(tape, out.confidence, &target)?;
    let weighted = tape.scale(tcp, alpha)?;
    let total = tape.add(perm, weighted)?;
    let value = |tape: &Tape, v: Var| tape.value(v).map(|m| m.data()[0]);
    let report = LossReport {
        perm: value(tape, perm)?,
        tcp: value(tape, tcp)?,
        total: value(tape, total)?,
    };
    Ok((total, report))
}

/// Ground truth in the orientation of `assoc` (rows are its `n1` side).
pub fn oriented_truth(g1: &IndividualHypergraph, g2: &IndividualHypergraph, assoc: &AssocGraph) -> AssignmentMatrix {
    if assoc.swapped() {
        ground_truth_assignment(g2, g1)
    } else {
        ground_truth_assignment(g1, g2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a lower mean loss; 0 disables.
    pub patience: usize,
    /// Pairs per epoch; 0 means one per training tree.
    pub pairs_per_epoch: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub heads: usize,
    pub rounds: usize,
    pub tied_rounds: bool,
    pub literal_attention: bool,
    pub use_egt: bool,
    pub use_vgt: bool,
    pub use_constraints: bool,
    pub max_alignments: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            alpha: 0.1,
            learning_rate: 1e-4,
            epochs: 100,
            patience: 10,
            pairs_per_epoch: 0,
            seed: 0,
            feature_dim: model.feature_dim,
            hidden: model.hidden,
            depth: model.depth,
            heads: model.heads,
            rounds: model.rounds,
            tied_rounds: model.tied_rounds,
            literal_attention: model.literal_attention,
            use_egt: model.use_egt,
            use_vgt: model.use_vgt,
            use_constraints: model.use_constraints,
            max_alignments: AssocConfig::default().max_alignments,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            depth: self.depth,
            heads: self.heads,
            rounds: self.rounds,
            tied_rounds: self.tied_rounds,
            literal_attention: self.literal_attention,
            use_egt: self.use_egt,
            use_vgt: self.use_vgt,
            use_constraints: self.use_constraints,
            seed: self.seed,
        }
    }

    pub fn assoc_config(&self) -> AssocConfig {
        AssocConfig {
            max_alignments: self.max_alignments,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(1..=6).contains(&self.max_alignments) {
            return Err(Error::InvalidConfig(format!(
                "max_alignments must be in 1..=6, got {}",
                self.max_alignments
            )));
        }
        self.model_config().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's pairs.
    pub loss: LossReport,
    pub pairs: usize,
}

/// Ordered pairs `(i, j)`, `i != j`, of graphs with equal view tags.
pub fn same_view_pairs(graphs: &[IndividualHypergraph]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..graphs.len() {
        for j in 0..graphs.len() {
            if i != j && graphs[i].view == graphs[j].view {
                out.push((i, j));
            }
        }
    }
    out
}

/// Epoch-by-epoch trainer. Pair sampling for epoch `e` depends only on the
/// seed and `e`, so a resumed run draws the same pairs as an uninterrupted one.
pub struct Trainer<'a> {
    config: TrainConfig,
    graphs: &'a [IndividualHypergraph],
    pairs: Vec<(usize, usize)>,
    params: ModelParams,
    adam: AdamState,
    history: Vec<EpochStats>,
    best: f64,
    since_best: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, graphs: &'a [IndividualHypergraph]) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::new(config.model_config())?;
        let adam = AdamState::new(params.store(), config.adam_config());
        Self::resume(config, graphs, params, adam, Vec::new())
    }

    /// Continues from saved weights, optimizer state and history.
    pub fn resume(
        config: TrainConfig,
        graphs: &'a [IndividualHypergraph],
        params: ModelParams,
        mut adam: AdamState,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        config.validate()?;
        if params.config() != &config.model_config() {
            return Err(Error::InvalidConfig("checkpoint model configuration differs from the training configuration".into()));
        }
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != config.feature_dim) {
            return Err(mismatch(
                "train",
                format!("feature width {}", config.feature_dim),
                format!("{} in `{}`", g.feature_dim(), g.name),
            ));
        }
        let pairs = same_view_pairs(graphs);
        if pairs.is_empty() {
            return Err(Error::NoSameViewPair);
        }
        adam.config = config.adam_config();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for h in &history {
            if h.loss.total < best {
                best = h.loss.total;
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        Ok(Self {
            config,
            graphs,
            pairs,
            params,
            adam,
            history,
            best,
            since_best,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// True once the epoch budget is used or the loss has stalled for `patience` epochs.
    pub fn finished(&self) -> bool {
        self.history.len() >= self.config.epochs || (self.config.patience > 0 && self.since_best >= self.config.patience)
    }

    pub fn into_parts(self) -> (ModelParams, AdamState, Vec<EpochStats>) {
        (self.params, self.adam, self.history)
    }

    fn epoch_pairs(&self, epoch: usize) -> Vec<(usize, usize)> {
        let count = if self.config.pairs_per_epoch == 0 {
            self.graphs.len()
        } else {
            self.config.pairs_per_epoch
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        (0..count).map(|_| self.pairs[rng.gen_range(0..self.pairs.len())]).collect()
    }

    /// One optimizer step per sampled pair.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.history.len() + 1;
        let pairs = self.epoch_pairs(epoch);
        let mut sum = LossReport::default();
        for &(i, j) in &pairs {
            let report = self.step(i, j).map_err(|e| match e {
                Error::NonFinite(op) => Error::Diverged {
                    epoch,
                    detail: format!("non-finite value in {op} on pair ({}, {})", self.graphs[i].name, self.graphs[j].name),
                },
                other => other,
            })?;
            sum.perm += report.perm;
            sum.tcp += report.tcp;
            sum.total += report.total;
        }
        let n = pairs.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: LossReport {
                perm: sum.perm / n,
                tcp: sum.tcp / n,
                total: sum.total / n,
            },
            pairs: pairs.len(),
        };
        if !stats.loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("mean loss is {}", stats.loss.total),
            });
        }
        if stats.loss.total < self.best {
            self.best = stats.loss.total;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.history.push(stats);
        Ok(stats)
    }

    fn step(&mut self, i: usize, j: usize) -> Result<LossReport> {
        let (g1, g2) = (&self.graphs[i], &self.graphs[j]);
        let assoc = build_assoc(g1, g2, self.config.assoc_config())?;
        let truth = oriented_truth(g1, g2, &assoc);
        let mut tape = Tape::new();
        let out = self.params.forward(&mut tape, &assoc)?;
        let (loss, report) = pair_objective(&mut tape, &out, &truth, self.config.alpha)?;
        let grads = tape.backward(loss, self.params.store())?;
        self.adam.update(self.params.store_mut(), &grads)?;
        Ok(report)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub history: Vec<EpochStats>,
}

/// Trains from scratch until [`Trainer::finished`], calling `on_epoch`
/// after every epoch.
pub fn train(
    config: &TrainConfig,
    graphs: &[IndividualHypergraph],
    mut on_epoch: impl FnMut(&Trainer<'_>, &EpochStats),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), graphs)?;
    while !trainer.finished() {
        let stats = trainer.run_epoch()?;
        on_epoch(&trainer, &stats);
    }
    let (params, adam, history) = trainer.into_parts();
    Ok(TrainOutcome { params, adam, history })
}
