use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::anatomy::{structural_weight, AnatomyTable};
use super::hungarian::{hungarian, CostTransform};
use super::metrics::{evaluate, MetricsReport};
use crate::assignment::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::hypergraph::{build_assoc, AssocConfig, IndividualHypergraph};
use crate::net::ModelParams;
use crate::synth::ArteryClass;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Acceptance threshold on structural weight times confidence.
    pub threshold: f64,
    /// Confidence-gated early termination. When off, every same-view
    /// template is compared and the labels are majority-voted.
    pub use_uq: bool,
    pub cost: CostTransform,
    pub anatomy: AnatomyTable,
    pub assoc: AssocConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            use_uq: true,
            cost: CostTransform::default(),
            anatomy: AnatomyTable::default(),
            assoc: AssocConfig::default(),
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if !(1..=6).contains(&self.assoc.max_alignments) {
            return Err(Error::InvalidConfig("max_alignments must be in 1..=6".into()));
        }
        Ok(())
    }
}

/// Result of matching a test graph against one template, oriented with test
/// nodes as rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatch {
    pub assignment: AssignmentMatrix,
    pub match_prob: DenseMatrix,
    /// Confidence at each test node's matched cell; 0 when unmatched.
    pub confidence: Vec<f64>,
    /// Template class transferred to each test node; `None` when unmatched.
    pub labels: Vec<Option<ArteryClass>>,
    pub flops: u64,
}

/// Forward pass, Hungarian discretization and label transfer.
pub fn match_pair(
    test: &IndividualHypergraph,
    template: &IndividualHypergraph,
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<PairMatch> {
    let assoc = build_assoc(test, template, cfg.assoc)?;
    let (mut match_prob, mut conf, flops) = params.predict(&assoc)?;
    if assoc.swapped() {
        match_prob = match_prob.transpose();
        conf = conf.transpose();
    }
    let assignment = hungarian(&cfg.cost.apply(&match_prob))?;
    let confidence = (0..test.node_count())
        .map(|i| assignment.col_of(i).map_or(0.0, |a| conf.get(i, a)))
        .collect();
    let labels = (0..test.node_count())
        .map(|i| assignment.col_of(i).map(|a| template.labels()[a]))
        .collect();
    Ok(PairMatch {
        assignment,
        match_prob,
        confidence,
        labels,
        flops,
    })
}

/// Final decision for one test node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeVerdict {
    pub node: usize,
    pub class: Option<ArteryClass>,
    pub structural_weight: f64,
    pub confidence: f64,
    /// Accepted by the gate rather than settled by the final vote.
    pub accepted: bool,
    /// Index into the template slice of the template the label came from.
    pub template: Option<usize>,
}

impl NodeVerdict {
    pub fn score(&self) -> f64 {
        self.structural_weight * self.confidence
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub labels: Vec<Option<ArteryClass>>,
    pub verdicts: Vec<NodeVerdict>,
    pub templates_compared: usize,
    pub same_view_templates: usize,
    pub flops: u64,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    class: ArteryClass,
    weight: f64,
    confidence: f64,
    template: usize,
}

/// Labels `test` by matching it against same-view templates in order.
///
/// With `use_uq`, a node is accepted as soon as a template gives it a label
/// with structural weight 1 or with structural weight times confidence at
/// least the threshold; accepted nodes are never revisited, and the loop
/// stops once every node is accepted. Nodes still open afterwards, and all
/// nodes when `use_uq` is off, take a vote over every compared template.
pub fn infer_with_uq(
    test: &IndividualHypergraph,
    templates: &[IndividualHypergraph],
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<Inference> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(Error::EmptyTemplates);
    }
    let same_view: Vec<usize> = (0..templates.len()).filter(|&t| templates[t].view == test.view).collect();
    if same_view.is_empty() {
        return Err(Error::NoSameViewTemplate(test.view.clone()));
    }

    let n = test.node_count();
    let mut verdicts: Vec<Option<NodeVerdict>> = vec![None; n];
    let mut candidates: Vec<Vec<Candidate>> = vec![Vec::new(); n];
    let mut compared = 0;
    let mut flops = 0;
    for &t in &same_view {
        compared += 1;
        let m = match_pair(test, &templates[t], params, cfg)?;
        flops += m.flops;
        let weights = structural_weight(test.adjacency(), &m.labels, &cfg.anatomy);
        for i in 0..n {
            if verdicts[i].is_some() {
                continue;
            }
            let Some(class) = m.labels[i] else { continue };
            let (te, conf) = (weights[i], m.confidence[i]);
            if cfg.use_uq && (te == 1.0 || te * conf >= cfg.threshold) {
                verdicts[i] = Some(NodeVerdict {
                    node: i,
                    class: Some(class),
                    structural_weight: te,
                    confidence: conf,
                    accepted: true,
                    template: Some(t),
                });
            } else {
                candidates[i].push(Candidate {
                    class,
                    weight: te * conf,
                    confidence: conf,
                    template: t,
                });
            }
        }
        if cfg.use_uq && verdicts.iter().all(Option::is_some) {
            break;
        }
    }

    let verdicts: Vec<NodeVerdict> = verdicts
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.unwrap_or_else(|| vote(i, &candidates[i], cfg.use_uq)))
        .collect();
    Ok(Inference {
        labels: verdicts.iter().map(|v| v.class).collect(),
        verdicts,
        templates_compared: compared,
        same_view_templates: same_view.len(),
        flops,
    })
}

/// Class with the largest weighted vote (`weighted`) or the most votes,
/// the other quantity breaking ties, then the lower class index.
fn vote(node: usize, candidates: &[Candidate], weighted: bool) -> NodeVerdict {
    let mut weight = [0.0f64; 5];
    let mut count = [0usize; 5];
    for c in candidates {
        weight[c.class.index()] += c.weight;
        count[c.class.index()] += 1;
    }
    let key = |k: usize| if weighted { (weight[k], count[k] as f64) } else { (count[k] as f64, weight[k]) };
    let mut winner: Option<usize> = None;
    for k in 0..5 {
        if count[k] > 0 && winner.is_none_or(|w| key(k) > key(w)) {
            winner = Some(k);
        }
    }
    let Some(k) = winner else {
        return NodeVerdict {
            node,
            class: None,
            structural_weight: 0.0,
            confidence: 0.0,
            accepted: false,
            template: None,
        };
    };
    let class = ArteryClass::ALL[k];
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| c.class == class) {
        if best.is_none_or(|b| c.weight > b.weight) {
            best = Some(c);
        }
    }
    let best = best.expect("winning class has a vote");
    NodeVerdict {
        node,
        class: Some(class),
        structural_weight: if best.confidence > 0.0 { best.weight / best.confidence } else { 0.0 },
        confidence: best.confidence,
        accepted: false,
        template: Some(best.template),
    }
}

/// Inference over a test set and the resulting metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub inferences: Vec<Inference>,
    pub metrics: MetricsReport,
}

impl Evaluation {
    pub fn mean_templates_compared(&self) -> f64 {
        mean(self.inferences.iter().map(|i| i.templates_compared as f64))
    }

    pub fn mean_same_view_templates(&self) -> f64 {
        mean(self.inferences.iter().map(|i| i.same_view_templates as f64))
    }

    pub fn mean_flops(&self) -> f64 {
        mean(self.inferences.iter().map(|i| i.flops as f64))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Scores a set of already computed inferences against their trees.
pub fn score(tests: &[IndividualHypergraph], inferences: Vec<Inference>) -> Result<Evaluation> {
    let predicted: Vec<Option<ArteryClass>> = inferences.iter().flat_map(|i| i.labels.iter().copied()).collect();
    let truth: Vec<ArteryClass> = tests.iter().flat_map(|t| t.labels().iter().copied()).collect();
    let metrics = evaluate(&predicted, &truth)?;
    Ok(Evaluation { inferences, metrics })
}

/// Runs [`infer_with_uq`] on every test graph in order and scores the labels.
pub fn evaluate_set(
    tests: &[IndividualHypergraph],
    templates: &[IndividualHypergraph],
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<Evaluation> {
    let inferences = tests
        .iter()
        .map(|t| infer_with_uq(t, templates, params, cfg))
        .collect::<Result<Vec<_>>>()?;
    score(tests, inferences)
}
