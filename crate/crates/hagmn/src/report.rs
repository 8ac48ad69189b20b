//! CSV and JSON outputs.

use std::collections::BTreeMap;
use std::fmt::Write;

use hagmn_core::hypergraph::IndividualHypergraph;
use hagmn_core::infer::{AblationRow, Inference};
use hagmn_core::train::EpochStats;
use serde::Serialize;

/// `epoch,perm_loss,tcp_loss,total,wall_time`. `wall_time` is seconds since
/// the start of the session that ran the epoch and is empty for epochs
/// restored from a checkpoint.
pub fn train_log_csv(history: &[EpochStats], wall_time: &[Option<f64>]) -> String {
    let mut out = String::from("epoch,perm_loss,tcp_loss,total,wall_time\n");
    for (k, h) in history.iter().enumerate() {
        let wall = wall_time.get(k).copied().flatten().map(|t| format!("{t:.3}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", h.epoch, h.loss.perm, h.loss.tcp, h.loss.total, wall);
    }
    out
}

/// One row per test node: tree, node, true and predicted class, structural
/// weight, confidence, whether the gate accepted it and the template used.
pub fn verdicts_csv(
    tests: &[IndividualHypergraph],
    inferences: &[Inference],
    templates: &[IndividualHypergraph],
) -> String {
    let mut out = String::from("tree,node,truth,predicted,structural_weight,confidence,accepted,template\n");
    for (t, inf) in tests.iter().zip(inferences) {
        for v in &inf.verdicts {
            let predicted = v.class.map_or("unresolved".to_string(), |c| c.to_string());
            let template = v.template.map_or("", |k| templates[k].name.as_str());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.name,
                v.node,
                t.labels()[v.node],
                predicted,
                v.structural_weight,
                v.confidence,
                v.accepted,
                template
            );
        }
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("use_egt,use_vgt,use_uq,acc,prec,rec,f1,mean_templates_compared\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.use_egt,
            r.use_vgt,
            r.use_uq,
            r.metrics.accuracy,
            r.metrics.macro_precision,
            r.metrics.macro_recall,
            r.metrics.macro_f1,
            r.mean_templates_compared
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WallTime {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Cost of one inference protocol over a test set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub use_uq: bool,
    pub threshold: f64,
    pub tests: usize,
    pub accuracy: f64,
    pub mean_templates_compared: f64,
    pub mean_same_view_templates: f64,
    /// Templates compared → number of test trees.
    pub templates_compared_histogram: BTreeMap<usize, usize>,
    /// Floating-point operations of the forward passes per test tree.
    pub mean_flops: f64,
    pub wall_time: WallTime,
}

impl BenchmarkReport {
    pub fn new(use_uq: bool, threshold: f64, accuracy: f64, inferences: &[Inference], seconds: &[f64]) -> Self {
        let n = inferences.len().max(1) as f64;
        let mut histogram = BTreeMap::new();
        for i in inferences {
            *histogram.entry(i.templates_compared).or_insert(0) += 1;
        }
        let ms: Vec<f64> = seconds.iter().map(|s| s * 1e3).collect();
        Self {
            use_uq,
            threshold,
            tests: inferences.len(),
            accuracy,
            mean_templates_compared: inferences.iter().map(|i| i.templates_compared as f64).sum::<f64>() / n,
            mean_same_view_templates: inferences.iter().map(|i| i.same_view_templates as f64).sum::<f64>() / n,
            templates_compared_histogram: histogram,
            mean_flops: inferences.iter().map(|i| i.flops as f64).sum::<f64>() / n,
            wall_time: WallTime {
                mean_ms: ms.iter().sum::<f64>() / ms.len().max(1) as f64,
                min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
                max_ms: ms.iter().copied().fold(0.0, f64::max),
            },
        }
    }
}
