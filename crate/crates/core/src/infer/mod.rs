//! Test-time labeling: Hungarian discretization of match probabilities,
//! anatomical consistency weights, confidence-gated template matching and
//! evaluation metrics.

mod ablation;
mod anatomy;
mod hungarian;
mod matching;
mod metrics;

pub use ablation::{ablation_run, AblationRow};
pub use anatomy::{structural_weight, AnatomyTable};
pub use hungarian::{assignment_cost, hungarian, CostTransform};
pub use matching::{
    evaluate_set, infer_with_uq, match_pair, score, Evaluation, Inference, InferConfig, NodeVerdict, PairMatch,
};
pub use metrics::{evaluate, ClassMetrics, MetricsReport};
