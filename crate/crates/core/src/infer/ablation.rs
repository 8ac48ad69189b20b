use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::matching::{evaluate_set, InferConfig};
use super::metrics::MetricsReport;
use crate::error::Result;
use crate::hypergraph::IndividualHypergraph;
use crate::net::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_egt: bool,
    pub use_vgt: bool,
    pub use_uq: bool,
    pub metrics: MetricsReport,
    pub mean_templates_compared: f64,
}

/// Evaluates every EGT / VGT / UQ combination. `model_for(use_egt, use_vgt)`
/// supplies the trained parameters for each of the four architectures; each
/// model is evaluated with and without the confidence gate.
///
/// Rows are ordered by EGT, then VGT, then UQ, off before on.
pub fn ablation_run(
    tests: &[IndividualHypergraph],
    templates: &[IndividualHypergraph],
    cfg: &InferConfig,
    mut model_for: impl FnMut(bool, bool) -> Result<ModelParams>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(8);
    for use_egt in [false, true] {
        for use_vgt in [false, true] {
            let params = model_for(use_egt, use_vgt)?;
            for use_uq in [false, true] {
                let eval = evaluate_set(tests, templates, &params, &InferConfig { use_uq, ..*cfg })?;
                rows.push(AblationRow {
                    use_egt,
                    use_vgt,
                    use_uq,
                    mean_templates_compared: eval.mean_templates_compared(),
                    metrics: eval.metrics,
                });
            }
        }
    }
    Ok(rows)
}
