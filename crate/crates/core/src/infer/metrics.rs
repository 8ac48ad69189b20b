use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::synth::ArteryClass;

/// Scores for one artery class. `accuracy` is the fraction of this class's
/// nodes labeled correctly, i.e. equal to `recall`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ArteryClass,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

/// Per-class scores plus micro accuracy and macro precision, recall and F1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: usize,
    pub unresolved: usize,
    /// Classes that appear in neither predictions nor truth; left out of
    /// the macro averages.
    pub excluded: Vec<ArteryClass>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predicted labels against the truth. An unresolved prediction is
/// counted as wrong.
pub fn evaluate(predicted: &[Option<ArteryClass>], truth: &[ArteryClass]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(mismatch("evaluate", format!("{} labels", truth.len()), format!("{}", predicted.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let mut tp = [0usize; 5];
    let mut support = [0usize; 5];
    let mut pred_count = [0usize; 5];
    for (p, t) in predicted.iter().zip(truth) {
        support[t.index()] += 1;
        if let Some(p) = p {
            pred_count[p.index()] += 1;
            if p == t {
                tp[t.index()] += 1;
            }
        }
    }
    let mut classes = Vec::with_capacity(5);
    let mut excluded = Vec::new();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for class in ArteryClass::ALL {
        let k = class.index();
        let precision = ratio(tp[k], pred_count[k]);
        let recall = ratio(tp[k], support[k]);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support[k] == 0 && pred_count[k] == 0 {
            log::warn!("class {class} absent from predictions and truth; excluded from macro scores");
            excluded.push(class);
        } else {
            sp += precision;
            sr += recall;
            sf += f1;
        }
        classes.push(ClassMetrics {
            class,
            accuracy: recall,
            precision,
            recall,
            f1,
            support: support[k],
            predicted: pred_count[k],
        });
    }
    let present = (5 - excluded.len()) as f64;
    Ok(MetricsReport {
        classes,
        accuracy: ratio(tp.iter().sum(), truth.len()),
        macro_precision: sp / present,
        macro_recall: sr / present,
        macro_f1: sf / present,
        total: truth.len(),
        unresolved: predicted.iter().filter(|p| p.is_none()).count(),
        excluded,
    })
}

impl MetricsReport {
    pub fn class(&self, class: ArteryClass) -> &ClassMetrics {
        &self.classes[class.index()]
    }

    /// The class with the highest per-class accuracy; the earliest class
    /// wins ties.
    pub fn best_class(&self) -> ArteryClass {
        let mut best = &self.classes[0];
        for c in &self.classes[1..] {
            if c.support > 0 && (best.support == 0 || c.accuracy > best.accuracy) {
                best = c;
            }
        }
        best.class
    }

    /// One row per class and a final `weighted avg` row holding the micro
    /// accuracy and the macro precision, recall and F1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("artery,acc,prec,rec,f1,support\n");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                c.class, c.accuracy, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            out,
            "weighted avg,{:.6},{:.6},{:.6},{:.6},{}",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        out
    }
}
