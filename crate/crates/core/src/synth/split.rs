use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledTree;
use crate::error::{Error, Result};
use crate::math;

/// One cross-validation fold, as indices into the corpus. The template list
/// is the same for every fold; its order is the matching order at test time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub templates: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws a template set of `round(template_fraction · N)` trees, then deals
/// the rest into `folds` test folds of near-equal size. Both steps are
/// stratified by view tag.
pub fn split_dataset(
    corpus: &[LabeledTree],
    template_fraction: f64,
    folds: usize,
    seed: u64,
) -> Result<Vec<DatasetSplit>> {
    if !(template_fraction > 0.0 && template_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "template fraction must lie in (0, 1), got {template_fraction}"
        )));
    }
    if folds == 0 {
        return Err(Error::InvalidConfig("fold count must be positive".into()));
    }
    let n = corpus.len();
    if n < folds + 1 {
        return Err(Error::InvalidConfig(format!(
            "corpus of {n} trees is too small for {folds} folds plus templates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_view: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.iter().enumerate() {
        by_view.entry(t.view.as_str()).or_default().push(i);
    }
    for members in by_view.values_mut() {
        members.shuffle(&mut rng);
    }

    let k = (math::round(template_fraction * n as f64) as usize).clamp(1, n - folds);
    let quotas = largest_remainder(&by_view.values().map(Vec::len).collect::<Vec<_>>(), k);

    let mut templates = Vec::with_capacity(k);
    let mut rest = Vec::with_capacity(n - k);
    for (members, quota) in by_view.values().zip(quotas) {
        templates.extend_from_slice(&members[..quota]);
        rest.extend_from_slice(&members[quota..]);
    }
    templates.shuffle(&mut rng);

    let mut fold_tests: Vec<Vec<usize>> = (0..folds).map(|_| Vec::new()).collect();
    for (pos, &i) in rest.iter().enumerate() {
        fold_tests[pos % folds].push(i);
    }

    Ok(fold_tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut train: Vec<usize> = rest.iter().copied().filter(|i| test.binary_search(i).is_err()).collect();
            train.sort_unstable();
            DatasetSplit {
                templates: templates.clone(),
                train,
                test,
            }
        })
        .collect())
}

/// Apportions `total` across groups in proportion to `sizes`, never exceeding a group's size.
fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * total as f64 / n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|&e| math::floor(e) as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - quotas[a] as f64, exact[b] - quotas[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - quotas.iter().sum::<usize>();
    for &g in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            left -= 1;
        }
    }
    quotas
}
