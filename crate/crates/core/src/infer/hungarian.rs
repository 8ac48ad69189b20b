use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::DenseMatrix;
use crate::train::PROB_CLAMP;

/// Turns match probabilities into assignment costs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTransform {
    /// `-ln(p)` with `p` clamped away from zero.
    #[default]
    NegLog,
    /// `1 - p`.
    Complement,
}

impl CostTransform {
    pub fn apply(self, prob: &DenseMatrix) -> DenseMatrix {
        match self {
            Self::NegLog => prob.map(|p| -math::ln(p.clamp(PROB_CLAMP, 1.0))),
            Self::Complement => prob.map(|p| 1.0 - p),
        }
    }
}

/// Minimum-cost assignment of a `rows x cols` cost matrix.
///
/// The matrix is padded to a square with a constant cost one above the
/// largest entry, solved with the shortest augmenting path method, and the
/// padding is stripped again. Every row is matched when `rows <= cols`;
/// otherwise every column is. Ties go to the lowest column index.
pub fn hungarian(cost: &DenseMatrix) -> Result<AssignmentMatrix> {
    if !cost.is_finite() {
        return Err(Error::NonFinite("hungarian cost"));
    }
    let (rows, cols) = cost.shape();
    let n = rows.max(cols);
    if n == 0 {
        return Ok(AssignmentMatrix::empty(rows, cols));
    }
    let pad = cost.data().iter().copied().reduce(f64::max).unwrap_or(0.0) + 1.0;
    let at = |i: usize, j: usize| if i < rows && j < cols { cost.get(i, j) } else { pad };

    // 1-based potentials and matching; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col: Vec<Option<usize>> = vec![None; rows];
    for j in 1..=n {
        let i = row_of[j];
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    AssignmentMatrix::from_row_map(cols, row_to_col)
}

/// Sum of the costs of the matched cells.
pub fn assignment_cost(cost: &DenseMatrix, assignment: &AssignmentMatrix) -> f64 {
    assignment.pairs().map(|(r, c)| cost.get(r, c)).sum()
}
