use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Binary `rows x cols` correspondence matrix with at most one 1 per row and
/// per column (one-to-one or one-to-zero). Stored sparsely as the matched
/// column of each row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    rows: usize,
    cols: usize,
    row_to_col: Vec<Option<usize>>,
}

impl AssignmentMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_to_col: vec![None; rows],
        }
    }

    /// Builds the matrix from a per-row column choice, checking that no
    /// column is used twice.
    pub fn from_row_map(cols: usize, row_to_col: Vec<Option<usize>>) -> Result<Self> {
        let mut used = vec![false; cols];
        for c in row_to_col.iter().flatten() {
            if *c >= cols || core::mem::replace(&mut used[*c], true) {
                return Err(Error::InvalidGraph(format!(
                    "assignment column {c} out of range or used twice"
                )));
            }
        }
        Ok(Self {
            rows: row_to_col.len(),
            cols,
            row_to_col,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.row_to_col[row]
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.row_to_col.iter().position(|&c| c == Some(col))
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.row_to_col[row] == Some(col)
    }

    pub fn row_map(&self) -> &[Option<usize>] {
        &self.row_to_col
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn matched_count(&self) -> usize {
        self.row_to_col.iter().flatten().count()
    }

    pub fn transpose(&self) -> Self {
        let mut t = vec![None; self.cols];
        for (r, c) in self.pairs() {
            t[c] = Some(r);
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_to_col: t,
        }
    }

    /// Dense 0/1 matrix.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c) in self.pairs() {
            m.set(r, c, 1.0);
        }
        m
    }

    /// Row and column sums are all at most one.
    pub fn is_valid(&self) -> bool {
        let mut col_sum = vec![0usize; self.cols];
        for (_, c) in self.pairs() {
            if c >= self.cols {
                return false;
            }
            col_sum[c] += 1;
        }
        col_sum.iter().all(|&s| s <= 1)
    }
}
