use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::synth::ArteryClass;

/// Which artery classes may touch each other in a tree. Symmetric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnatomyTable {
    allowed: [[bool; 5]; 5],
}

impl Default for AnatomyTable {
    fn default() -> Self {
        Self::new(false)
    }
}

impl AnatomyTable {
    /// The left-coronary table. `lad_lcx_contact` additionally allows a LAD
    /// segment to touch a LCX segment directly.
    pub fn new(lad_lcx_contact: bool) -> Self {
        use ArteryClass::*;
        let mut table = Self {
            allowed: [[false; 5]; 5],
        };
        let pairs = [
            (Lma, Lad),
            (Lma, Lcx),
            (Lad, Lad),
            (Lad, D),
            (Lcx, Lcx),
            (Lcx, Om),
            (D, D),
            (Om, Om),
        ];
        for (a, b) in pairs {
            table.allow(a, b);
        }
        if lad_lcx_contact {
            table.allow(Lad, Lcx);
        }
        table
    }

    fn allow(&mut self, a: ArteryClass, b: ArteryClass) {
        self.allowed[a.index()][b.index()] = true;
        self.allowed[b.index()][a.index()] = true;
    }

    pub fn allows(&self, a: ArteryClass, b: ArteryClass) -> bool {
        self.allowed[a.index()][b.index()]
    }

    pub fn neighbors_of(&self, class: ArteryClass) -> Vec<ArteryClass> {
        ArteryClass::ALL
            .into_iter()
            .filter(|&c| self.allows(class, c))
            .collect()
    }
}

/// Per-node fraction of anatomically consistent neighbor pairings.
///
/// A node with no neighbors scores 1. An unresolved node scores 0, and an
/// unresolved neighbor counts as an inconsistent pairing.
pub fn structural_weight(
    adjacency: &[Vec<usize>],
    predicted: &[Option<ArteryClass>],
    table: &AnatomyTable,
) -> Vec<f64> {
    adjacency
        .iter()
        .zip(predicted)
        .map(|(nbrs, class)| {
            let Some(class) = *class else { return 0.0 };
            if nbrs.is_empty() {
                return 1.0;
            }
            let consistent = nbrs
                .iter()
                .filter(|&&j| predicted[j].is_some_and(|other| table.allows(class, other)))
                .count();
            if consistent == nbrs.len() {
                1.0
            } else {
                consistent as f64 / nbrs.len() as f64
            }
        })
        .collect()
}
