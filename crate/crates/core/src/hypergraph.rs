//! Individual 3-uniform hypergraphs over tree segments and the association
//! hypergraph built from a pair of them.
//!
//! A hyperedge joins three segments whose induced subtree is connected: a
//! path of two edges, or a node with two of its neighbours. Each such triple
//! has exactly one node adjacent to the other two (its center), and the
//! triple is stored as `[center, u, v]` with the two leaves in feature order.
//!
//! The association graph has one vertex per node pair `(i, a)` with
//! `i` in the first graph and `a` in the second, indexed `i * n2 + a`. Each
//! pair of hyperedges contributes one association hyperedge per bijection
//! between their triples.

use core::cmp::Ordering;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentMatrix;
use crate::error::{mismatch, Error, Result};
use crate::synth::{ArteryClass, LabeledTree};
use crate::tensor::DenseMatrix;

/// The six bijections of a triple, identity first.
const ALIGNMENTS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[derive(Clone, Debug, PartialEq)]
pub struct IndividualHypergraph {
    pub name: String,
    pub view: String,
    features: DenseMatrix,
    hyperedges: Vec<[usize; 3]>,
    labels: Vec<ArteryClass>,
    ordinals: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl IndividualHypergraph {
    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// `n x d`, one row per node.
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn hyperedges(&self) -> &[[usize; 3]] {
        &self.hyperedges
    }

    pub fn labels(&self) -> &[ArteryClass] {
        &self.labels
    }

    /// Position of each node among same-class nodes, see [`LabeledTree::branch_ordinals`].
    pub fn ordinals(&self) -> &[usize] {
        &self.ordinals
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// `e_ijk = [v_i, v_j, v_k]` for every hyperedge, `n_e x 3d`.
    pub fn hyperedge_features(&self) -> DenseMatrix {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(self.hyperedges.len() * 3 * d);
        for e in &self.hyperedges {
            for &n in e {
                data.extend_from_slice(self.features.row(n));
            }
        }
        DenseMatrix::from_vec(self.hyperedges.len(), 3 * d, data).expect("width is 3d")
    }
}

/// Builds the hypergraph of a validated tree with populated features.
pub fn build_individual(tree: &LabeledTree) -> Result<IndividualHypergraph> {
    tree.validate()?;
    let d = tree.nodes.first().map_or(0, |n| n.features.len());
    if d == 0 {
        return Err(Error::InvalidGraph(format!("tree `{}` has no node features", tree.name)));
    }
    let rows: Vec<&[f64]> = tree.nodes.iter().map(|n| n.features.as_slice()).collect();
    let features = DenseMatrix::from_rows(&rows)
        .map_err(|_| Error::InvalidGraph(format!("tree `{}` has ragged feature vectors", tree.name)))?;
    if !features.is_finite() {
        return Err(Error::NonFinite("node features"));
    }
    let adjacency = tree.adjacency();
    let hyperedges = connected_triples(&adjacency, &features);
    if tree.len() < 3 {
        log::warn!("tree `{}` has {} nodes and therefore no hyperedges", tree.name, tree.len());
    }
    Ok(IndividualHypergraph {
        name: tree.name.clone(),
        view: tree.view.clone(),
        features,
        hyperedges,
        labels: tree.labels(),
        ordinals: tree.branch_ordinals(),
        adjacency,
    })
}

/// Every `[center, u, v]` with `u` and `v` adjacent to `center`. The two
/// leaves are ordered by feature vector, then id, so hyperedge embeddings
/// do not depend on how nodes are numbered.
fn connected_triples(adjacency: &[Vec<usize>], features: &DenseMatrix) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for (center, nbrs) in adjacency.iter().enumerate() {
        let mut sorted = nbrs.clone();
        sorted.sort_by(|&a, &b| leaf_order(features, a, b));
        for (k, &u) in sorted.iter().enumerate() {
            for &v in &sorted[k + 1..] {
                out.push([center, u, v]);
            }
        }
    }
    out
}

fn leaf_order(features: &DenseMatrix, a: usize, b: usize) -> Ordering {
    features
        .row(a)
        .iter()
        .zip(features.row(b))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssocConfig {
    /// Bijections generated per hyperedge pair, 1..=6, identity first.
    pub max_alignments: usize,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self { max_alignments: 6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssocGraph {
    n1: usize,
    n2: usize,
    swapped: bool,
    vertex_features: DenseMatrix,
    first_nodes: DenseMatrix,
    second_nodes: DenseMatrix,
    hyperedges: Vec<[usize; 3]>,
    node_slots: Vec<[usize; 6]>,
    incident_offsets: Vec<usize>,
    incident_edges: Vec<usize>,
}

impl AssocGraph {
    /// Rows (nodes of the smaller graph).
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// True when the arguments of [`build_assoc`] were exchanged so that `n1 <= n2`.
    pub fn swapped(&self) -> bool {
        self.swapped
    }

    pub fn vertex_count(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn vertex(&self, i: usize, a: usize) -> usize {
        i * self.n2 + a
    }

    pub fn feature_dim(&self) -> usize {
        self.first_nodes.cols()
    }

    /// `v_ia = [v_i, v_a]`, `n1·n2 x 2d`.
    pub fn vertex_features(&self) -> &DenseMatrix {
        &self.vertex_features
    }

    /// Node features of the row-side and column-side graphs.
    pub fn node_features(&self) -> (&DenseMatrix, &DenseMatrix) {
        (&self.first_nodes, &self.second_nodes)
    }

    /// Incident vertices `N_v(E)` of each association hyperedge.
    pub fn hyperedges(&self) -> &[[usize; 3]] {
        &self.hyperedges
    }

    pub fn hyperedge_count(&self) -> usize {
        self.hyperedges.len()
    }

    /// For each hyperedge the six node ids `[i, j, k, a', b', c']` making up
    /// `e = [v_i, v_j, v_k, v_a', v_b', v_c']`; the first three index the
    /// row-side graph, the last three the column-side graph.
    pub fn node_slots(&self) -> &[[usize; 6]] {
        &self.node_slots
    }

    /// `e = [e_ijk, e_a'b'c']`, `m x 6d`.
    pub fn hyperedge_features(&self) -> DenseMatrix {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(self.node_slots.len() * 6 * d);
        for slots in &self.node_slots {
            for (s, &n) in slots.iter().enumerate() {
                let src = if s < 3 { &self.first_nodes } else { &self.second_nodes };
                data.extend_from_slice(src.row(n));
            }
        }
        DenseMatrix::from_vec(self.node_slots.len(), 6 * d, data).expect("width is 6d")
    }

    /// Row and column constraint inputs, all zero.
    pub fn constraint_features(&self) -> (DenseMatrix, DenseMatrix) {
        (DenseMatrix::zeros(self.n1, 1), DenseMatrix::zeros(self.n2, 1))
    }

    /// CSR offsets into [`Self::incident_edges`], one segment per vertex.
    pub fn incident_offsets(&self) -> &[usize] {
        &self.incident_offsets
    }

    /// Hyperedge ids incident to each vertex (`N_e(V)`), ascending within a vertex.
    pub fn incident_edges(&self) -> &[usize] {
        &self.incident_edges
    }

    pub fn incident(&self, vertex: usize) -> &[usize] {
        &self.incident_edges[self.incident_offsets[vertex]..self.incident_offsets[vertex + 1]]
    }
}

/// Association hypergraph of `g1` and `g2`. If `g1` has more nodes the two
/// are exchanged and [`AssocGraph::swapped`] is set.
pub fn build_assoc(g1: &IndividualHypergraph, g2: &IndividualHypergraph, cfg: AssocConfig) -> Result<AssocGraph> {
    if !(1..=6).contains(&cfg.max_alignments) {
        return Err(Error::InvalidConfig(format!(
            "max_alignments must be in 1..=6, got {}",
            cfg.max_alignments
        )));
    }
    if g1.feature_dim() != g2.feature_dim() {
        return Err(mismatch(
            "build_assoc",
            format!("feature width {}", g1.feature_dim()),
            format!("{}", g2.feature_dim()),
        ));
    }
    if g1.node_count() == 0 || g2.node_count() == 0 {
        return Err(Error::InvalidGraph("association graph needs non-empty node sets".into()));
    }
    let swapped = g1.node_count() > g2.node_count();
    let (a, b) = if swapped { (g2, g1) } else { (g1, g2) };
    let (n1, n2, d) = (a.node_count(), b.node_count(), a.feature_dim());

    let mut vdata = Vec::with_capacity(n1 * n2 * 2 * d);
    for i in 0..n1 {
        for j in 0..n2 {
            vdata.extend_from_slice(a.features.row(i));
            vdata.extend_from_slice(b.features.row(j));
        }
    }
    let vertex_features = DenseMatrix::from_vec(n1 * n2, 2 * d, vdata)?;

    let mut hyperedges = Vec::with_capacity(6 * a.hyperedges.len() * b.hyperedges.len());
    let mut node_slots = Vec::with_capacity(hyperedges.capacity());
    for e1 in &a.hyperedges {
        for e2 in &b.hyperedges {
            for perm in ALIGNMENTS.iter().take(cfg.max_alignments) {
                let aligned = [e2[perm[0]], e2[perm[1]], e2[perm[2]]];
                hyperedges.push([
                    e1[0] * n2 + aligned[0],
                    e1[1] * n2 + aligned[1],
                    e1[2] * n2 + aligned[2],
                ]);
                node_slots.push([e1[0], e1[1], e1[2], aligned[0], aligned[1], aligned[2]]);
            }
        }
    }

    let mut counts = vec![0usize; n1 * n2 + 1];
    for e in &hyperedges {
        for &v in e {
            counts[v + 1] += 1;
        }
    }
    for k in 1..counts.len() {
        counts[k] += counts[k - 1];
    }
    let incident_offsets = counts.clone();
    let mut fill = counts;
    let mut incident_edges = vec![0; incident_offsets[n1 * n2]];
    for (id, e) in hyperedges.iter().enumerate() {
        for &v in e {
            incident_edges[fill[v]] = id;
            fill[v] += 1;
        }
    }

    Ok(AssocGraph {
        n1,
        n2,
        swapped,
        vertex_features,
        first_nodes: a.features.clone(),
        second_nodes: b.features.clone(),
        hyperedges,
        node_slots,
        incident_offsets,
        incident_edges,
    })
}

/// Ground-truth correspondence from `g1` to `g2`: nodes match when they share
/// class and branch ordinal. Unmatched nodes stay unassigned.
pub fn ground_truth_assignment(g1: &IndividualHypergraph, g2: &IndividualHypergraph) -> AssignmentMatrix {
    let map = (0..g1.node_count())
        .map(|i| {
            (0..g2.node_count()).find(|&a| g1.labels[i] == g2.labels[a] && g1.ordinals[i] == g2.ordinals[a])
        })
        .collect();
    AssignmentMatrix::from_row_map(g2.node_count(), map).expect("class and ordinal pairs are unique per tree")
}
