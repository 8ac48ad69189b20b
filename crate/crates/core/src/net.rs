//! The matching network over an association hypergraph.
//!
//! Vertices, hyperedges and the row/column constraint elements are embedded
//! by separate MLPs. Each message-passing round then
//!
//! 1. updates every hyperedge from attention over its three vertices,
//! 2. updates every vertex from attention over its incident hyperedges and,
//!    when enabled, its row and column constraint elements,
//! 3. updates every row (column) element from the mean of its vertices.
//!
//! A decoder maps each vertex to two logits (non-match, match) and a small
//! head maps those logits to a confidence in `(0, 1)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::hypergraph::AssocGraph;
use crate::math;
use crate::tensor::{DenseMatrix, Mlp, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Node feature width.
    pub feature_dim: usize,
    /// Width of every embedding and of every MLP hidden layer.
    pub hidden: usize,
    /// Layers per MLP.
    pub depth: usize,
    /// Attention heads; must divide `hidden`.
    pub heads: usize,
    /// Message-passing rounds.
    pub rounds: usize,
    /// Share one set of round weights across all rounds.
    pub tied_rounds: bool,
    /// Score the query against the mean key and gate the mean value with a
    /// sigmoid instead of a softmax over individual neighbours.
    pub literal_attention: bool,
    pub use_egt: bool,
    pub use_vgt: bool,
    /// Let vertices attend to their row and column elements.
    pub use_constraints: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 121,
            hidden: 64,
            depth: 2,
            heads: 1,
            rounds: 2,
            tied_rounds: true,
            literal_attention: false,
            use_egt: true,
            use_vgt: true,
            use_constraints: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature_dim, hidden and depth must be positive (got {}, {}, {})",
                self.feature_dim, self.hidden, self.depth
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct RoundWeights {
    edge_query: Mlp,
    edge_key: Mlp,
    edge_value: Mlp,
    edge_update: Mlp,
    vertex_query: Mlp,
    vertex_key: Mlp,
    vertex_value: Mlp,
    vertex_update: Mlp,
    row_update: Mlp,
    col_update: Mlp,
}

/// All learnable weights plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    store: ParamStore,
    vertex_embed: Mlp,
    edge_embed: Mlp,
    row_embed: Mlp,
    col_embed: Mlp,
    rounds: Vec<RoundWeights>,
    decoder: Mlp,
    confidence: Mlp,
}

/// Embedded features of every element of an association graph.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    /// `n1·n2 x hidden`.
    pub vertices: Var,
    /// `m x hidden`.
    pub hyperedges: Var,
    /// `n1 x hidden`.
    pub rows: Var,
    /// `n2 x hidden`.
    pub cols: Var,
}

/// Output of [`neighborhood_attention`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// One row per segment.
    pub output: Var,
    /// Per-neighbour weights (one row per neighbour, one column per head).
    /// With literal attention: one gate per segment instead.
    pub weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardResult {
    /// Decoder logits, `n1·n2 x 2`, column 1 is "match".
    pub logits: Var,
    /// Softmax of the logits.
    pub probs: Var,
    /// Match probability per vertex, `n1·n2 x 1`.
    pub match_prob: Var,
    /// Predicted true-class probability per vertex, `n1·n2 x 1`.
    pub confidence: Var,
    pub n1: usize,
    pub n2: usize,
}

impl ForwardResult {
    /// Match probabilities reshaped to `n1 x n2`.
    pub fn match_matrix(&self, tape: &Tape) -> Result<DenseMatrix> {
        let v = tape.value(self.match_prob)?;
        DenseMatrix::from_vec(self.n1, self.n2, v.data().to_vec())
    }

    /// Confidences reshaped to `n1 x n2`.
    pub fn confidence_matrix(&self, tape: &Tape) -> Result<DenseMatrix> {
        let v = tape.value(self.confidence)?;
        DenseMatrix::from_vec(self.n1, self.n2, v.data().to_vec())
    }
}

/// Attention of one query per segment over that segment's neighbours.
///
/// `queries` has one row per segment; `keys` and `values` have one row per
/// candidate neighbour; `index[offsets[s]..offsets[s + 1]]` lists the
/// neighbours of segment `s`. Empty segments produce a zero row.
#[allow(clippy::too_many_arguments)]
pub fn neighborhood_attention(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    values: Var,
    index: &[usize],
    offsets: &[usize],
    heads: usize,
    literal: bool,
) -> Result<Attention> {
    let width = tape.value(queries)?.cols();
    if heads == 0 || width % heads != 0 {
        return Err(mismatch("attention", format!("heads dividing {width}"), format!("{heads}")));
    }
    let scale = 1.0 / math::sqrt((width / heads) as f64);
    let gathered_keys = tape.gather_rows(keys, index)?;
    let gathered_values = tape.gather_rows(values, index)?;
    if literal {
        let mean_key = tape.segment_mean(gathered_keys, offsets)?;
        let mean_value = tape.segment_mean(gathered_values, offsets)?;
        let scores = tape.row_dot(queries, mean_key, heads)?;
        let scores = tape.scale(scores, scale)?;
        let gate = tape.sigmoid(scores)?;
        let output = tape.scale_blocks(mean_value, gate)?;
        return Ok(Attention { output, weights: gate });
    }
    let owner: Vec<usize> = offsets
        .windows(2)
        .enumerate()
        .flat_map(|(s, w)| core::iter::repeat(s).take(w[1] - w[0]))
        .collect();
    let repeated_queries = tape.gather_rows(queries, &owner)?;
    let scores = tape.row_dot(repeated_queries, gathered_keys, heads)?;
    let scores = tape.scale(scores, scale)?;
    let weights = tape.segment_softmax(scores, offsets)?;
    let weighted = tape.scale_blocks(gathered_values, weights)?;
    let output = tape.segment_sum(weighted, offsets)?;
    Ok(Attention { output, weights })
}

impl ModelParams {
    /// Fresh Glorot-initialized weights, deterministic in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, h, depth) = (config.feature_dim, config.hidden, config.depth);
        let mut mlp = |store: &mut ParamStore, name: &str, input: usize, output: usize| {
            Mlp::new(store, name, input, h, output, depth, &mut rng)
        };
        let vertex_embed = mlp(&mut store, "vertex_embed", 2 * d, h)?;
        let edge_embed = mlp(&mut store, "edge_embed", 6 * d, h)?;
        let row_embed = mlp(&mut store, "row_embed", 1, h)?;
        let col_embed = mlp(&mut store, "col_embed", 1, h)?;
        let sets = if config.tied_rounds { 1 } else { config.rounds };
        let mut rounds = Vec::with_capacity(sets);
        for t in 0..sets {
            let name = |base: &str| -> String {
                if config.tied_rounds {
                    base.into()
                } else {
                    format!("{base}.r{t}")
                }
            };
            rounds.push(RoundWeights {
                edge_query: mlp(&mut store, &name("edge_query"), h, h)?,
                edge_key: mlp(&mut store, &name("edge_key"), h, h)?,
                edge_value: mlp(&mut store, &name("edge_value"), h, h)?,
                edge_update: mlp(&mut store, &name("edge_update"), 2 * h, h)?,
                vertex_query: mlp(&mut store, &name("vertex_query"), h, h)?,
                vertex_key: mlp(&mut store, &name("vertex_key"), h, h)?,
                vertex_value: mlp(&mut store, &name("vertex_value"), h, h)?,
                vertex_update: mlp(&mut store, &name("vertex_update"), 2 * h, h)?,
                row_update: mlp(&mut store, &name("row_update"), 2 * h, h)?,
                col_update: mlp(&mut store, &name("col_update"), 2 * h, h)?,
            });
        }
        let decoder = mlp(&mut store, "decoder", h, 2)?;
        let confidence = mlp(&mut store, "confidence", 2, 1)?;
        Ok(Self {
            config,
            store,
            vertex_embed,
            edge_embed,
            row_embed,
            col_embed,
            rounds,
            decoder,
            confidence,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn round(&self, t: usize) -> &RoundWeights {
        if self.config.tied_rounds {
            &self.rounds[0]
        } else {
            &self.rounds[t]
        }
    }

    fn check_round(&self, t: usize) -> Result<()> {
        if !self.config.tied_rounds && t >= self.rounds.len() {
            return Err(Error::InvalidConfig(format!(
                "round {t} requested but only {} are configured",
                self.rounds.len()
            )));
        }
        Ok(())
    }

    /// Embeds vertices, hyperedges and constraint elements.
    pub fn embed(&self, tape: &mut Tape, assoc: &AssocGraph) -> Result<GraphState> {
        if assoc.feature_dim() != self.config.feature_dim {
            return Err(mismatch(
                "embed",
                format!("feature width {}", self.config.feature_dim),
                format!("{}", assoc.feature_dim()),
            ));
        }
        let (n1, n2) = (assoc.n1(), assoc.n2());
        let (f1, f2) = assoc.node_features();
        let first = tape.constant(f1.clone())?;
        let second = tape.constant(f2.clone())?;

        let row_of: Vec<usize> = (0..n1 * n2).map(|v| v / n2).collect();
        let col_of: Vec<usize> = (0..n1 * n2).map(|v| v % n2).collect();
        let vertices = self
            .vertex_embed
            .forward_gathered(tape, &self.store, &[(first, &row_of), (second, &col_of)])?;

        let slots = assoc.node_slots();
        let slot_index: Vec<Vec<usize>> = (0..6).map(|s| slots.iter().map(|e| e[s]).collect()).collect();
        let blocks: Vec<(Var, &[usize])> = slot_index
            .iter()
            .enumerate()
            .map(|(s, idx)| (if s < 3 { first } else { second }, idx.as_slice()))
            .collect();
        let hyperedges = self.edge_embed.forward_gathered(tape, &self.store, &blocks)?;

        let (r0, c0) = assoc.constraint_features();
        let r0 = tape.constant(r0)?;
        let c0 = tape.constant(c0)?;
        let rows = self.row_embed.forward(tape, &self.store, r0)?;
        let cols = self.col_embed.forward(tape, &self.store, c0)?;
        Ok(GraphState {
            vertices,
            hyperedges,
            rows,
            cols,
        })
    }

    /// Hyperedge update: each hyperedge attends over its three vertices.
    /// Returns the input hyperedge features unchanged when EGT is disabled.
    pub fn egt_step(&self, tape: &mut Tape, assoc: &AssocGraph, state: &GraphState, round: usize) -> Result<Var> {
        self.check_round(round)?;
        if !self.config.use_egt || assoc.hyperedge_count() == 0 {
            return Ok(state.hyperedges);
        }
        let w = self.round(round);
        let q = w.edge_query.forward(tape, &self.store, state.hyperedges)?;
        let k = w.edge_key.forward(tape, &self.store, state.vertices)?;
        let v = w.edge_value.forward(tape, &self.store, state.vertices)?;
        let index: Vec<usize> = assoc.hyperedges().iter().flatten().copied().collect();
        let offsets: Vec<usize> = (0..=assoc.hyperedge_count()).map(|e| 3 * e).collect();
        let att = neighborhood_attention(
            tape,
            q,
            k,
            v,
            &index,
            &offsets,
            self.config.heads,
            self.config.literal_attention,
        )?;
        let joined = tape.concat_cols(state.hyperedges, att.output)?;
        w.edge_update.forward(tape, &self.store, joined)
    }

    /// Vertex update from the incident hyperedges in `state.hyperedges` (and
    /// the row/column elements when enabled). Isolated vertices receive a
    /// zero attention vector. Returns the input vertices when VGT is disabled.
    pub fn vgt_step(&self, tape: &mut Tape, assoc: &AssocGraph, state: &GraphState, round: usize) -> Result<Var> {
        self.check_round(round)?;
        if !self.config.use_vgt {
            return Ok(state.vertices);
        }
        let w = self.round(round);
        let (n1, n2, m) = (assoc.n1(), assoc.n2(), assoc.hyperedge_count());
        let sources = if self.config.use_constraints {
            tape.concat_rows(&[state.hyperedges, state.rows, state.cols])?
        } else {
            state.hyperedges
        };
        let extra = if self.config.use_constraints { 2 } else { 0 };
        let mut index = Vec::with_capacity(assoc.incident_edges().len() + extra * n1 * n2);
        let mut offsets = Vec::with_capacity(n1 * n2 + 1);
        offsets.push(0);
        for vtx in 0..n1 * n2 {
            index.extend_from_slice(assoc.incident(vtx));
            if self.config.use_constraints {
                index.push(m + vtx / n2);
                index.push(m + n1 + vtx % n2);
            }
            offsets.push(index.len());
        }
        let q = w.vertex_query.forward(tape, &self.store, state.vertices)?;
        let k = w.vertex_key.forward(tape, &self.store, sources)?;
        let v = w.vertex_value.forward(tape, &self.store, sources)?;
        let att = neighborhood_attention(
            tape,
            q,
            k,
            v,
            &index,
            &offsets,
            self.config.heads,
            self.config.literal_attention,
        )?;
        let joined = tape.concat_cols(state.vertices, att.output)?;
        w.vertex_update.forward(tape, &self.store, joined)
    }

    /// Row and column updates from the mean of their vertices in `vertices`.
    pub fn rowcol_step(
        &self,
        tape: &mut Tape,
        assoc: &AssocGraph,
        vertices: Var,
        state: &GraphState,
        round: usize,
    ) -> Result<(Var, Var)> {
        self.check_round(round)?;
        let w = self.round(round);
        let (n1, n2) = (assoc.n1(), assoc.n2());
        let row_offsets: Vec<usize> = (0..=n1).map(|i| i * n2).collect();
        let row_mean = tape.segment_mean(vertices, &row_offsets)?;
        let by_column: Vec<usize> = (0..n2).flat_map(|a| (0..n1).map(move |i| i * n2 + a)).collect();
        let col_major = tape.gather_rows(vertices, &by_column)?;
        let col_offsets: Vec<usize> = (0..=n2).map(|a| a * n1).collect();
        let col_mean = tape.segment_mean(col_major, &col_offsets)?;
        let rows = tape.concat_cols(state.rows, row_mean)?;
        let rows = w.row_update.forward(tape, &self.store, rows)?;
        let cols = tape.concat_cols(state.cols, col_mean)?;
        let cols = w.col_update.forward(tape, &self.store, cols)?;
        Ok((rows, cols))
    }

    /// Decoder and confidence head applied to vertex features.
    pub fn decode(&self, tape: &mut Tape, vertices: Var, n1: usize, n2: usize) -> Result<ForwardResult> {
        let logits = self.decoder.forward(tape, &self.store, vertices)?;
        let probs = tape.softmax_rows(logits)?;
        let match_prob = tape.column(probs, 1)?;
        let raw = self.confidence.forward(tape, &self.store, logits)?;
        let confidence = tape.sigmoid(raw)?;
        Ok(ForwardResult {
            logits,
            probs,
            match_prob,
            confidence,
            n1,
            n2,
        })
    }

    /// Full pass: embedding, `rounds` message-passing rounds, decoding.
    pub fn forward(&self, tape: &mut Tape, assoc: &AssocGraph) -> Result<ForwardResult> {
        let mut state = self.embed(tape, assoc)?;
        for t in 0..self.config.rounds {
            let hyperedges = self.egt_step(tape, assoc, &state, t)?;
            let with_edges = GraphState { hyperedges, ..state };
            let vertices = self.vgt_step(tape, assoc, &with_edges, t)?;
            let (rows, cols) = self.rowcol_step(tape, assoc, vertices, &with_edges, t)?;
            state = GraphState {
                vertices,
                hyperedges,
                rows,
                cols,
            };
        }
        self.decode(tape, state.vertices, assoc.n1(), assoc.n2())
    }

    /// Match probabilities and confidences as `n1 x n2` matrices, in the
    /// orientation of `assoc`.
    pub fn predict(&self, assoc: &AssocGraph) -> Result<(DenseMatrix, DenseMatrix, u64)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, assoc)?;
        Ok((out.match_matrix(&tape)?, out.confidence_matrix(&tape)?, tape.flops()))
    }
}
