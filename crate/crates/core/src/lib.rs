//! Hyper association graph matching for coronary artery tree labeling.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the whole
//! numerical pipeline:
//!
//! - [`tensor`]: dense matrices, a reverse-mode tape, MLPs and Adam.
//! - [`synth`]: synthetic labeled left-coronary trees, node features and
//!   dataset splits.
//! - [`hypergraph`]: individual 3-uniform hypergraphs and the hyper
//!   association graph built from a pair of them.
//! - [`net`]: the graph-transformer forward pass over an association graph.
//! - [`train`]: permutation / confidence losses and the training loop.
//! - [`infer`]: Hungarian discretization, anatomical consistency weights,
//!   confidence-gated template matching and evaluation metrics.
//!
//! File formats, checkpoints and the command line live in the `hagmn` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod assignment;
pub mod error;
pub mod hypergraph;
pub mod infer;
mod math;
pub mod net;
pub mod synth;
pub mod tensor;
pub mod train;

pub use assignment::AssignmentMatrix;
pub use error::{Error, Result};
