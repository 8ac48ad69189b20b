//! Files, reports and commands around [`hagmn_core`].
//!
//! - [`io`]: JSON tree documents and the dataset manifest.
//! - [`checkpoint`]: binary model + optimizer checkpoints.
//! - [`report`]: training log, verdict log, benchmark and ablation outputs.
//! - [`manifest`]: per-command run manifests with SHA-256 digests.
//! - [`pipeline`]: `generate`, `train`, `eval`, `bench` and `ablate`.

pub mod checkpoint;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
