//! Dense linear algebra with reverse-mode differentiation, MLPs and Adam.

mod adam;
mod matrix;
mod mlp;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use matrix::DenseMatrix;
pub use mlp::{glorot_uniform, Activation, Mlp};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

