use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ParamId, ParamStore, Tape, Var};
use crate::error::{mismatch, Error, Result};
use crate::math;

/// Nonlinearity applied between hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Fully connected network `x·W₁ + b₁ → act → … → x·W_L + b_L`.
///
/// The activation sits between layers only; the last layer is linear so the
/// caller decides what the output means (softmax, sigmoid, raw features).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    in_width: usize,
    out_width: usize,
    hidden: usize,
    activation: Activation,
}

/// Glorot-uniform `fan_in x fan_out` matrix, entries in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let mut m = DenseMatrix::zeros(fan_in, fan_out);
    for v in m.data_mut() {
        *v = rng.gen_range(-limit..=limit);
    }
    m
}

impl Mlp {
    /// Registers `depth` layers named `{name}.{layer}.w` / `{name}.{layer}.b`.
    /// Weights are Glorot-uniform, biases zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        hidden: usize,
        out_width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 || in_width == 0 || out_width == 0 || (depth > 1 && hidden == 0) {
            return Err(Error::InvalidConfig(format!(
                "mlp `{name}` needs positive widths and depth, got in={in_width} hidden={hidden} out={out_width} depth={depth}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { in_width } else { hidden };
            let fan_out = if l + 1 == depth { out_width } else { hidden };
            let w = store.add(&format!("{name}.{l}.w"), glorot_uniform(fan_in, fan_out, rng))?;
            let b = store.add(&format!("{name}.{l}.b"), DenseMatrix::zeros(1, fan_out))?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            in_width,
            out_width,
            hidden,
            activation: Activation::Relu,
        })
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(weight, bias)` ids per layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Evaluates the network on rows `[src₀[idx₀[r]], src₁[idx₁[r]], …]`
    /// without building that concatenation: each source is multiplied by its
    /// slice of the first weight matrix once and the products are gathered.
    pub fn forward_gathered(&self, tape: &mut Tape, store: &ParamStore, blocks: &[(Var, &[usize])]) -> Result<Var> {
        let Some(rows) = blocks.first().map(|b| b.1.len()) else {
            return Err(mismatch("mlp_forward", format!("{} input columns", self.in_width), "0"));
        };
        let mut width = 0;
        for (src, idx) in blocks {
            width += tape.value(*src)?.cols();
            if idx.len() != rows {
                return Err(mismatch("mlp_forward", format!("{rows} gathered rows"), format!("{}", idx.len())));
            }
        }
        if width != self.in_width {
            return Err(mismatch(
                "mlp_forward",
                format!("{} input columns", self.in_width),
                format!("{width}"),
            ));
        }
        let (w0, b0) = self.layers[0];
        let w = tape.param(store, w0)?;
        let mut start = 0;
        let mut pre = None;
        for (src, idx) in blocks {
            let cols = tape.value(*src)?.cols();
            let slice = tape.slice_rows(w, start, cols)?;
            start += cols;
            let projected = tape.matmul(*src, slice)?;
            let part = tape.gather_rows(projected, idx)?;
            pre = Some(match pre {
                None => part,
                Some(acc) => tape.add(acc, part)?,
            });
        }
        let b = tape.param(store, b0)?;
        let mut h = tape.add_row(pre.expect("at least one block"), b)?;
        for &(w, b) in &self.layers[1..] {
            h = match self.activation {
                Activation::Relu => tape.relu(h)?,
            };
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            let z = tape.matmul(h, wv)?;
            h = tape.add_row(z, bv)?;
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x)?.cols();
        if cols != self.in_width {
            return Err(mismatch(
                "mlp_forward",
                format!("{} input columns", self.in_width),
                format!("{cols}"),
            ));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            let z = tape.matmul(h, wv)?;
            h = tape.add_row(z, bv)?;
            if l + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }
}
