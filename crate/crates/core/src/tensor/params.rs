use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::DenseMatrix;
use crate::error::{mismatch, Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: &str, value: DenseMatrix) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn assign(&mut self, name: &str, value: DenseMatrix) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let current = &mut self.values[id.0];
        if current.shape() != value.shape() {
            return Err(mismatch(
                "ParamStore::assign",
                format!("{}x{}", current.rows(), current.cols()),
                format!("{}x{}", value.rows(), value.cols()),
            ));
        }
        *current = value;
        Ok(())
    }

    /// Zero matrices with the shape of every parameter.
    pub fn zeros_like(&self) -> Vec<DenseMatrix> {
        self.values
            .iter()
            .map(|v| DenseMatrix::zeros(v.rows(), v.cols()))
            .collect()
    }
}
