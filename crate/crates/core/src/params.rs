//! Parameter tensors and the per-tensor containers used for gradients,
//! importance and anchor copies.
//!
//! Tensors are stored layer by layer as `(weight, bias)` pairs. A weight
//! tensor of a dense layer has one row per output unit and one column per
//! input unit, row-major. Every container that is "shape-congruent" with a
//! network holds the same sequence of tensors, or a prefix of it when only
//! the shared (non-head) parameters are covered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub layer: usize,
    pub kind: TensorKind,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(layer: usize, kind: TensorKind, rows: usize, cols: usize) -> Self {
        Self {
            layer,
            kind,
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &ParamTensor) -> bool {
        self.layer == other.layer && self.kind == other.kind && self.rows == other.rows && self.cols == other.cols
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layer, self.kind, self.rows, self.cols)
    }
}

/// An ordered list of tensors aligned with a network's parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

/// Gradients share the parameter layout exactly.
pub type GradientRecord = ParamSet;

impl ParamSet {
    pub fn new(tensors: Vec<ParamTensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(ParamTensor::zeros_like).collect(),
        }
    }

    /// Copy of the first `count` tensors.
    pub fn prefix(&self, count: usize) -> Self {
        Self {
            tensors: self.tensors[..count].to_vec(),
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.values.iter().copied())
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.values.fill(value);
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// True when `other` holds the same tensors (same layer, kind and shape),
    /// possibly only a prefix of them when `allow_prefix` is set.
    pub fn congruent_prefix(&self, other: &ParamSet) -> bool {
        other.tensors.len() <= self.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.same_shape(b))
    }

    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len() && self.congruent_prefix(other)
    }

    pub(crate) fn check_congruent(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.congruent(other) {
            Ok(())
        } else {
            Err(Error::contract(format!("{what}: tensor shapes are not congruent")))
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in &mut t.values {
                *x *= factor;
            }
        }
    }
}
