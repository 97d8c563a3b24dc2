use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// A finite sample `(x_i, y_i)`; every expectation in this crate is the
/// sample mean over it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<f64>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|y| !y.is_finite()) || inputs.as_slice().iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self { inputs, labels })
    }

    /// Scalar inputs, one feature per example.
    pub fn scalar(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let inputs = Matrix::from_vec(xs.len(), 1, xs.to_vec())?;
        Self::new(inputs, ys.to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn y(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// `E‖x‖`
    pub fn mean_input_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.x(i))).sum::<f64>() / self.len() as f64
    }

    /// `max_i ‖x_i‖`
    pub fn max_input_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.x(i))).fold(0.0, f64::max)
    }

    /// Copy with the examples reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let inputs = Matrix::from_fn(self.len(), self.d_x(), |i, j| self.inputs[(perm[i], j)]);
        let labels = perm.iter().map(|&i| self.labels[i]).collect();
        Self { inputs, labels }
    }
}
