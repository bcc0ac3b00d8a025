//! Forward model interface and the simple test models.

use crate::error::{Error, Result};

/// Maps an unknown vector to a predicted data vector. Implementations must be
/// pure: concurrent calls with different inputs may run in parallel.
pub trait ForwardModel: Sync {
    /// Length of the unknown vector.
    fn input_dim(&self) -> usize;

    /// Length of the predicted data vector.
    fn output_len(&self) -> usize;

    fn apply(&self, input: &[f64]) -> Result<Vec<f64>>;

    fn check_input(&self, input: &[f64], context: &'static str) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }
}

/// Dense linear model `x -> A x`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// Row-major `rows x cols`.
    pub matrix: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl LinearModel {
    pub fn new(rows: usize, cols: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "LinearModel::new",
                expected: rows * cols,
                got: matrix.len(),
            });
        }
        Ok(Self { matrix, rows, cols })
    }

    /// 1D scalar model `x -> a x`.
    pub fn scalar(a: f64) -> Self {
        Self { matrix: vec![a], rows: 1, cols: 1 }
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input, "LinearModel::apply")?;
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self.matrix[i * self.cols + j] * input[j];
            }
            out[i] = s;
        }
        Ok(out)
    }
}

/// A model with no observations; its misfit is identically zero, which makes
/// the prior the exact fixed point of the flow. Used in tests.
#[derive(Debug, Clone)]
pub struct ZeroModel {
    pub input_dim: usize,
}

impl ForwardModel for ZeroModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_len(&self) -> usize {
        0
    }

    fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input, "ZeroModel::apply")?;
        Ok(Vec::new())
    }
}
