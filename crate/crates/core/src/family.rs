//! Common interface the homotopy flow needs from an approximating family.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::gaussian::GaussianParams;
use crate::linalg::vech_len;
use crate::mixture::MixtureParams;

/// A parameterized density family the flow can move through: flat parameter
/// vector in and out, log-density, score and seeded sampling.
///
/// Values are immutable; `with_flat_params` builds a new instance from `self`
/// as the structural template (dimension, component count) and fails if the
/// candidate vector violates a family invariant, which is what the flow's
/// step-halving safeguard keys on.
pub trait VariationalFamily: Clone + Send + Sync {
    /// Sample-space dimension.
    fn dim(&self) -> usize;

    /// Flat parameter vector length.
    fn param_len(&self) -> usize;

    /// The current parameters as a flat vector (the flow state layout).
    fn flat_params(&self) -> Vec<f64>;

    /// Rebuilds parameters from a flat vector of the same shape as `self`.
    fn with_flat_params(&self, flat: &[f64]) -> Result<Self>;

    fn logpdf(&self, point: &[f64]) -> Result<f64>;

    fn score(&self, point: &[f64]) -> Result<Vec<f64>>;

    /// `count x dim` matrix of draws, one per row, deterministic in `seed`.
    fn sample(&self, count: usize, seed: u64) -> DMatrix<f64>;

    /// Flat file record for this family (see the serialization contracts of
    /// the concrete types).
    fn to_record(&self) -> Vec<f64>;
}

impl VariationalFamily for GaussianParams {
    fn dim(&self) -> usize {
        GaussianParams::dim(self)
    }

    fn param_len(&self) -> usize {
        GaussianParams::param_len(self)
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut flat = self.mean().as_slice().to_vec();
        flat.extend_from_slice(self.chol_vech().as_slice());
        flat
    }

    fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let d = GaussianParams::dim(self);
        if flat.len() != GaussianParams::param_len(self) {
            return Err(crate::error::Error::DimensionMismatch {
                context: "GaussianParams::with_flat_params",
                expected: GaussianParams::param_len(self),
                got: flat.len(),
            });
        }
        GaussianParams::new(flat[..d].to_vec(), flat[d..].to_vec())
    }

    fn logpdf(&self, point: &[f64]) -> Result<f64> {
        GaussianParams::logpdf(self, point)
    }

    fn score(&self, point: &[f64]) -> Result<Vec<f64>> {
        GaussianParams::score(self, point)
    }

    fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        GaussianParams::sample(self, count, seed)
    }

    fn to_record(&self) -> Vec<f64> {
        GaussianParams::to_record(self)
    }
}

impl VariationalFamily for MixtureParams {
    fn dim(&self) -> usize {
        MixtureParams::dim(self)
    }

    fn param_len(&self) -> usize {
        MixtureParams::param_len(self)
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_len());
        for c in self.components() {
            flat.extend_from_slice(c.mean().as_slice());
            flat.extend_from_slice(c.chol_vech().as_slice());
        }
        flat.extend_from_slice(self.lambdas());
        flat
    }

    fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let m = self.n_components();
        let d = MixtureParams::dim(self);
        if flat.len() != self.param_len() {
            return Err(crate::error::Error::DimensionMismatch {
                context: "MixtureParams::with_flat_params",
                expected: self.param_len(),
                got: flat.len(),
            });
        }
        let plen = d + vech_len(d);
        let mut comps = Vec::with_capacity(m);
        for i in 0..m {
            let block = &flat[i * plen..(i + 1) * plen];
            comps.push(GaussianParams::new(block[..d].to_vec(), block[d..].to_vec())?);
        }
        MixtureParams::new(comps, flat[m * plen..].to_vec())
    }

    fn logpdf(&self, point: &[f64]) -> Result<f64> {
        MixtureParams::logpdf(self, point)
    }

    fn score(&self, point: &[f64]) -> Result<Vec<f64>> {
        MixtureParams::score(self, point)
    }

    fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        MixtureParams::sample(self, count, seed)
    }

    fn to_record(&self) -> Vec<f64> {
        MixtureParams::to_record(self)
    }
}
