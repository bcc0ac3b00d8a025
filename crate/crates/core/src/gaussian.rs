//! Multivariate Gaussian in the (mean, half-vectorized precision factor)
//! parameterization.
//!
//! The precision matrix is stored through its factorization `P = Rᵀ R` with
//! `R` lower triangular and positive diagonal (note: this is the reverse of
//! the common `L Lᵀ` convention; it is what makes the closed-form scores
//! below hold entrywise). The flow works on the flat parameter vector
//! `[mean; vech(R)]` with `vech` in row-major lower-triangle order
//! `R11, R21, R22, R31, ...`, which is shorter than either the moment or the
//! natural parameterization: `d + d(d+1)/2` entries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    invert_lower_triangular, lower_to_vech, reverse_cholesky, vech_index, vech_len, vech_to_lower,
};
use crate::rng::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gaussian parameters: mean vector and `vech` of the lower-triangular
/// precision factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    dim: usize,
    mean: DVector<f64>,
    chol_vech: DVector<f64>,
}

/// Moment parameterization (mean, covariance). Used for conversions,
/// oracles and reporting; the flow itself never touches it.
#[derive(Debug, Clone)]
pub struct MomentParams {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianParams {
    /// Builds parameters from a mean and the `vech` of the precision factor,
    /// checking the positivity invariant on the factor diagonal.
    pub fn new(mean: Vec<f64>, chol_vech: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if chol_vech.len() != vech_len(d) {
            return Err(Error::DimensionMismatch {
                context: "GaussianParams::new chol_vech",
                expected: vech_len(d),
                got: chol_vech.len(),
            });
        }
        for (k, &v) in chol_vech.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "non-finite precision factor entry at vech index {k}"
                )));
            }
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean entry".into()));
        }
        for i in 0..d {
            let diag = chol_vech[vech_index(i, i)];
            if diag <= 0.0 {
                return Err(Error::InvalidParams(format!(
                    "precision factor diagonal {i} is {diag} (must be > 0)"
                )));
            }
        }
        Ok(Self {
            dim: d,
            mean: DVector::from_vec(mean),
            chol_vech: DVector::from_vec(chol_vech),
        })
    }

    /// Standard normal in `d` dimensions (zero mean, identity precision).
    pub fn standard(d: usize) -> Self {
        let mut vech = vec![0.0; vech_len(d)];
        for i in 0..d {
            vech[vech_index(i, i)] = 1.0;
        }
        Self::new(vec![0.0; d], vech).expect("identity factor is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol_vech(&self) -> &DVector<f64> {
        &self.chol_vech
    }

    /// The lower-triangular precision factor `R`.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        vech_to_lower(self.dim, self.chol_vech.as_slice())
    }

    /// The precision matrix `P = Rᵀ R`.
    pub fn precision(&self) -> DMatrix<f64> {
        let r = self.r_matrix();
        r.transpose() * r
    }

    /// Total parameter count `d + d(d+1)/2`.
    pub fn param_len(&self) -> usize {
        self.dim + vech_len(self.dim)
    }

    fn check_point(&self, point: &[f64], context: &'static str) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                got: point.len(),
            });
        }
        Ok(())
    }

    /// `R (point - mean)`, the whitened residual.
    fn whitened(&self, point: &[f64]) -> DVector<f64> {
        let d = self.dim;
        let v = &self.chol_vech;
        let mut u = DVector::zeros(d);
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..=i {
                s += v[vech_index(i, j)] * (point[j] - self.mean[j]);
            }
            u[i] = s;
        }
        u
    }

    /// Log of the normalized density:
    /// `sum_i log R_ii - (d/2) log 2π - 1/2 |R (x - mean)|²`.
    pub fn logpdf(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point, "GaussianParams::logpdf")?;
        let u = self.whitened(point);
        let mut log_det_r = 0.0;
        for i in 0..self.dim {
            log_det_r += self.chol_vech[vech_index(i, i)].ln();
        }
        Ok(log_det_r - 0.5 * self.dim as f64 * LN_2PI - 0.5 * u.norm_squared())
    }

    /// Gradient of `logpdf` with respect to the flat parameters, stacked as
    /// `[mean block; vech block]`:
    ///
    /// * mean block: `Rᵀ R (x - mean)`;
    /// * vech block: `vech(diag(R)^{-1} - R (x - mean)(x - mean)ᵀ)` on the
    ///   lower-triangular positions.
    pub fn score(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point, "GaussianParams::score")?;
        let d = self.dim;
        let v = &self.chol_vech;
        let u = self.whitened(point);
        let mut out = vec![0.0; self.param_len()];
        // Mean block: Rᵀ u.
        for j in 0..d {
            let mut s = 0.0;
            for i in j..d {
                s += v[vech_index(i, j)] * u[i];
            }
            out[j] = s;
        }
        // vech block.
        for i in 0..d {
            for j in 0..=i {
                let mut g = -u[i] * (point[j] - self.mean[j]);
                if i == j {
                    g += 1.0 / v[vech_index(i, i)];
                }
                out[d + vech_index(i, j)] = g;
            }
        }
        Ok(out)
    }

    /// Draws `count` i.i.d. samples (one per row), by solving `R x = z` for
    /// standard-normal `z` and shifting by the mean. Deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let mut out = DMatrix::zeros(count, self.dim);
        let mut row = vec![0.0; self.dim];
        for k in 0..count {
            self.sample_row(&mut rng, &mut row);
            for j in 0..self.dim {
                out[(k, j)] = row[j];
            }
        }
        out
    }

    /// Draws one sample into `row` using the supplied generator.
    pub(crate) fn sample_row<R: Rng>(&self, rng: &mut R, row: &mut [f64]) {
        let d = self.dim;
        let v = &self.chol_vech;
        // Forward substitution R x = z, reusing `row` for x.
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let mut s = z;
            for j in 0..i {
                s -= v[vech_index(i, j)] * row[j];
            }
            row[i] = s / v[vech_index(i, i)];
        }
        for i in 0..d {
            row[i] += self.mean[i];
        }
    }

    /// Covariance form: `cov = (Rᵀ R)^{-1} = R^{-1} R^{-ᵀ}`.
    pub fn to_moments(&self) -> MomentParams {
        let rinv = invert_lower_triangular(&self.r_matrix());
        let cov = &rinv * rinv.transpose();
        MomentParams {
            mean: self.mean.clone(),
            covariance: cov,
        }
    }

    /// Factors the inverse covariance as `Rᵀ R`; errors if the covariance is
    /// not symmetric positive definite.
    pub fn from_moments(m: &MomentParams) -> Result<Self> {
        m.validate()?;
        let prec = m
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("covariance not positive definite".into()))?
            .inverse();
        let r = reverse_cholesky(&prec)?;
        Self::new(m.mean.as_slice().to_vec(), lower_to_vech(&r))
    }

    /// Flat numeric record `[d, mean..., chol_vech...]` used in file outputs.
    pub fn to_record(&self) -> Vec<f64> {
        let mut rec = Vec::with_capacity(1 + self.param_len());
        rec.push(self.dim as f64);
        rec.extend_from_slice(self.mean.as_slice());
        rec.extend_from_slice(self.chol_vech.as_slice());
        rec
    }

    pub fn from_record(rec: &[f64]) -> Result<Self> {
        if rec.is_empty() {
            return Err(Error::InvalidParams("empty parameter record".into()));
        }
        let d = rec[0] as usize;
        let expected = 1 + d + vech_len(d);
        if rec.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "GaussianParams::from_record",
                expected,
                got: rec.len(),
            });
        }
        Self::new(rec[1..1 + d].to_vec(), rec[1 + d..].to_vec())
    }
}

/// Conversion named as in the module contract.
pub fn moment_to_param(m: &MomentParams) -> Result<GaussianParams> {
    GaussianParams::from_moments(m)
}

/// Inverse of [`moment_to_param`] on its range.
pub fn param_to_moment(p: &GaussianParams) -> MomentParams {
    p.to_moments()
}

impl MomentParams {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = Self {
            mean: DVector::from_vec(mean),
            covariance,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "MomentParams covariance",
                expected: d,
                got: self.covariance.nrows(),
            });
        }
        let scale = self.covariance.norm().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (self.covariance[(i, j)] - self.covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParams(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if self.covariance.clone().cholesky().is_none() {
            return Err(Error::InvalidParams(
                "covariance not positive definite".into(),
            ));
        }
        Ok(())
    }
}
