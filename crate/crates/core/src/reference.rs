//! Independent oracles used to validate the flow: the conjugate
//! linear-Gaussian posterior in closed form, dense-grid quadrature moments
//! for one and two dimensions, and a random-walk Metropolis sampler.
//!
//! These three agree with each other on conjugate problems, which is the
//! trust anchor for the flow's end-to-end tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::Potential;
use crate::gaussian::{GaussianParams, MomentParams};
use crate::rng::rng_from_seed;

/// Linear forward map with Gaussian prior and noise.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    /// Row-major `n_obs x dim` forward matrix.
    pub matrix: Vec<f64>,
    pub n_obs: usize,
    pub dim: usize,
    pub prior_mean: Vec<f64>,
    pub prior_cov: DMatrix<f64>,
    pub noise_sd: f64,
    pub data: Vec<f64>,
}

impl LinearGaussianProblem {
    pub fn validate(&self) -> Result<()> {
        if self.matrix.len() != self.n_obs * self.dim {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianProblem matrix",
                expected: self.n_obs * self.dim,
                got: self.matrix.len(),
            });
        }
        if self.data.len() != self.n_obs {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianProblem data",
                expected: self.n_obs,
                got: self.data.len(),
            });
        }
        if self.prior_mean.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianProblem prior_mean",
                expected: self.dim,
                got: self.prior_mean.len(),
            });
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidParams("noise_sd must be > 0".into()));
        }
        Ok(())
    }
}

/// Closed-form conjugate posterior:
/// `cov = (prior_cov⁻¹ + Aᵀ A / δ²)⁻¹`,
/// `mean = cov (prior_cov⁻¹ m0 + Aᵀ y / δ²)`.
pub fn linear_gaussian_posterior(p: &LinearGaussianProblem) -> Result<MomentParams> {
    p.validate()?;
    let a = DMatrix::from_row_slice(p.n_obs, p.dim, &p.matrix);
    let y = DVector::from_column_slice(&p.data);
    let m0 = DVector::from_column_slice(&p.prior_mean);
    let prior_prec = p
        .prior_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("prior covariance not positive definite".into()))?
        .inverse();
    let inv_var = 1.0 / (p.noise_sd * p.noise_sd);
    let post_prec = &prior_prec + a.transpose() * &a * inv_var;
    let post_cov = post_prec
        .cholesky()
        .ok_or_else(|| Error::Factorization("posterior precision not positive definite".into()))?
        .inverse();
    let rhs = &prior_prec * m0 + a.transpose() * y * inv_var;
    let mean = &post_cov * rhs;
    MomentParams::new(mean.as_slice().to_vec(), post_cov)
}

/// Normalized posterior moments on a tensor-trapezoid grid. Supports
/// dimensions 1 and 2 only.
#[derive(Debug, Clone)]
pub struct GridMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `log ∫ exp(-Φ) q` over the grid box.
    pub log_normalizer: f64,
}

pub fn grid_posterior_moments<P: Potential>(
    phi: &P,
    prior: &GaussianParams,
    bounds: &[(f64, f64)],
    grid_n: usize,
) -> Result<GridMoments> {
    let d = prior.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension { dim: d, context: "grid_posterior_moments" });
    }
    if bounds.len() != d {
        return Err(Error::DimensionMismatch {
            context: "grid_posterior_moments bounds",
            expected: d,
            got: bounds.len(),
        });
    }
    if grid_n < 2 {
        return Err(Error::InvalidParams("grid_n must be >= 2".into()));
    }

    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let h = (hi - lo) / (grid_n - 1) as f64;
            (0..grid_n).map(|i| lo + i as f64 * h).collect()
        })
        .collect();
    let steps: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) / (grid_n - 1) as f64)
        .collect();

    // First pass: log weights and their maximum for stable exponentiation.
    let total_points = grid_n.pow(d as u32);
    let mut logs = vec![0.0; total_points];
    let mut max_log = f64::NEG_INFINITY;
    let mut point = vec![0.0; d];
    for (flat, log) in logs.iter_mut().enumerate() {
        let mut rem = flat;
        for k in (0..d).rev() {
            point[k] = axes[k][rem % grid_n];
            rem /= grid_n;
        }
        *log = prior.logpdf(&point)? - phi.eval(&point)?;
        if *log > max_log {
            max_log = *log;
        }
    }

    let trap = |i: usize| if i == 0 || i == grid_n - 1 { 0.5 } else { 1.0 };
    let cell: f64 = steps.iter().product();

    let mut mass = 0.0;
    let mut mean: DVector<f64> = DVector::zeros(d);
    let mut second: DMatrix<f64> = DMatrix::zeros(d, d);
    for (flat, log) in logs.iter().enumerate() {
        let mut rem = flat;
        let mut w = 1.0;
        for k in (0..d).rev() {
            let idx = rem % grid_n;
            point[k] = axes[k][idx];
            w *= trap(idx);
            rem /= grid_n;
        }
        let f = w * (log - max_log).exp();
        mass += f;
        for i in 0..d {
            mean[i] += f * point[i];
            for j in 0..=i {
                second[(i, j)] += f * point[i] * point[j];
            }
        }
    }
    mean /= mass;
    let mut cov: DMatrix<f64> = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let c = second[(i, j)] / mass - mean[i] * mean[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Ok(GridMoments {
        mean,
        covariance: cov,
        log_normalizer: max_log + (mass * cell).ln(),
    })
}

/// Random-walk Metropolis over the prior-times-likelihood target
/// `exp(-Φ(x)) q(x)`. Returns the chain (one state per row, including the
/// start) and the acceptance rate.
pub fn rwmh<P: Potential>(
    phi: &P,
    prior: &GaussianParams,
    n_steps: usize,
    step_sd: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    if n_steps == 0 {
        return Err(Error::InvalidParams("n_steps must be >= 1".into()));
    }
    let d = prior.dim();
    let mut rng = rng_from_seed(seed);
    let mut current: Vec<f64> = prior.mean().as_slice().to_vec();
    let mut current_log = prior.logpdf(&current)? - phi.eval(&current)?;
    let mut chain = DMatrix::zeros(n_steps, d);
    let mut accepted = 0usize;
    let mut proposal = vec![0.0; d];
    for k in 0..n_steps {
        for (p, c) in proposal.iter_mut().zip(current.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *p = c + step_sd * z;
        }
        let prop_log = prior.logpdf(&proposal)? - phi.eval(&proposal)?;
        let u: f64 = rng.random();
        if u.ln() < prop_log - current_log {
            current.copy_from_slice(&proposal);
            current_log = prop_log;
            accepted += 1;
        }
        for j in 0..d {
            chain[(k, j)] = current[j];
        }
    }
    Ok((chain, accepted as f64 / n_steps as f64))
}

/// Column means and covariance of a chain; reused by the comparison reports.
pub fn chain_moments(chain: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = chain.nrows();
    let d = chain.ncols();
    let mut mean = DVector::zeros(d);
    for j in 0..d {
        mean[j] = chain.column(j).sum() / n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for k in 0..n {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (chain[(k, i)] - mean[i]) * (chain[(k, j)] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[(i, j)] /= n as f64 - 1.0;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    (mean, cov)
}
