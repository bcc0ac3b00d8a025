//! Gaussian mixture family with arctan-parameterized weights.
//!
//! Weights are derived from unconstrained reals through
//! `w_i = (π/2 + arctan λ_i) / Σ_j (π/2 + arctan λ_j)` with the last
//! parameter pinned to `λ_M = 0`, so the flow never has to project back onto
//! the simplex. All mixture arithmetic runs in log space: the flow routinely
//! visits near-degenerate mixtures where naive density ratios underflow.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Mixture of `M` Gaussians over a common dimension plus `M - 1` free
/// weight parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    components: Vec<GaussianParams>,
    lambdas: Vec<f64>,
}

impl MixtureParams {
    pub fn new(components: Vec<GaussianParams>, lambdas: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParams("mixture needs at least one component".into()));
        }
        if lambdas.len() + 1 != components.len() {
            return Err(Error::DimensionMismatch {
                context: "MixtureParams lambdas",
                expected: components.len() - 1,
                got: lambdas.len(),
            });
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidParams("mixture components differ in dimension".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidParams("non-finite weight parameter".into()));
        }
        Ok(Self { components, lambdas })
    }

    /// `M` copies of a base Gaussian with the means nudged apart by
    /// `jitter`-scaled standard-normal offsets, equal weights. This is how an
    /// experiment seeds a mixture run from a single prior.
    pub fn from_base_jittered(base: &GaussianParams, m: usize, jitter: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::INIT_JITTER]));
        let mut comps = Vec::with_capacity(m);
        for _ in 0..m {
            let mean: Vec<f64> = base
                .mean()
                .iter()
                .map(|&mu| mu + jitter * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            comps.push(GaussianParams::new(mean, base.chol_vech().as_slice().to_vec())?);
        }
        Self::new(comps, vec![0.0; m - 1])
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    fn lambda(&self, i: usize) -> f64 {
        if i + 1 == self.components.len() {
            0.0
        } else {
            self.lambdas[i]
        }
    }

    /// Sum `Σ_j (π/2 + arctan λ_j)` with `λ_M = 0`.
    fn weight_normalizer(&self) -> f64 {
        (0..self.n_components()).map(|i| FRAC_PI_2 + self.lambda(i).atan()).sum()
    }

    /// The arctan-transform weights; strictly positive, summing to one.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.weight_normalizer();
        (0..self.n_components())
            .map(|i| (FRAC_PI_2 + self.lambda(i).atan()) / total)
            .collect()
    }

    /// Log-density `log Σ_i w_i q_i(x)` via log-sum-exp.
    pub fn logpdf(&self, point: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_component_logs(point)?))
    }

    /// `log w_i + log q_i(x)` for every component.
    fn weighted_component_logs(&self, point: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights();
        self.components
            .iter()
            .zip(w)
            .map(|(c, wi)| Ok(wi.ln() + c.logpdf(point)?))
            .collect()
    }

    /// Responsibilities `w_i q_i / g`, computed as
    /// `exp(log w_i + log q_i - log g)`; they sum to one.
    pub fn responsibilities(&self, point: &[f64]) -> Result<Vec<f64>> {
        let logs = self.weighted_component_logs(point)?;
        let logg = log_sum_exp(&logs);
        Ok(logs.iter().map(|l| (l - logg).exp()).collect())
    }

    /// Total parameter count `M (d + d(d+1)/2) + M - 1`.
    pub fn param_len(&self) -> usize {
        self.n_components() * self.components[0].param_len() + self.n_components() - 1
    }

    /// Gradient of `logpdf` with respect to all parameters, stacked as the
    /// `M` component blocks followed by the `M - 1` weight parameters:
    ///
    /// * component block `i`: `(w_i q_i / g) * score_i`;
    /// * weight block `i`: `(q_i/g - 1) / ((1 + λ_i²) Σ_j (π/2 + arctan λ_j))`.
    pub fn score(&self, point: &[f64]) -> Result<Vec<f64>> {
        let m = self.n_components();
        let logs = self.weighted_component_logs(point)?;
        let logg = log_sum_exp(&logs);
        let w = self.weights();
        let total = self.weight_normalizer();
        let mut out = Vec::with_capacity(self.param_len());
        for (i, comp) in self.components.iter().enumerate() {
            let resp = (logs[i] - logg).exp();
            let s = comp.score(point)?;
            out.extend(s.into_iter().map(|v| resp * v));
        }
        for i in 0..m - 1 {
            // q_i / g in log space; responsibilities divided by weights.
            let ratio = (logs[i] - w[i].ln() - logg).exp();
            let li = self.lambdas[i];
            out.push((ratio - 1.0) / ((1.0 + li * li) * total));
        }
        Ok(out)
    }

    /// Ancestral sampling: categorical component draw, then a Gaussian draw.
    /// Deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let w = self.weights();
        let d = self.dim();
        let mut out = DMatrix::zeros(count, d);
        let mut row = vec![0.0; d];
        for k in 0..count {
            let u: f64 = rng.random();
            let mut idx = 0;
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    idx = i;
                    break;
                }
                idx = i;
            }
            self.components[idx].sample_row(&mut rng, &mut row);
            for j in 0..d {
                out[(k, j)] = row[j];
            }
        }
        out
    }

    /// Flat numeric record `[M, d, λ..., component records...]`.
    pub fn to_record(&self) -> Vec<f64> {
        let mut rec = vec![self.n_components() as f64, self.dim() as f64];
        rec.extend_from_slice(&self.lambdas);
        for c in &self.components {
            rec.extend(c.to_record());
        }
        rec
    }

    pub fn from_record(rec: &[f64]) -> Result<Self> {
        if rec.len() < 2 {
            return Err(Error::InvalidParams("mixture record too short".into()));
        }
        let m = rec[0] as usize;
        let d = rec[1] as usize;
        let comp_rec_len = 1 + d + crate::linalg::vech_len(d);
        let expected = 2 + (m - 1) + m * comp_rec_len;
        if m == 0 || rec.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "MixtureParams::from_record",
                expected,
                got: rec.len(),
            });
        }
        let lambdas = rec[2..2 + m - 1].to_vec();
        let mut comps = Vec::with_capacity(m);
        let mut off = 2 + m - 1;
        for _ in 0..m {
            comps.push(GaussianParams::from_record(&rec[off..off + comp_rec_len])?);
            off += comp_rec_len;
        }
        Self::new(comps, lambdas)
    }
}

/// `log Σ exp(v_i)` with max stabilization.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
