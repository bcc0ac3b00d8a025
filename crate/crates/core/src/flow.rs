//! The homotopy parameter flow.
//!
//! The target density is deformed from the prior into the (unnormalized)
//! posterior along `p(x, t) = exp(-t Φ(x)) q(x)`, `t` running from 0 to 1.
//! Stationarity of a deviation functional between `p(·, t)` and the
//! approximating family `g(·; η)` turns the parameter path `η(t)` into an
//! ODE whose coefficients are expectations under `g`:
//!
//! * a Fisher information matrix `I(η) = E[s sᵀ]`, `s` the parameter score;
//! * a drift vector `E[Φ s]`.
//!
//! Both are estimated by Monte Carlo with common random numbers, the system
//! `I δ = v` is solved per step, and the parameters advance by the explicit
//! Euler update `η ← η - Δt δ`. KL and squared-Hellinger deviations scale
//! both estimates by the same constant, so they induce the identical update;
//! the `Deviation` switch exists to make that equivalence checkable.
//!
//! Everything is deterministic given the config seed: per-step and per-sub-step
//! generator seeds are derived with a fixed mixing chain, and parallel
//! potential evaluations are reduced in pre-assigned sample order.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::VariationalFamily;
use crate::model::ForwardModel;
use crate::rng::{derive_seed, stream};

/// Deviation functional selector. Both choices reduce to the same update
/// (the squared-Hellinger estimates carry a common factor 1/4 that cancels
/// in the solve), which the flow preserves bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Deviation {
    #[default]
    Kl,
    SquaredHellinger,
}

impl Deviation {
    fn factor(self) -> f64 {
        match self {
            Deviation::Kl => 1.0,
            // Power of two, so scaling commutes exactly with rounding.
            Deviation::SquaredHellinger => 0.25,
        }
    }
}

/// Monte Carlo estimator and stepping configuration.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Samples per estimator call.
    pub n_samples: usize,
    /// Diagonal regularization of the Fisher estimate. `None` selects the
    /// default `1e-8 * trace / p`; an explicit 0.0 disables regularization.
    pub ridge: Option<f64>,
    /// Subtract the sample mean of Φ in the drift estimate (control variate;
    /// the exact drift is unchanged because scores have zero mean).
    pub use_baseline: bool,
    pub seed: u64,
    /// Step-halving budget per flow step.
    pub max_halvings: u32,
    /// Homotopy step (uniform grid on [0, 1]).
    pub dt: f64,
    pub deviation: Deviation,
    /// Attach per-state KL / squared-Hellinger diagnostics during `run_flow`.
    pub divergence_diagnostics: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            ridge: None,
            use_baseline: true,
            seed: 0,
            max_halvings: 20,
            dt: 0.01,
            deviation: Deviation::Kl,
            divergence_diagnostics: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("n_samples must be >= 1".into()));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) {
                return Err(Error::InvalidParams("ridge must be >= 0".into()));
            }
        }
        if !(self.dt >= 0.0 && self.dt <= 1.0) {
            return Err(Error::InvalidParams(format!("dt {} outside [0, 1]", self.dt)));
        }
        Ok(())
    }
}

/// Per-step estimator diagnostics. The drift norm and condition estimate are
/// those of the raw Monte Carlo estimates from the last sub-step, before the
/// deviation factor is applied — they are therefore identical for both
/// deviation settings.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    pub drift_norm: f64,
    pub fisher_condition_estimate: f64,
    pub n_samples_used: usize,
    pub n_step_halvings: u32,
    pub kl_estimate: Option<f64>,
    pub hellinger_estimate: Option<f64>,
}

/// A point of the flow: homotopy time, family parameters, diagnostics.
#[derive(Debug, Clone)]
pub struct FlowState<F: VariationalFamily> {
    pub t: f64,
    pub params: F,
    pub diagnostics: StepDiagnostics,
}

impl<F: VariationalFamily> FlowState<F> {
    pub fn initial(params: F) -> Self {
        Self { t: 0.0, params, diagnostics: StepDiagnostics::default() }
    }
}

/// The ordered states from t = 0 to t = 1.
#[derive(Debug, Clone)]
pub struct FlowTrajectory<F: VariationalFamily> {
    pub states: Vec<FlowState<F>>,
}

impl<F: VariationalFamily> FlowTrajectory<F> {
    /// Checks the trajectory invariants: strictly increasing times, starting
    /// at 0 and ending at 1.
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidParams("empty trajectory".into()));
        }
        if self.states[0].t != 0.0 {
            return Err(Error::InvalidParams("trajectory must start at t = 0".into()));
        }
        if self.states.last().unwrap().t != 1.0 {
            return Err(Error::InvalidParams("trajectory must end at t = 1".into()));
        }
        for w in self.states.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::InvalidParams("trajectory times must increase".into()));
            }
        }
        Ok(())
    }

    pub fn final_params(&self) -> &F {
        &self.states.last().expect("trajectory is nonempty").params
    }

    /// One CSV row per state: t, the flat parameters, then diagnostics.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = self.states[0].params.param_len();
        write!(w, "t")?;
        for i in 0..p {
            write!(w, ",eta{i}")?;
        }
        writeln!(
            w,
            ",drift_norm,fisher_condition_estimate,n_samples_used,n_step_halvings,kl_estimate,hellinger_estimate"
        )?;
        for s in &self.states {
            write!(w, "{}", s.t)?;
            for v in s.params.flat_params() {
                write!(w, ",{v}")?;
            }
            let d = &s.diagnostics;
            write!(
                w,
                ",{},{},{},{}",
                d.drift_norm, d.fisher_condition_estimate, d.n_samples_used, d.n_step_halvings
            )?;
            match d.kl_estimate {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
            match d.hellinger_estimate {
                Some(v) => writeln!(w, ",{v}")?,
                None => writeln!(w, ",")?,
            }
        }
        Ok(())
    }
}

/// The potential Φ (negative log likelihood) evaluated at sample points.
/// Implemented by any `Fn(&[f64]) -> Result<f64> + Sync`.
pub trait Potential: Sync {
    fn eval(&self, point: &[f64]) -> Result<f64>;
}

impl<T: Fn(&[f64]) -> Result<f64> + Sync> Potential for T {
    fn eval(&self, point: &[f64]) -> Result<f64> {
        self(point)
    }
}

/// Gaussian-noise misfit `|data - model(κ)|² / (2 δ²)`; additive constants
/// are dropped.
pub fn neg_log_likelihood(
    model: &dyn ForwardModel,
    data: &[f64],
    noise_sd: f64,
    kappa: &[f64],
) -> Result<f64> {
    if data.len() != model.output_len() {
        return Err(Error::DimensionMismatch {
            context: "neg_log_likelihood data",
            expected: model.output_len(),
            got: data.len(),
        });
    }
    if !(noise_sd > 0.0) {
        return Err(Error::InvalidParams(format!("noise_sd {noise_sd} must be > 0")));
    }
    let predicted = model.apply(kappa).map_err(|e| Error::Forward {
        context: "negative log likelihood".into(),
        source: Box::new(e),
    })?;
    let mut ss = 0.0;
    for (d, p) in data.iter().zip(predicted.iter()) {
        let r = d - p;
        ss += r * r;
    }
    Ok(ss / (2.0 * noise_sd * noise_sd))
}

/// Raw Monte Carlo estimates over one shared sample block: the ridged Fisher
/// matrix (exactly symmetric), the drift vector and the Φ sample mean.
fn estimate_pair<F: VariationalFamily, P: Potential>(
    family: &F,
    phi: &P,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let n = cfg.n_samples;
    let p = family.param_len();
    let samples = family.sample(n, seed);

    // Parallel evaluation in pre-assigned sample order; the sequential
    // reduction below keeps results independent of thread count.
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let x: Vec<f64> = samples.row(k).iter().copied().collect();
            let s = family.score(&x)?;
            let f = phi.eval(&x)?;
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("potential returned {f}"),
                    sample: k,
                });
            }
            Ok((s, f))
        })
        .collect();

    let mut scores = Vec::with_capacity(n);
    let mut phis = Vec::with_capacity(n);
    for (k, r) in rows.into_iter().enumerate() {
        let (s, f) = r.map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, sample: k },
            other => other,
        })?;
        scores.push(s);
        phis.push(f);
    }

    let phi_mean = phis.iter().sum::<f64>() / n as f64;
    let baseline = if cfg.use_baseline { phi_mean } else { 0.0 };

    // Lower triangle of (1/n) Σ s sᵀ, mirrored afterwards so the result is
    // symmetric to the bit.
    let mut fisher = DMatrix::zeros(p, p);
    let mut drift = DVector::zeros(p);
    for (s, &f) in scores.iter().zip(phis.iter()) {
        for i in 0..p {
            for j in 0..=i {
                fisher[(i, j)] += s[i] * s[j];
            }
            drift[i] += (f - baseline) * s[i];
        }
    }
    let inv_n = 1.0 / n as f64;
    fisher *= inv_n;
    drift *= inv_n;
    for i in 0..p {
        for j in 0..i {
            fisher[(j, i)] = fisher[(i, j)];
        }
    }

    let ridge = cfg
        .ridge
        .unwrap_or_else(|| 1e-8 * fisher.trace() / p as f64);
    for i in 0..p {
        fisher[(i, i)] += ridge;
    }
    Ok((fisher, drift, phi_mean))
}

/// Monte Carlo Fisher information `(1/n) Σ s sᵀ + ridge I` of the family at
/// its current parameters. Exactly symmetric, deterministic in `cfg.seed`.
pub fn estimate_fisher<F: VariationalFamily>(family: &F, cfg: &EstimatorConfig) -> Result<DMatrix<f64>> {
    let zero = |_: &[f64]| Ok(0.0);
    let (fisher, _, _) = estimate_pair(family, &zero, cfg, cfg.seed)?;
    Ok(fisher)
}

/// Monte Carlo drift `(1/n) Σ (Φ(x_k) - b) s(x_k)`, the sample form of
/// `∫ Φ ∂g/∂η dx`. Shares its sample block with [`estimate_fisher`] when
/// called with the same seed (common random numbers).
pub fn estimate_drift<F: VariationalFamily, P: Potential>(
    family: &F,
    phi: &P,
    cfg: &EstimatorConfig,
) -> Result<DVector<f64>> {
    let (_, drift, _) = estimate_pair(family, phi, cfg, cfg.seed)?;
    Ok(drift)
}

fn solve_step(
    fisher: &DMatrix<f64>,
    drift: &DVector<f64>,
    cfg: &EstimatorConfig,
) -> Result<(DVector<f64>, f64)> {
    let c = cfg.deviation.factor();
    let a = fisher * c;
    let b = drift * c;
    crate::linalg::spd_solve(&a, &b).map_err(|e| {
        if cfg.ridge == Some(0.0) {
            Error::Solve(format!(
                "Fisher estimate is singular with ridge = 0; set ridge > 0 ({e})"
            ))
        } else {
            e
        }
    })
}

/// Advances one homotopy step of size `cfg.dt` from `state`.
///
/// Solves `Î δ = v̂` and proposes `η - h δ`. When a proposal leaves the
/// family's valid set (a factor diagonal would turn non-positive), the
/// sub-step is halved and retried with the same estimates; successful
/// sub-steps accumulate until the full `dt` is consumed. The halving budget
/// is `cfg.max_halvings` for the whole step.
pub fn hde_step<F: VariationalFamily, P: Potential>(
    state: &FlowState<F>,
    phi: &P,
    cfg: &EstimatorConfig,
) -> Result<FlowState<F>> {
    cfg.validate()?;
    if state.t + cfg.dt > 1.0 + 1e-12 {
        return Err(Error::InvalidParams(format!(
            "step from t = {} with dt = {} leaves [0, 1]",
            state.t, cfg.dt
        )));
    }
    let step_index = if cfg.dt > 0.0 { (state.t / cfg.dt).round() as u64 } else { 0 };
    hde_step_indexed(state, phi, cfg, step_index, state.t + cfg.dt)
}

fn hde_step_indexed<F: VariationalFamily, P: Potential>(
    state: &FlowState<F>,
    phi: &P,
    cfg: &EstimatorConfig,
    step_index: u64,
    t_target: f64,
) -> Result<FlowState<F>> {
    let dt = t_target - state.t;
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let mut current = state.params.clone();
    let mut remaining = dt;
    let mut h = dt;
    let mut halvings = 0u32;
    let mut substep = 0u64;
    let mut samples_used = 0usize;
    let mut last_drift_norm = 0.0;
    let mut last_cond = 0.0;

    while remaining > 1e-14 * dt {
        let seed = derive_seed(cfg.seed, &[stream::FLOW_STEP, step_index, stream::SUBSTEP, substep]);
        let (fisher, drift, _) = estimate_pair(&current, phi, cfg, seed)?;
        samples_used += cfg.n_samples;
        let (delta, cond) = solve_step(&fisher, &drift, cfg)?;
        last_drift_norm = drift.norm();
        last_cond = cond;

        // Retry the same estimates at halved step sizes until the proposal
        // is valid.
        loop {
            let flat = current.flat_params();
            let candidate: Vec<f64> =
                flat.iter().zip(delta.iter()).map(|(p, d)| p - h * d).collect();
            match current.with_flat_params(&candidate) {
                Ok(next) => {
                    current = next;
                    remaining -= h;
                    if h > remaining {
                        h = remaining;
                    }
                    substep += 1;
                    break;
                }
                Err(_) => {
                    halvings += 1;
                    if halvings > cfg.max_halvings {
                        return Err(Error::FlowStall {
                            t: state.t + (dt - remaining),
                            halvings: halvings - 1,
                            last_params: current.flat_params(),
                        });
                    }
                    h *= 0.5;
                }
            }
        }
    }

    Ok(FlowState {
        t: t_target,
        params: current,
        diagnostics: StepDiagnostics {
            drift_norm: last_drift_norm,
            fisher_condition_estimate: last_cond,
            n_samples_used: samples_used,
            n_step_halvings: halvings,
            kl_estimate: None,
            hellinger_estimate: None,
        },
    })
}

/// Runs the full flow from the prior parameters to `t = 1` on the uniform
/// grid, with `Φ` the Gaussian misfit of `model` against `data`.
pub fn run_flow<F: VariationalFamily>(
    eta0: F,
    model: &dyn ForwardModel,
    data: &[f64],
    noise_sd: f64,
    cfg: &EstimatorConfig,
) -> Result<FlowTrajectory<F>> {
    let phi = |kappa: &[f64]| neg_log_likelihood(model, data, noise_sd, kappa);
    run_flow_with_potential(eta0, &phi, cfg)
}

/// [`run_flow`] with an arbitrary potential.
pub fn run_flow_with_potential<F: VariationalFamily, P: Potential>(
    eta0: F,
    phi: &P,
    cfg: &EstimatorConfig,
) -> Result<FlowTrajectory<F>> {
    cfg.validate()?;
    if !(cfg.dt > 0.0) {
        return Err(Error::InvalidParams("run_flow requires dt > 0".into()));
    }
    let n_steps = (1.0 / cfg.dt).ceil() as u64;
    let mut states = Vec::with_capacity(n_steps as usize + 1);
    let mut state = FlowState::initial(eta0.clone());
    attach_divergences(&mut state, &eta0, phi, cfg, 0);
    states.push(state);

    for i in 0..n_steps {
        let t_target = if i + 1 == n_steps { 1.0 } else { (i + 1) as f64 * cfg.dt };
        let prev = states.last().unwrap();
        let mut next = hde_step_indexed(prev, phi, cfg, i, t_target).map_err(|e| match e {
            e @ Error::FlowStall { .. } => e,
            other => Error::FlowStep { t: prev.t, source: Box::new(other) },
        })?;
        attach_divergences(&mut next, &eta0, phi, cfg, i + 1);
        states.push(next);
    }

    let trajectory = FlowTrajectory { states };
    trajectory.validate()?;
    Ok(trajectory)
}

fn attach_divergences<F: VariationalFamily, P: Potential>(
    state: &mut FlowState<F>,
    prior: &F,
    phi: &P,
    cfg: &EstimatorConfig,
    index: u64,
) {
    if !cfg.divergence_diagnostics {
        return;
    }
    let mut diag_cfg = cfg.clone();
    diag_cfg.seed = derive_seed(cfg.seed, &[stream::DIAGNOSTIC, index]);
    state.diagnostics.kl_estimate =
        kl_estimate(&state.params, prior, phi, state.t, &diag_cfg).ok();
    state.diagnostics.hellinger_estimate =
        hellinger_estimate(&state.params, prior, phi, state.t, &diag_cfg).ok();
}

/// Monte Carlo estimate of `KL(g || p_t / Z_t)` up to the unknown `log Z_t`:
/// the sample mean of `log g + t Φ - log q` under `g`. A monitoring
/// diagnostic only; it never enters the flow update.
pub fn kl_estimate<F: VariationalFamily, P: Potential>(
    g: &F,
    prior: &F,
    phi: &P,
    t: f64,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let samples = g.sample(cfg.n_samples, cfg.seed);
    let mut acc = 0.0;
    for k in 0..cfg.n_samples {
        let x: Vec<f64> = samples.row(k).iter().copied().collect();
        acc += g.logpdf(&x)? + t * phi.eval(&x)? - prior.logpdf(&x)?;
    }
    Ok(acc / cfg.n_samples as f64)
}

/// Self-normalized Monte Carlo estimate of the squared Hellinger distance
/// between `g` and the normalized homotopy target at time `t`. Lies in
/// [0, 1] by the sample Cauchy-Schwarz inequality.
pub fn hellinger_estimate<F: VariationalFamily, P: Potential>(
    g: &F,
    prior: &F,
    phi: &P,
    t: f64,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let samples = g.sample(cfg.n_samples, cfg.seed);
    let n = cfg.n_samples;
    let mut log_ratio = Vec::with_capacity(n);
    for k in 0..n {
        let x: Vec<f64> = samples.row(k).iter().copied().collect();
        log_ratio.push(prior.logpdf(&x)? - t * phi.eval(&x)? - g.logpdf(&x)?);
    }
    let c = log_ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let half: f64 = log_ratio.iter().map(|l| ((l - c) * 0.5).exp()).sum::<f64>() / n as f64;
    let full: f64 = log_ratio.iter().map(|l| (l - c).exp()).sum::<f64>() / n as f64;
    Ok(1.0 - half / full.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianParams;
    use crate::model::{LinearModel, ZeroModel};
    use approx::assert_relative_eq;

    fn quick_cfg(n: usize, seed: u64) -> EstimatorConfig {
        EstimatorConfig { n_samples: n, seed, ..EstimatorConfig::default() }
    }

    #[test]
    fn nll_values() {
        let ident = LinearModel::scalar(1.0);
        assert_eq!(neg_log_likelihood(&ident, &[3.0], 0.25, &[3.0]).unwrap(), 0.0);
        // One-sigma residual.
        assert_relative_eq!(
            neg_log_likelihood(&ident, &[3.25], 0.25, &[3.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        // A = [1; 1], κ = 0, data = (1, 1), δ = 1 -> |(1,1)|²/2 = 1.
        let stacked = LinearModel::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(
            neg_log_likelihood(&stacked, &[1.0, 1.0], 1.0, &[0.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Length mismatch is a contract violation.
        assert!(neg_log_likelihood(&ident, &[1.0, 2.0], 1.0, &[0.0]).is_err());
    }

    #[test]
    fn fisher_of_standard_normal_is_diag_1_2() {
        // Analytic Fisher in the (mean, factor) parameterization; the values
        // are the moments E[x²] = 1 and E[(1 - x²)²] = 2.
        let p = GaussianParams::standard(1);
        let cfg = quick_cfg(100_000, 4);
        let fisher = estimate_fisher(&p, &cfg).unwrap();
        assert!((fisher[(0, 0)] - 1.0).abs() < 0.05, "I00 = {}", fisher[(0, 0)]);
        assert!((fisher[(1, 1)] - 2.0).abs() < 0.10, "I11 = {}", fisher[(1, 1)]);
        assert!(fisher[(0, 1)].abs() < 0.05, "I01 = {}", fisher[(0, 1)]);
    }

    #[test]
    fn fisher_is_exactly_symmetric() {
        let p = GaussianParams::new(vec![0.3, -1.0], vec![1.0, 0.4, 0.7]).unwrap();
        let fisher = estimate_fisher(&p, &quick_cfg(500, 9)).unwrap();
        let diff = &fisher - fisher.transpose();
        assert_eq!(diff.abs().max(), 0.0);
    }

    #[test]
    fn fisher_mean_block_matches_precision() {
        // For the identity-precision bivariate Gaussian the mean-block Fisher
        // equals Rᵀ R = I (quadrature value of the score outer product).
        let p = GaussianParams::standard(2);
        let fisher = estimate_fisher(&p, &quick_cfg(100_000, 15)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (fisher[(i, j)] - expected).abs() < 0.05,
                    "mean block ({i},{j}) = {}",
                    fisher[(i, j)]
                );
            }
        }
    }

    #[test]
    fn drift_of_constant_potential_is_small() {
        let p = GaussianParams::standard(2);
        let c = 7.0;
        let mut cfg = quick_cfg(100_000, 2);
        cfg.use_baseline = false;
        let phi = move |_: &[f64]| Ok(c);
        let v = estimate_drift(&p, &phi, &cfg).unwrap();
        let plen = 5.0_f64;
        assert!(v.norm() < 5.0 * c * plen.sqrt() / (cfg.n_samples as f64).sqrt());
    }

    #[test]
    fn baseline_cancels_additive_constants() {
        // With the baseline on, shifting Φ by a constant leaves the centered
        // samples unchanged up to the rounding of the shifted sums.
        let p = GaussianParams::new(vec![0.5], vec![0.8]).unwrap();
        let cfg = quick_cfg(2000, 31); // baseline on by default
        let phi = |x: &[f64]| Ok(x[0] * x[0]);
        let shifted = |x: &[f64]| Ok(x[0] * x[0] + 1000.0);
        let a = estimate_drift(&p, &phi, &cfg).unwrap();
        let b = estimate_drift(&p, &shifted, &cfg).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-10);
        // Without the baseline the shift leaks into the estimate.
        let mut no_baseline = cfg.clone();
        no_baseline.use_baseline = false;
        let c = estimate_drift(&p, &phi, &no_baseline).unwrap();
        let d = estimate_drift(&p, &shifted, &no_baseline).unwrap();
        assert!((&c - &d).norm() > 1.0);
    }

    #[test]
    fn drift_matches_quadrature_oracle() {
        // Φ(x) = x²/2 under the standard normal. Quadrature of Φ s g over a
        // wide grid gives (0, -1): E[Φ x] = 0 and E[Φ (1 - x²)] = -1.
        let p = GaussianParams::standard(1);
        let phi = |x: &[f64]| Ok(0.5 * x[0] * x[0]);
        let mut oracle = [0.0, 0.0];
        let n = 200_001;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / (n - 1) as f64;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let g = p.logpdf(&[x]).unwrap().exp();
            let s = p.score(&[x]).unwrap();
            let f = 0.5 * x * x;
            oracle[0] += w * f * s[0] * g;
            oracle[1] += w * f * s[1] * g;
        }
        oracle[0] *= h;
        oracle[1] *= h;
        assert_relative_eq!(oracle[1], -1.0, epsilon = 1e-8);

        let v = estimate_drift(&p, &phi, &quick_cfg(100_000, 8)).unwrap();
        assert!((v[0] - oracle[0]).abs() < 0.05);
        assert!((v[1] - oracle[1]).abs() / oracle[1].abs() < 0.05);
    }

    #[test]
    fn null_step_returns_state_unchanged() {
        let p = GaussianParams::standard(1);
        let state = FlowState::initial(p);
        let mut cfg = quick_cfg(100, 0);
        cfg.dt = 0.0;
        let phi = |_: &[f64]| Ok(0.0);
        let next = hde_step(&state, &phi, &cfg).unwrap();
        assert_eq!(next.t, 0.0);
        assert_eq!(next.params.flat_params(), state.params.flat_params());
    }

    #[test]
    fn one_euler_step_matches_quadrature() {
        // Conjugate 1D problem A = 1, prior N(0, 1), δ = 1, y = 1:
        // Φ(x) = (1 - x)²/2. Quadrature of the Fisher and drift integrals at
        // the prior gives I = diag(1, 2), v = (-1, -1), so one Euler step is
        // η = (0, 1) - dt (I⁻¹ v) = (dt, 1 + dt/2).
        let prior = GaussianParams::standard(1);
        let phi = |x: &[f64]| Ok(0.5 * (1.0 - x[0]) * (1.0 - x[0]));

        let (mut i00, mut i01, mut i11, mut v0, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let n = 200_001;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / (n - 1) as f64;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let g = prior.logpdf(&[x]).unwrap().exp();
            let s = prior.score(&[x]).unwrap();
            let f = 0.5 * (1.0 - x) * (1.0 - x);
            i00 += w * s[0] * s[0] * g;
            i01 += w * s[0] * s[1] * g;
            i11 += w * s[1] * s[1] * g;
            v0 += w * f * s[0] * g;
            v1 += w * f * s[1] * g;
        }
        for v in [&mut i00, &mut i01, &mut i11, &mut v0, &mut v1] {
            *v *= h;
        }
        let det = i00 * i11 - i01 * i01;
        let d0 = (i11 * v0 - i01 * v1) / det;
        let d1 = (i00 * v1 - i01 * v0) / det;
        let dt = 0.01;
        let expected = [0.0 - dt * d0, 1.0 - dt * d1];
        assert_relative_eq!(expected[0], 0.01, epsilon = 1e-6);
        assert_relative_eq!(expected[1], 1.005, epsilon = 1e-6);

        let mut cfg = quick_cfg(100_000, 17);
        cfg.dt = dt;
        let state = FlowState::initial(prior);
        let next = hde_step(&state, &phi, &cfg).unwrap();
        let got = next.params.flat_params();
        let step_norm = (dt * d0).hypot(dt * d1);
        let err = (got[0] - expected[0]).hypot(got[1] - expected[1]);
        assert!(err < 0.1 * step_norm, "step error {err} vs step {step_norm}");
    }

    /// Wide prior (factor diagonal 1e-3) with a steep linear potential.
    /// The exact vech drift is zero, but its Monte Carlo estimate at small
    /// sample counts is noisy enough to push the proposal's factor diagonal
    /// negative on the first try.
    fn overshooting_setup() -> (FlowState<GaussianParams>, impl Fn(&[f64]) -> crate::error::Result<f64>) {
        let p = GaussianParams::new(vec![0.0], vec![1e-3]).unwrap();
        (FlowState::initial(p), |x: &[f64]| Ok(-100.0 * x[0]))
    }

    #[test]
    fn halving_safeguard_engages() {
        // A drift estimate pushing the factor diagonal negative triggers the
        // halving safeguard; the step still completes with valid parameters.
        let (state, phi) = overshooting_setup();
        let mut cfg = quick_cfg(100, 6);
        cfg.dt = 0.01;
        cfg.max_halvings = 60;
        let next = hde_step(&state, &phi, &cfg).unwrap();
        assert!(next.diagnostics.n_step_halvings >= 1);
        let flat = next.params.flat_params();
        assert!(flat[1] > 0.0);
        assert_relative_eq!(next.t, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn exhausted_halvings_stall_with_state() {
        let (state, phi) = overshooting_setup();
        let mut cfg = quick_cfg(100, 6);
        cfg.dt = 0.01;
        cfg.max_halvings = 0;
        match hde_step(&state, &phi, &cfg) {
            Err(Error::FlowStall { t, halvings, last_params }) => {
                assert!((0.0..0.01).contains(&t));
                assert_eq!(halvings, 0);
                assert_eq!(last_params.len(), 2);
            }
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn zero_ridge_singular_fisher_advises_ridge() {
        // With a constant potential and a single sample the 2-parameter
        // Fisher estimate is rank one; ridge = 0 must produce the advisory
        // solve error.
        let p = GaussianParams::standard(1);
        let phi = |_: &[f64]| Ok(1.0);
        let mut cfg = quick_cfg(1, 5);
        cfg.ridge = Some(0.0);
        cfg.dt = 0.01;
        let state = FlowState::initial(p);
        match hde_step(&state, &phi, &cfg) {
            Err(Error::Solve(msg)) => assert!(msg.contains("ridge"), "message: {msg}"),
            other => panic!("expected solve error, got {other:?}"),
        }
    }

    #[test]
    fn zero_potential_fixes_the_prior() {
        let prior = GaussianParams::new(vec![0.4, -0.2], vec![1.1, 0.2, 0.9]).unwrap();
        let model = ZeroModel { input_dim: 2 };
        let mut cfg = quick_cfg(500, 21);
        cfg.dt = 0.05;
        let traj = run_flow(prior.clone(), &model, &[], 1.0, &cfg).unwrap();
        traj.validate().unwrap();
        let final_flat = traj.final_params().flat_params();
        let prior_flat = prior.flat_params();
        let delta: f64 = final_flat
            .iter()
            .zip(prior_flat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-6, "prior moved by {delta}");
    }

    #[test]
    fn conjugate_1d_flow_converges() {
        // A = 1, prior N(0,1), δ = 1, y = 1: posterior N(0.5, 0.5).
        let prior = GaussianParams::standard(1);
        let model = LinearModel::scalar(1.0);
        let mut cfg = quick_cfg(10_000, 123);
        cfg.dt = 0.01;
        let traj = run_flow(prior, &model, &[1.0], 1.0, &cfg).unwrap();
        let m = traj.final_params().to_moments();
        assert!((m.mean[0] - 0.5).abs() / 0.5 < 0.02, "mean {}", m.mean[0]);
        assert!(
            (m.covariance[(0, 0)] - 0.5).abs() / 0.5 < 0.02,
            "variance {}",
            m.covariance[(0, 0)]
        );
    }

    #[test]
    fn flow_is_deterministic() {
        let prior = GaussianParams::standard(1);
        let model = LinearModel::scalar(1.0);
        let mut cfg = quick_cfg(500, 99);
        cfg.dt = 0.05;
        cfg.divergence_diagnostics = true;
        let a = run_flow(prior.clone(), &model, &[1.0], 1.0, &cfg).unwrap();
        let b = run_flow(prior, &model, &[1.0], 1.0, &cfg).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn deviations_yield_bit_identical_flows() {
        let prior = GaussianParams::standard(2);
        let model = LinearModel::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let mut cfg = quick_cfg(500, 7);
        cfg.dt = 0.05;
        cfg.deviation = Deviation::Kl;
        let a = run_flow(prior.clone(), &model, &[1.0, 0.5], 0.5, &cfg).unwrap();
        cfg.deviation = Deviation::SquaredHellinger;
        let b = run_flow(prior, &model, &[1.0, 0.5], 0.5, &cfg).unwrap();
        for (sa, sb) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(sa.t, sb.t);
            assert_eq!(sa.params.flat_params(), sb.params.flat_params());
            assert_eq!(sa.diagnostics.drift_norm, sb.diagnostics.drift_norm);
        }
    }

    #[test]
    fn kl_estimate_examples() {
        let prior = GaussianParams::standard(1);
        let cfg = quick_cfg(100_000, 13);
        let zero = |_: &[f64]| Ok(0.0);
        // At the prior with t = 0 the estimate is exactly zero sample-wise.
        let at_prior = kl_estimate(&prior, &prior, &zero, 0.0, &cfg).unwrap();
        assert_eq!(at_prior, 0.0);

        // g = N(0,1), effective target N(1,1) via Φ(x) = 1/2 - x at t = 1
        // (for which Z_t = 1): closed-form KL = 0.5.
        let phi = |x: &[f64]| Ok(0.5 - x[0]);
        let kl = kl_estimate(&prior, &prior, &phi, 1.0, &cfg).unwrap();
        assert!((kl - 0.5).abs() / 0.5 < 0.05, "kl {kl}");

        // Never meaningfully negative: bounded below by -3 standard errors.
        assert!(kl > -3.0 * 1.0 / (cfg.n_samples as f64).sqrt());
    }

    #[test]
    fn hellinger_estimate_examples() {
        let prior = GaussianParams::standard(1);
        let cfg = quick_cfg(100_000, 29);
        let zero = |_: &[f64]| Ok(0.0);
        let at_prior = hellinger_estimate(&prior, &prior, &zero, 0.0, &cfg).unwrap();
        assert!(at_prior.abs() < 1e-12);
        // Identical densities at t > 0: Φ chosen so the target stays N(0,1).
        let zero_phi = |_: &[f64]| Ok(0.0);
        let same = hellinger_estimate(&prior, &prior, &zero_phi, 0.7, &cfg).unwrap();
        assert!(same.abs() < 1e-12);

        // g = N(0,1) vs target N(1,1): H² = 1 - exp(-1/8).
        let phi = |x: &[f64]| Ok(0.5 - x[0]);
        let h2 = hellinger_estimate(&prior, &prior, &phi, 1.0, &cfg).unwrap();
        let closed = 1.0 - (-0.125f64).exp();
        assert!((h2 - closed).abs() / closed < 0.05, "h² {h2} vs {closed}");
        assert!((0.0..=1.0).contains(&h2));
    }

    #[test]
    fn trajectory_validation_catches_bad_grids() {
        let p = GaussianParams::standard(1);
        let mk = |t: f64| FlowState { t, params: p.clone(), diagnostics: StepDiagnostics::default() };
        assert!(FlowTrajectory { states: vec![mk(0.0), mk(1.0)] }.validate().is_ok());
        assert!(FlowTrajectory { states: vec![mk(0.1), mk(1.0)] }.validate().is_err());
        assert!(FlowTrajectory { states: vec![mk(0.0), mk(0.5)] }.validate().is_err());
        assert!(FlowTrajectory { states: vec![mk(0.0), mk(0.0), mk(1.0)] }.validate().is_err());
    }
}
