//! Bayesian inverse problems by likelihood homotopy.
//!
//! The posterior is reached by deforming the prior along
//! `p(x, t) ∝ exp(-t Φ(x)) q(x)` and tracking the best exponential-family
//! (Gaussian or Gaussian-mixture) approximation with an explicit parameter
//! ODE. The ODE coefficients — a Fisher information matrix and a
//! log-likelihood drift — are estimated by Monte Carlo at every step, so the
//! only problem-specific ingredient is a forward model.
//!
//! The crate bundles:
//!
//! * [`gaussian`] / [`mixture`]: the approximating families with exact
//!   scores in the (mean, precision-factor) parameterization;
//! * [`flow`]: the estimators and the safeguarded Euler stepper;
//! * [`heat`]: a 2D steady heat-conduction forward model (finite elements
//!   with circular inclusions);
//! * [`scatter`]: a 2D sound-soft acoustic scattering forward model
//!   (combined-field integral equation, Nyström discretization);
//! * [`reference`]: independent oracles (conjugate closed form, grid
//!   quadrature, random-walk Metropolis) for validation.

pub mod error;
pub mod family;
pub mod flow;
pub mod gaussian;
pub mod heat;
pub mod linalg;
pub mod mixture;
pub mod model;
pub mod reference;
pub mod rng;
pub mod scatter;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use family::VariationalFamily;
pub use flow::{
    estimate_drift, estimate_fisher, hde_step, hellinger_estimate, kl_estimate,
    neg_log_likelihood, run_flow, run_flow_with_potential, Deviation, EstimatorConfig, FlowState,
    FlowTrajectory, Potential, StepDiagnostics,
};
pub use gaussian::{moment_to_param, param_to_moment, GaussianParams, MomentParams};
pub use mixture::MixtureParams;
pub use model::{ForwardModel, LinearModel, ZeroModel};
