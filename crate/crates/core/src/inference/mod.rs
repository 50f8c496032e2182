//! Variational EM for the diversified mixture.
//!
//! The model couples K exponential-family PCA components through a
//! determinantal prior on their loading matrices. Fitting alternates:
//! mixture weights from current responsibilities, then an inner loop of
//! responsibility updates, per-component basis steps along Grassmann
//! geodesics, signed-scale coordinate sweeps, and gradient ascent on each
//! component's latent codes. Every parameter step is accept-only against
//! the exact objective, so the traced objective can only move at accepted
//! steps and at the two closed-form updates.

mod engine;
mod updates;

pub use engine::{fit, predict};
pub(crate) use engine::predict_with_scores;
pub use updates::{
    basis_gradient, code_gradient, component_loglik, objective, scales_gradient, update_codes,
    update_component_basis, update_component_scales, update_pi, update_responsibilities,
};

use nalgebra::{DMatrix, DVector};

use crate::components::Component;
use crate::error::{Error, Result};

/// Mixture weights must sum to one within this absolute slack.
pub const PI_TOL: f64 = 1e-10;

/// Immutable mixture parameters: weights π, per-component loading factors,
/// and the prior hyperparameters (ξ scale decay, ϱ similarity bandwidth,
/// λ prior strength).
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pi: DVector<f64>,
    components: Vec<Component>,
    xi: f64,
    varrho: f64,
    lambda: f64,
}

impl MixtureModel {
    pub fn new(
        pi: DVector<f64>,
        components: Vec<Component>,
        xi: f64,
        varrho: f64,
        lambda: f64,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Usage("a mixture needs at least one component".into()));
        }
        if pi.len() != components.len() {
            return Err(Error::Usage(format!(
                "{} mixture weights for {} components",
                pi.len(),
                components.len()
            )));
        }
        if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Usage("mixture weights must be finite and nonnegative".into()));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > PI_TOL {
            return Err(Error::Usage(format!("mixture weights sum to {sum}, not 1")));
        }
        let d0 = components[0].data_dim();
        let l0 = components[0].latent_dim();
        if components
            .iter()
            .any(|c| c.data_dim() != d0 || c.latent_dim() != l0)
        {
            return Err(Error::Usage("components disagree on dimensions".into()));
        }
        for (name, v) in [("xi", xi), ("varrho", varrho), ("lambda", lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Usage(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(Self {
            pi,
            components,
            xi,
            varrho,
            lambda,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn data_dim(&self) -> usize {
        self.components[0].data_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.components[0].latent_dim()
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn varrho(&self) -> f64 {
        self.varrho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Replaces the mixture weights, re-running validation.
    pub fn with_pi(self, pi: DVector<f64>) -> Result<Self> {
        Self::new(pi, self.components, self.xi, self.varrho, self.lambda)
    }

    /// Replaces one component, re-running validation.
    pub fn with_component(mut self, k: usize, component: Component) -> Result<Self> {
        if k >= self.components.len() {
            return Err(Error::Usage(format!(
                "component index {k} out of range for {} components",
                self.components.len()
            )));
        }
        self.components[k] = component;
        Self::new(self.pi, self.components, self.xi, self.varrho, self.lambda)
    }
}

/// Variational state: per component, one latent code row per sample, plus
/// one responsibility row per sample. Component k's code matrix holds the
/// codes samples would use if assigned to k, so responsibilities compare
/// how well each component's subspace can represent each sample rather
/// than how well it fits a single compromise code. Responsibility rows are
/// kept on the probability simplex by `update_responsibilities`.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub codes: Vec<DMatrix<f64>>,
    pub responsibilities: DMatrix<f64>,
}

impl LatentState {
    pub fn zeros(samples: usize, latent_dim: usize, num_components: usize) -> Self {
        Self {
            codes: vec![DMatrix::zeros(samples, latent_dim); num_components],
            responsibilities: DMatrix::zeros(samples, num_components),
        }
    }
}

/// Fit hyperparameters. `y_step_iters` and `phi_sweeps` of zero disable the
/// corresponding update; everything else must be positive.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub num_components: usize,
    pub latent_dim: usize,
    pub lambda: f64,
    pub xi: f64,
    pub varrho: f64,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub y_step_iters: usize,
    pub phi_sweeps: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(num_components: usize, latent_dim: usize) -> Self {
        Self {
            num_components,
            latent_dim,
            lambda: 10.0,
            xi: 0.1,
            varrho: 0.1,
            epsilon: 1e-5,
            max_outer: 100,
            max_inner: 50,
            y_step_iters: 5,
            phi_sweeps: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::Usage("need at least one component".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Usage("latent dimension must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("xi", self.xi),
            ("varrho", self.varrho),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Usage(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Usage(format!(
                "epsilon must be a positive tolerance, got {}",
                self.epsilon
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Usage("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// What `fit` did: the objective after the initial state and after every
/// inner iteration, how many outer iterations completed, whether the outer
/// loop converged before its cap, and how many committed objective
/// evaluations needed a jittered prior matrix.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub jitter_events: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub model: MixtureModel,
    pub state: LatentState,
    pub report: FitReport,
}

/// Posterior summary for one held-out sample: the argmax component (ties to
/// the lowest index), the full posterior over components, and the inferred
/// latent code.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub component: usize,
    pub posterior: DVector<f64>,
    pub code: DVector<f64>,
}
