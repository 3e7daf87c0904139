//! Iterative solvers: first-stage FISTA reconstruction, the local zoom-in
//! solvers (fast and stochastic gradients), the measurement-blind baseline
//! and regularization-path sweeps.

mod engine;
mod fista;
mod lipschitz;
mod path;
mod zoom;

pub use engine::{chambolle_coefficient, FistaSequence, IterationInfo, RunContext};
pub use fista::{fista_reconstruct, fista_reconstruct_with, Reconstruction};
pub use lipschitz::estimate_lipschitz;
pub use path::{lambda_path, lambda_path_with};
pub use zoom::{lzfg, lzfg_with, lzsg, lzsg_with, naive_zoom, ZoomResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1/L` with `L` from the power method.
    #[default]
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    /// `a_{k+1} = (1 + sqrt(1 + 4 a_k^2)) / 2`, coefficient `(a_k - 1)/a_{k+1}`.
    #[default]
    Fista,
    /// Coefficient `(k - 1)/(k + 3)` with `k` counted from 1.
    Chambolle,
    None,
}

/// Step-size schedule of the stochastic solver.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `eta_k = eta0 / sqrt(k)`; `eta0` defaults to the resolved step.
    InvSqrt {
        #[serde(default)]
        eta0: Option<f64>,
    },
}

impl StepSchedule {
    pub fn step(&self, base: f64, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant => base,
            StepSchedule::InvSqrt { eta0 } => eta0.unwrap_or(base) / (k as f64).sqrt(),
        }
    }
}

fn default_stop_tol() -> f64 {
    1e-5
}

fn default_lipschitz_iters() -> usize {
    30
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    #[serde(default)]
    pub step: StepRule,
    #[serde(default)]
    pub momentum: Momentum,
    /// Stop when `||x_{k+1} - x_k|| <= stop_tol * ||x_k||`.
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Views per minibatch (stochastic solver only).
    #[serde(default)]
    pub minibatch_views: Option<usize>,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    /// Power iterations used by [`StepRule::Auto`].
    #[serde(default = "default_lipschitz_iters")]
    pub lipschitz_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step: StepRule::Auto,
            momentum: Momentum::Fista,
            stop_tol: default_stop_tol(),
            seed: 0,
            minibatch_views: None,
            step_schedule: StepSchedule::Constant,
            lipschitz_iters: default_lipschitz_iters(),
        }
    }
}

impl SolverConfig {
    pub fn with_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_views: Option<usize>) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if let StepRule::Explicit(eta) = self.step {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::invalid("step", format!("{eta} must be positive")));
            }
        }
        if !(self.stop_tol.is_finite() && self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol", "must be nonnegative"));
        }
        if let StepSchedule::InvSqrt { eta0: Some(e) } = self.step_schedule {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::invalid("step_schedule", "eta0 must be positive"));
            }
        }
        if self.step == StepRule::Auto && self.lipschitz_iters < 10 {
            return Err(Error::invalid("lipschitz_iters", "need at least 10 power iterations"));
        }
        if let (Some(mb), Some(nv)) = (self.minibatch_views, n_views) {
            if mb == 0 || mb > nv {
                return Err(Error::invalid("minibatch_views", format!("{mb} not in [1, {nv}]")));
            }
        }
        Ok(())
    }
}
