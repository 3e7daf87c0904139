//! Proximal and plug-in denoising operators used as the regularization step.

mod nlm;
mod tv;

pub use nlm::{nlm_denoise, NlmParams};
pub use tv::{total_variation, tv_prox, tv_prox_objective};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

pub const DEFAULT_INNER_ITERS: usize = 20;
pub const DEFAULT_DUAL_TOL: f64 = 1e-5;

fn default_inner_iters() -> usize {
    DEFAULT_INNER_ITERS
}

fn default_dual_tol() -> f64 {
    DEFAULT_DUAL_TOL
}

fn default_patch_radius() -> usize {
    1
}

fn default_window_radius() -> usize {
    5
}

/// Regularization step of the proximal-gradient solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum DenoiserSpec {
    /// Proximal map of `lambda * TV`, solved by accelerated dual projection.
    TVProx {
        lambda: f64,
        #[serde(default = "default_inner_iters")]
        inner_iters: usize,
        #[serde(default = "default_dual_tol")]
        dual_tol: f64,
    },
    /// Non-local means used as a plug-in denoiser.
    #[serde(rename = "NLM")]
    Nlm {
        filter_strength: f64,
        #[serde(default = "default_patch_radius")]
        patch_radius: usize,
        #[serde(default = "default_window_radius")]
        window_radius: usize,
    },
    Identity,
}

/// Regularizer family used when sweeping a strength grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserFamily {
    Tv,
    Nlm,
}

impl DenoiserSpec {
    pub fn tv(lambda: f64) -> Self {
        DenoiserSpec::TVProx {
            lambda,
            inner_iters: DEFAULT_INNER_ITERS,
            dual_tol: DEFAULT_DUAL_TOL,
        }
    }

    pub fn nlm(filter_strength: f64) -> Self {
        DenoiserSpec::Nlm {
            filter_strength,
            patch_radius: default_patch_radius(),
            window_radius: default_window_radius(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::TVProx {
                lambda,
                inner_iters,
                dual_tol,
            } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::invalid("lambda", format!("{lambda} must be nonnegative")));
                }
                if inner_iters == 0 {
                    return Err(Error::invalid("inner_iters", "must be at least 1"));
                }
                if !(dual_tol.is_finite() && dual_tol >= 0.0) {
                    return Err(Error::invalid("dual_tol", "must be nonnegative"));
                }
                Ok(())
            }
            DenoiserSpec::Nlm {
                filter_strength,
                patch_radius,
                window_radius,
            } => NlmParams {
                filter_strength,
                patch_radius,
                window_radius,
            }
            .validate(),
            DenoiserSpec::Identity => Ok(()),
        }
    }

    /// The parameter a regularization path sweeps.
    pub fn strength(&self) -> Option<f64> {
        match *self {
            DenoiserSpec::TVProx { lambda, .. } => Some(lambda),
            DenoiserSpec::Nlm { filter_strength, .. } => Some(filter_strength),
            DenoiserSpec::Identity => None,
        }
    }

    pub fn with_strength(&self, strength: f64) -> Result<Self> {
        let mut out = *self;
        match &mut out {
            DenoiserSpec::TVProx { lambda, .. } => *lambda = strength,
            DenoiserSpec::Nlm { filter_strength, .. } => *filter_strength = strength,
            DenoiserSpec::Identity => {
                return Err(Error::invalid("denoiser", "identity has no strength parameter"))
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn family(&self) -> Option<DenoiserFamily> {
        match self {
            DenoiserSpec::TVProx { .. } => Some(DenoiserFamily::Tv),
            DenoiserSpec::Nlm { .. } => Some(DenoiserFamily::Nlm),
            DenoiserSpec::Identity => None,
        }
    }

    /// Applies the denoiser after a gradient step of size `step`. The TV
    /// prox weight is `lambda * step`; plug-in denoisers ignore the step.
    pub fn apply(&self, img: &ImageGrid, step: f64) -> Result<ImageGrid> {
        match *self {
            DenoiserSpec::TVProx {
                lambda,
                inner_iters,
                dual_tol,
            } => tv_prox(img, lambda * step, inner_iters, dual_tol),
            DenoiserSpec::Nlm {
                filter_strength,
                patch_radius,
                window_radius,
            } => nlm_denoise(
                img,
                &NlmParams {
                    filter_strength,
                    patch_radius,
                    window_radius,
                },
            ),
            DenoiserSpec::Identity => Ok(img.clone()),
        }
    }
}

impl DenoiserFamily {
    pub fn spec(&self, strength: f64) -> DenoiserSpec {
        match self {
            DenoiserFamily::Tv => DenoiserSpec::tv(strength),
            DenoiserFamily::Nlm => DenoiserSpec::nlm(strength),
        }
    }
}

/// Dispatches `spec` on `img` with unit step.
pub fn apply_denoiser(spec: &DenoiserSpec, img: &ImageGrid) -> Result<ImageGrid> {
    spec.apply(img, 1.0)
}
