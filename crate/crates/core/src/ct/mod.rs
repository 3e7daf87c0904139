//! Fan-beam CT forward model.

mod geometry;
mod matrix;
mod noise;
mod roi;
mod sinogram;

pub use geometry::{FanBeamGeometry, GeometryPreset, DEFAULT_FOV};
pub use matrix::SparseSystemMatrix;
pub use noise::{log_linearize, poisson_log_likelihood, sample_counts, simulate_from_line_integrals, simulate_poisson};
pub use roi::{compute_bz, roi_forward, roi_gradient, GradientEval, RoiBlock, ViewSelection, ZoomOperator};
pub use sinogram::{Sinogram, SinogramKind};
