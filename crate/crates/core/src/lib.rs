//! Data-consistent local zoom-in for fan-beam CT.
//!
//! A first-stage TV reconstruction is computed on a coarse grid; a clinician
//! then picks a rectangle which is re-solved on a finer grid against the
//! measurements that the rectangle explains, with its own regularization.
//!
//! Modules, bottom-up:
//! - [`image`]: image grids, ROI crop/embed, bicubic resampling, PSNR
//! - [`ct`]: fan-beam geometry, sparse system matrix, ROI block operators, noise
//! - [`regularizers`]: TV proximal map, non-local means, identity
//! - [`solvers`]: FISTA, the zoom solvers, naive zoom, regularization paths
//! - [`phantoms`]: analytic ellipse phantoms
//! - [`harness`]: experiment orchestration and file formats

pub mod ct;
pub mod error;
pub mod harness;
pub mod image;
pub mod phantoms;
pub mod regularizers;
pub mod solvers;

pub use error::{Error, Result};
