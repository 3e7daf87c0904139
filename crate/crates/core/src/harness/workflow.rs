//! Single-step building blocks shared by the experiment runner, the CLI and
//! the job service.

use serde::{Deserialize, Serialize};

use super::config::{low_dose_i0, MeasurementModel, Method};
use super::experiment::MethodOutcome;
use crate::ct::{
    compute_bz, log_linearize, simulate_from_line_integrals, GeometryPreset, Sinogram, SparseSystemMatrix,
    ZoomOperator,
};
use crate::error::{Error, Result};
use crate::image::{mse, ImageGrid, RoiSpec, Upsampler};
use crate::phantoms::{builtin, project, render_fov, EllipsePhantom};
use crate::regularizers::{DenoiserFamily, DenoiserSpec};
use crate::solvers::{
    fista_reconstruct_with, lambda_path_with, lzfg_with, lzsg_with, naive_zoom, Reconstruction, RunContext,
    SolverConfig, ZoomResult,
};

fn default_q() -> usize {
    2
}

/// Everything needed to regenerate a simulated scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub phantom: String,
    /// Geometry preset name.
    pub preset: String,
    #[serde(default = "low_dose_i0")]
    pub i0: f64,
    pub seed: u64,
    /// Ground-truth oversampling relative to the reconstruction grid.
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default)]
    pub measurement: MeasurementModel,
}

impl ScanSpec {
    pub fn validate(&self) -> Result<(EllipsePhantom, GeometryPreset)> {
        let phantom = builtin(&self.phantom)?;
        let preset = GeometryPreset::by_name(&self.preset)?;
        if !(self.i0.is_finite() && self.i0 > 0.0) {
            return Err(Error::invalid("i0", "must be positive"));
        }
        if self.q == 0 {
            return Err(Error::invalid("q", "must be at least 1"));
        }
        Ok((phantom, preset))
    }

    pub fn system_matrix(&self) -> Result<SparseSystemMatrix> {
        let (_, preset) = self.validate()?;
        SparseSystemMatrix::build(&preset.geometry(), preset.side, preset.side)
    }

    /// Log-linearized measurements and the ground truth rendered `q` times finer.
    pub fn simulate(&self, a: &SparseSystemMatrix) -> Result<(Sinogram, ImageGrid)> {
        let (phantom, preset) = self.validate()?;
        simulate_measurements(&phantom, &preset, self.q, self.measurement, self.i0, self.seed, a)
    }
}

pub fn simulate_measurements(
    phantom: &EllipsePhantom,
    preset: &GeometryPreset,
    q: usize,
    measurement: MeasurementModel,
    i0: f64,
    seed: u64,
    a: &SparseSystemMatrix,
) -> Result<(Sinogram, ImageGrid)> {
    let fine_side = preset.side * q;
    let truth = render_fov(phantom, fine_side, preset.fov)?;
    let line = match measurement {
        MeasurementModel::FineGrid => {
            let fine = SparseSystemMatrix::build(&a.geometry().refined(q), fine_side, fine_side)?;
            fine.forward(&truth)?
        }
        MeasurementModel::Analytic => project(phantom, a.geometry(), preset.fov),
        MeasurementModel::InverseCrime => a.forward(&render_fov(phantom, preset.side, preset.fov)?)?,
    };
    let counts = simulate_from_line_integrals(&line, i0, seed)?;
    Ok((log_linearize(&counts, i0)?, truth))
}

/// [`super::grid_search_lambda`] with an observer shared by all runs.
pub fn grid_search_lambda_with(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x_truth: &ImageGrid,
    grid: &[f64],
    cfg: &SolverConfig,
    ctx: &mut RunContext<'_>,
) -> Result<(f64, Reconstruction)> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "lambda grid is empty"));
    }
    let mut best: Option<(f64, f64, Reconstruction)> = None;
    for &lambda in grid {
        let rec = fista_reconstruct_with(a, b, lambda, cfg, None, &mut ctx.reborrow())?;
        let err = mse(&rec.image, x_truth)?;
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, lambda, rec));
        }
    }
    let (_, lambda, rec) = best.expect("nonempty grid");
    Ok((lambda, rec))
}

/// Zoom operator for `roi` with the data term taken from `b` minus the
/// first-stage image outside the ROI.
pub fn zoom_operator(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x1: &ImageGrid,
    roi: &RoiSpec,
    upsampler: Upsampler,
) -> Result<ZoomOperator> {
    let bz = compute_bz(a, b, x1, roi)?;
    ZoomOperator::new(a, roi, &bz, upsampler)
}

/// Runs one zoom method from the naive start. `denoiser` must belong to the
/// method's family and is ignored by the naive zoom.
#[allow(clippy::too_many_arguments)]
pub fn run_zoom(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x1: &ImageGrid,
    roi: &RoiSpec,
    method: Method,
    denoiser: &DenoiserSpec,
    cfg: &SolverConfig,
    upsampler: Upsampler,
    ctx: &mut RunContext<'_>,
) -> Result<MethodOutcome> {
    let init = naive_zoom(x1, roi)?;
    let Some(family) = method.family() else {
        return Ok(MethodOutcome {
            method,
            image: init,
            result: None,
        });
    };
    if denoiser.family() != Some(family) {
        return Err(Error::invalid(
            "denoiser",
            format!("{} needs a {family:?} denoiser", method.name()),
        ));
    }
    let op = zoom_operator(a, b, x1, roi, upsampler)?;
    let result = match method {
        Method::LzsgTv => lzsg_with(&op, &init, denoiser, cfg, ctx)?,
        _ => lzfg_with(&op, &init, denoiser, cfg, ctx)?,
    };
    Ok(MethodOutcome {
        method,
        image: result.x_high.clone(),
        result: Some(result),
    })
}

/// Warm-started LZFG path over `grid` from the naive start, in grid order.
#[allow(clippy::too_many_arguments)]
pub fn run_path(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x1: &ImageGrid,
    roi: &RoiSpec,
    grid: &[f64],
    family: DenoiserFamily,
    cfg: &SolverConfig,
    upsampler: Upsampler,
    ctx: &mut RunContext<'_>,
) -> Result<Vec<ZoomResult>> {
    let init = naive_zoom(x1, roi)?;
    let op = zoom_operator(a, b, x1, roi, upsampler)?;
    lambda_path_with(&op, &init, grid, family, cfg, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScanSpec {
        ScanSpec {
            phantom: "shepp_logan".into(),
            preset: "tiny".into(),
            i0: 1e4,
            seed: 3,
            q: 2,
            measurement: MeasurementModel::FineGrid,
        }
    }

    #[test]
    fn scan_validation_names_the_problem() {
        let mut s = tiny();
        s.phantom = "brain".into();
        assert!(s.validate().unwrap_err().to_string().contains("unknown phantom"));
        let mut s = tiny();
        s.preset = "huge".into();
        assert!(s.validate().unwrap_err().to_string().contains("unknown preset"));
    }

    #[test]
    fn simulation_is_seeded() {
        let s = tiny();
        let a = s.system_matrix().unwrap();
        let (b1, t1) = s.simulate(&a).unwrap();
        let (b2, _) = s.simulate(&a).unwrap();
        assert_eq!(b1.values(), b2.values());
        assert_eq!(t1.width(), 64);
    }

    #[test]
    fn naive_method_ignores_the_denoiser() {
        let s = tiny();
        let a = s.system_matrix().unwrap();
        let (b, _) = s.simulate(&a).unwrap();
        let x1 = ImageGrid::filled(32, 32, a.geometry().pixel_size, 0.1);
        let roi = RoiSpec::new(4, 4, 8, 8, 2);
        let cfg = SolverConfig::with_iters(3);
        let ctx = &mut RunContext::default();
        let out = run_zoom(&a, &b, &x1, &roi, Method::Naive, &DenoiserSpec::Identity, &cfg, Upsampler::Bicubic, ctx)
            .unwrap();
        assert!(out.result.is_none());
        assert_eq!(out.image.width(), 16);
        let err = run_zoom(&a, &b, &x1, &roi, Method::LzfgTv, &DenoiserSpec::nlm(0.1), &cfg, Upsampler::Bicubic, ctx)
            .unwrap_err();
        assert!(err.to_string().contains("denoiser"));
    }
}
