//! Local zoom-in solvers and the measurement-blind baseline.

use std::cell::Cell;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engine::{self, LoopSettings, RunContext, SmoothTerm};
use super::{estimate_lipschitz, Momentum, SolverConfig, StepRule, StepSchedule};
use crate::ct::{Sinogram, SparseSystemMatrix, ViewSelection, ZoomOperator};
use crate::error::{Error, Result};
use crate::image::{extract_roi, upsample, ImageGrid, RoiSpec, Upsampler};
use crate::regularizers::DenoiserSpec;

#[derive(Debug, Clone)]
pub struct ZoomResult {
    /// Refined ROI on the `q`-times finer grid.
    pub x_high: ImageGrid,
    /// `0.5 * ||b_z - A_z D(x_k)||^2` per iteration.
    pub objective_trace: Vec<f64>,
    /// PSNR against the supplied ground truth, empty without one.
    pub psnr_trace: Vec<f64>,
    /// Elapsed milliseconds at the end of each iteration.
    pub wall_ms: Vec<f64>,
    pub iterations_run: usize,
    pub wall_time_ms: f64,
    pub converged: bool,
    /// Multiply-adds spent in the ROI block, resampling and step estimation.
    pub op_count: u64,
    pub step: f64,
    pub denoiser: DenoiserSpec,
}

/// Bicubic enlargement of the first-stage crop. Takes no measurements.
pub fn naive_zoom(x1: &ImageGrid, roi: &RoiSpec) -> Result<ImageGrid> {
    upsample(&extract_roi(x1, roi)?, roi.q)
}

struct ZoomTerm<'a> {
    op: &'a ZoomOperator,
    /// `(views per minibatch, rng)` for the stochastic solver.
    minibatch: Option<(usize, ChaCha8Rng)>,
    mask: Vec<bool>,
}

impl SmoothTerm for ZoomTerm<'_> {
    fn gradient(&mut self, y: &[f64], _k: usize) -> Result<(Vec<f64>, u64)> {
        let eval = match &mut self.minibatch {
            None => self.op.gradient(y, ViewSelection::All),
            Some((mb, rng)) => {
                let n_views = self.op.n_views();
                let mut picked = sample(rng, n_views, *mb).into_vec();
                picked.sort_unstable();
                self.mask.iter_mut().for_each(|m| *m = false);
                for v in picked {
                    self.mask[v] = true;
                }
                let scale = n_views as f64 / *mb as f64;
                self.op.gradient(
                    y,
                    ViewSelection::Subset {
                        views: &self.mask,
                        scale,
                    },
                )
            }
        };
        Ok((eval.gradient, eval.ops))
    }

    fn objective(&self, x: &ImageGrid) -> (f64, u64) {
        self.op.objective(x.values())
    }

    fn image(&self, values: Vec<f64>) -> ImageGrid {
        self.op.high_res_image(values)
    }
}

/// Dominant eigenvalue of `v -> U(A_z^T A_z D(v))` and the multiply-adds spent.
pub(crate) fn zoom_lipschitz(op: &ZoomOperator, iters: usize, seed: u64) -> Result<(f64, u64)> {
    let ops = Cell::new(0u64);
    let l = estimate_lipschitz(
        |v| {
            let (out, n) = op.normal(v);
            ops.set(ops.get() + n);
            out
        },
        op.high_res_len(),
        iters,
        seed,
    )?;
    Ok((l, ops.get()))
}

pub(crate) fn resolve_step(op: &ZoomOperator, cfg: &SolverConfig) -> Result<(f64, u64)> {
    match cfg.step {
        StepRule::Explicit(eta) => Ok((eta, 0)),
        StepRule::Auto => {
            let (l, ops) = zoom_lipschitz(op, cfg.lipschitz_iters, cfg.seed)?;
            if l <= 0.0 {
                return Err(Error::invalid("roi", "no ray crosses the region of interest"));
            }
            Ok((1.0 / l, ops))
        }
    }
}

fn check_inputs(op: &ZoomOperator, init: &ImageGrid, denoiser: &DenoiserSpec, ctx: &RunContext<'_>) -> Result<()> {
    denoiser.validate()?;
    let roi = op.roi();
    let want = format!("{}x{}", roi.high_res_height(), roi.high_res_width());
    if init.height() != roi.high_res_height() || init.width() != roi.high_res_width() {
        return Err(Error::mismatch("zoom init", want, init.shape_string()));
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("zoom init"));
    }
    if let Some(t) = ctx.truth {
        if !t.same_shape(init) {
            return Err(Error::mismatch("zoom ground truth", want, t.shape_string()));
        }
    }
    Ok(())
}

fn finish(out: engine::LoopOutput, ops: u64, step: f64, denoiser: DenoiserSpec) -> ZoomResult {
    let wall_time_ms = out.wall_ms.last().copied().unwrap_or(0.0);
    ZoomResult {
        x_high: out.x,
        objective_trace: out.objective_trace,
        psnr_trace: out.psnr_trace,
        wall_ms: out.wall_ms,
        iterations_run: out.iterations_run,
        wall_time_ms,
        converged: out.converged,
        op_count: ops + out.ops,
        step,
        denoiser,
    }
}

/// Local zoom-in with fast gradients, using the bicubic upsampler.
pub fn lzfg(
    a: &SparseSystemMatrix,
    bz: &Sinogram,
    roi: &RoiSpec,
    init: &ImageGrid,
    denoiser: &DenoiserSpec,
    cfg: &SolverConfig,
) -> Result<ZoomResult> {
    let op = ZoomOperator::new(a, roi, bz, Upsampler::Bicubic)?;
    lzfg_with(&op, init, denoiser, cfg, &mut RunContext::default())
}

/// [`lzfg`] on a prepared operator, with optional truth and observer.
pub fn lzfg_with(
    op: &ZoomOperator,
    init: &ImageGrid,
    denoiser: &DenoiserSpec,
    cfg: &SolverConfig,
    ctx: &mut RunContext<'_>,
) -> Result<ZoomResult> {
    cfg.validate(Some(op.n_views()))?;
    check_inputs(op, init, denoiser, ctx)?;
    let (step, ops) = resolve_step(op, cfg)?;
    let mut term = ZoomTerm {
        op,
        minibatch: None,
        mask: Vec::new(),
    };
    let steps = |_k: usize| step;
    let out = engine::run(
        &mut term,
        init,
        LoopSettings {
            denoiser,
            momentum: cfg.momentum,
            max_iters: cfg.max_iters,
            stop_tol: cfg.stop_tol,
            step: &steps,
        },
        ctx,
    )?;
    Ok(finish(out, ops, step, *denoiser))
}

/// Local zoom-in with stochastic gradients over whole-view minibatches.
pub fn lzsg(
    a: &SparseSystemMatrix,
    bz: &Sinogram,
    roi: &RoiSpec,
    init: &ImageGrid,
    denoiser: &DenoiserSpec,
    cfg: &SolverConfig,
) -> Result<ZoomResult> {
    let op = ZoomOperator::new(a, roi, bz, Upsampler::Bicubic)?;
    lzsg_with(&op, init, denoiser, cfg, &mut RunContext::default())
}

/// [`lzsg`] on a prepared operator. Momentum is always the `(k-1)/(k+3)` rule.
pub fn lzsg_with(
    op: &ZoomOperator,
    init: &ImageGrid,
    denoiser: &DenoiserSpec,
    cfg: &SolverConfig,
    ctx: &mut RunContext<'_>,
) -> Result<ZoomResult> {
    cfg.validate(Some(op.n_views()))?;
    let mb = cfg
        .minibatch_views
        .ok_or_else(|| Error::invalid("minibatch_views", "required by the stochastic solver"))?;
    check_inputs(op, init, denoiser, ctx)?;
    let (base, ops) = resolve_step(op, cfg)?;
    let schedule: StepSchedule = cfg.step_schedule;
    let mut term = ZoomTerm {
        op,
        minibatch: Some((mb, ChaCha8Rng::seed_from_u64(cfg.seed))),
        mask: vec![false; op.n_views()],
    };
    let steps = move |k: usize| schedule.step(base, k);
    let out = engine::run(
        &mut term,
        init,
        LoopSettings {
            denoiser,
            momentum: Momentum::Chambolle,
            max_iters: cfg.max_iters,
            stop_tol: cfg.stop_tol,
            step: &steps,
        },
        ctx,
    )?;
    Ok(finish(out, ops, schedule.step(base, 1), *denoiser))
}
