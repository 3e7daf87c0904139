//! First-stage TV-regularized least-squares reconstruction.

use std::cell::Cell;

use super::engine::{self, LoopSettings, RunContext, SmoothTerm};
use super::{estimate_lipschitz, SolverConfig, StepRule};
use crate::ct::{SinogramKind, Sinogram, SparseSystemMatrix};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::regularizers::{total_variation, DenoiserSpec};

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ImageGrid,
    /// `0.5 * ||A x_k - b||^2 + lambda * TV(x_k)` per iteration.
    pub objective_trace: Vec<f64>,
    pub psnr_trace: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Multiply-adds spent in the system matrix, including step estimation.
    pub op_count: u64,
    pub step: f64,
    pub lambda: f64,
}

struct LeastSquares<'a> {
    a: &'a SparseSystemMatrix,
    b: &'a [f64],
    lambda: f64,
}

impl LeastSquares<'_> {
    fn residual(&self, x: &[f64]) -> (Vec<f64>, u64) {
        let mut r = vec![0.0; self.a.n_rows()];
        let ops = self.a.forward_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(self.b) {
            *ri -= bi;
        }
        (r, ops + self.b.len() as u64)
    }
}

impl SmoothTerm for LeastSquares<'_> {
    fn gradient(&mut self, y: &[f64], _k: usize) -> Result<(Vec<f64>, u64)> {
        let (r, mut ops) = self.residual(y);
        let mut g = vec![0.0; self.a.n_cols()];
        ops += self.a.adjoint_into(&r, &mut g);
        Ok((g, ops))
    }

    fn objective(&self, x: &ImageGrid) -> (f64, u64) {
        let (r, ops) = self.residual(x.values());
        let data = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        let reg = if self.lambda > 0.0 { self.lambda * total_variation(x) } else { 0.0 };
        (data + reg, ops)
    }

    fn image(&self, values: Vec<f64>) -> ImageGrid {
        ImageGrid::from_parts(self.a.width(), self.a.height(), self.a.pixel_size(), values)
    }
}

/// Spectral norm squared of `A`, i.e. the Lipschitz constant of the
/// least-squares gradient, together with the multiply-adds spent.
pub(crate) fn normal_lipschitz(a: &SparseSystemMatrix, iters: usize, seed: u64) -> Result<(f64, u64)> {
    let ops = Cell::new(0u64);
    let mut tmp = vec![0.0; a.n_rows()];
    let l = estimate_lipschitz(
        |v| {
            let mut out = vec![0.0; a.n_cols()];
            let n = a.forward_into(v, &mut tmp) + a.adjoint_into(&tmp, &mut out);
            ops.set(ops.get() + n);
            out
        },
        a.n_cols(),
        iters,
        seed,
    )?;
    Ok((l, ops.get()))
}

/// Minimizes `0.5 * ||A x - b||^2 + lambda * TV(x)` from a zero start.
pub fn fista_reconstruct(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Reconstruction> {
    fista_reconstruct_with(a, b, lambda, cfg, None, &mut RunContext::default())
}

pub fn fista_reconstruct_with(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    lambda: f64,
    cfg: &SolverConfig,
    init: Option<&ImageGrid>,
    ctx: &mut RunContext<'_>,
) -> Result<Reconstruction> {
    cfg.validate(None)?;
    if b.kind != SinogramKind::LogLinearized {
        return Err(Error::invalid("b", "first-stage reconstruction needs log-linearized data"));
    }
    if b.len() != a.n_rows() {
        return Err(Error::mismatch("fista_reconstruct sinogram", a.n_rows(), b.len()));
    }
    if b.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurements"));
    }
    let denoiser = if lambda == 0.0 { DenoiserSpec::Identity } else { DenoiserSpec::tv(lambda) };
    denoiser.validate()?;
    let init = match init {
        Some(x) => {
            if x.width() != a.width() || x.height() != a.height() {
                return Err(Error::mismatch(
                    "fista_reconstruct init",
                    format!("{}x{}", a.height(), a.width()),
                    x.shape_string(),
                ));
            }
            x.clone()
        }
        None => ImageGrid::zeros(a.width(), a.height(), a.pixel_size()),
    };
    if let Some(t) = ctx.truth {
        if !t.same_shape(&init) {
            return Err(Error::mismatch("fista_reconstruct truth", init.shape_string(), t.shape_string()));
        }
    }

    let (step, mut ops) = match cfg.step {
        StepRule::Explicit(eta) => (eta, 0),
        StepRule::Auto => {
            let (l, ops) = normal_lipschitz(a, cfg.lipschitz_iters, cfg.seed)?;
            if l <= 0.0 {
                return Err(Error::invalid("A", "system matrix is zero"));
            }
            (1.0 / l, ops)
        }
    };

    let mut term = LeastSquares {
        a,
        b: b.values(),
        lambda,
    };
    let steps = |_k: usize| step;
    let out = engine::run(
        &mut term,
        &init,
        LoopSettings {
            denoiser: &denoiser,
            momentum: cfg.momentum,
            max_iters: cfg.max_iters,
            stop_tol: cfg.stop_tol,
            step: &steps,
        },
        ctx,
    )?;
    ops += out.ops;
    Ok(Reconstruction {
        image: out.x,
        objective_trace: out.objective_trace,
        psnr_trace: out.psnr_trace,
        wall_ms: out.wall_ms,
        iterations_run: out.iterations_run,
        converged: out.converged,
        op_count: ops,
        step,
        lambda,
    })
}
