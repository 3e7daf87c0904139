//! Zoom runs over a grid of regularization strengths.

use super::engine::RunContext;
use super::zoom::{lzfg_with, naive_zoom, ZoomResult};
use super::SolverConfig;
use crate::ct::{compute_bz, Sinogram, SparseSystemMatrix, ZoomOperator};
use crate::error::{Error, Result};
use crate::image::{ImageGrid, RoiSpec, Upsampler};
use crate::regularizers::DenoiserFamily;

/// Runs [`super::lzfg`] for every strength in `grid`, starting from the naive
/// zoom of `x1`. Results come back in grid order.
pub fn lambda_path(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x1: &ImageGrid,
    roi: &RoiSpec,
    grid: &[f64],
    family: DenoiserFamily,
    cfg: &SolverConfig,
) -> Result<Vec<ZoomResult>> {
    let bz = compute_bz(a, b, x1, roi)?;
    let op = ZoomOperator::new(a, roi, &bz, Upsampler::Bicubic)?;
    let init = naive_zoom(x1, roi)?;
    lambda_path_with(&op, &init, grid, family, cfg, &mut RunContext::default())
}

/// Strengths are visited in increasing order, each run warm-started from the
/// previous one; `init` seeds the weakest.
pub fn lambda_path_with(
    op: &ZoomOperator,
    init: &ImageGrid,
    grid: &[f64],
    family: DenoiserFamily,
    cfg: &SolverConfig,
    ctx: &mut RunContext<'_>,
) -> Result<Vec<ZoomResult>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "regularization path needs at least one strength"));
    }
    if let Some(bad) = grid.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid("grid", format!("strength {bad} is not finite")));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid[i].total_cmp(&grid[j]));

    let mut results: Vec<Option<ZoomResult>> = vec![None; grid.len()];
    let mut start = init.clone();
    for idx in order {
        let strength = grid[idx];
        let tag = |e: Error| match e {
            Error::Cancelled => Error::Cancelled,
            other => Error::PathEntry {
                strength,
                source: Box::new(other),
            },
        };
        let spec = family.spec(strength);
        spec.validate().map_err(tag)?;
        let res = lzfg_with(op, &start, &spec, cfg, &mut ctx.reborrow()).map_err(tag)?;
        start = res.x_high.clone();
        results[idx] = Some(res);
    }
    Ok(results.into_iter().map(|r| r.expect("every grid entry visited")).collect())
}
