//! Block operators for a region of interest.
//!
//! The ROI block `A_z` is never formed as a separate operator of the full
//! image; instead the entries of `A` whose columns fall inside the ROI are
//! gathered once, which is the same as applying `A` to a zero image carrying
//! the ROI patch, but touches only the rays that actually cross the region.

use super::{SparseSystemMatrix, Sinogram, SinogramKind};
use crate::error::{Error, Result};
use crate::image::{zero_roi, ImageGrid, ResampleKernel, Resampler, RoiSpec, Upsampler};

/// The columns of `A` belonging to one ROI, indexed by local low-res pixel.
#[derive(Debug, Clone)]
pub struct RoiBlock {
    roi: RoiSpec,
    n_views: usize,
    n_det: usize,
    /// Matrix rows with at least one entry in the ROI, ascending.
    rows: Vec<u32>,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl RoiBlock {
    pub fn new(a: &SparseSystemMatrix, roi: &RoiSpec) -> Result<Self> {
        roi.validate(a.height(), a.width())?;
        let width = a.width();
        let mut rows = Vec::new();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..a.n_rows() {
            let (rc, rv) = a.row(i);
            let before = cols.len();
            for img_row in roi.row0..roi.row0 + roi.h {
                let lo = (img_row * width + roi.col0) as u32;
                let hi = lo + roi.w as u32;
                let start = rc.partition_point(|&c| c < lo);
                let end = rc.partition_point(|&c| c < hi);
                let local_row = (img_row - roi.row0) * roi.w;
                for k in start..end {
                    cols.push((local_row + (rc[k] - lo) as usize) as u32);
                    vals.push(rv[k]);
                }
            }
            if cols.len() > before {
                rows.push(i as u32);
                offsets.push(cols.len());
            }
        }
        Ok(Self {
            roi: *roi,
            n_views: a.n_views(),
            n_det: a.n_det(),
            rows,
            offsets,
            cols,
            vals,
        })
    }

    pub fn roi(&self) -> &RoiSpec {
        &self.roi
    }

    /// Number of matrix entries whose columns lie in the ROI.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn n_active_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn active_rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn n_rows_total(&self) -> usize {
        self.n_views * self.n_det
    }

    #[inline]
    fn entries(&self, k: usize) -> (&[u32], &[f64]) {
        let range = self.offsets[k]..self.offsets[k + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    /// `A_z v` on the active rows only. `active` selects which of the active
    /// rows to evaluate (by position in [`RoiBlock::active_rows`]); skipped
    /// rows are left untouched. Returns the multiply-add count.
    pub fn forward_active(&self, v: &[f64], out: &mut [f64], active: Option<&[bool]>) -> u64 {
        assert_eq!(v.len(), self.roi.low_res_len());
        assert_eq!(out.len(), self.rows.len());
        let mut ops = 0;
        for (k, o) in out.iter_mut().enumerate() {
            if active.is_some_and(|m| !m[k]) {
                continue;
            }
            let (cols, vals) = self.entries(k);
            let mut acc = 0.0;
            for (&c, &a) in cols.iter().zip(vals) {
                acc += a * v[c as usize];
            }
            *o = acc;
            ops += cols.len() as u64;
        }
        ops
    }

    /// `A_z^T r` from values on the active rows, accumulated in ascending
    /// row order. Returns the multiply-add count.
    pub fn adjoint_active(&self, r: &[f64], out: &mut [f64], active: Option<&[bool]>) -> u64 {
        assert_eq!(r.len(), self.rows.len());
        assert_eq!(out.len(), self.roi.low_res_len());
        out.fill(0.0);
        let mut ops = 0;
        for (k, &rk) in r.iter().enumerate() {
            if active.is_some_and(|m| !m[k]) {
                continue;
            }
            let (cols, vals) = self.entries(k);
            for (&c, &a) in cols.iter().zip(vals) {
                out[c as usize] += a * rk;
            }
            ops += cols.len() as u64;
        }
        ops
    }

    /// Full-length `A_z v` as a sinogram; also returns the multiply-add count.
    pub fn forward(&self, v_low: &ImageGrid) -> Result<(Sinogram, u64)> {
        if v_low.height() != self.roi.h || v_low.width() != self.roi.w {
            return Err(Error::mismatch(
                "roi_forward",
                format!("{}x{}", self.roi.h, self.roi.w),
                v_low.shape_string(),
            ));
        }
        let mut active = vec![0.0; self.rows.len()];
        let ops = self.forward_active(v_low.values(), &mut active, None);
        let mut full = vec![0.0; self.n_rows_total()];
        for (&i, v) in self.rows.iter().zip(active) {
            full[i as usize] = v;
        }
        Ok((
            Sinogram::from_parts(self.n_views, self.n_det, SinogramKind::LogLinearized, full),
            ops,
        ))
    }

    /// `A_z^T y` restricted to the ROI columns, as an `h x w` image.
    pub fn adjoint(&self, y: &Sinogram, pixel_size: f64) -> Result<(ImageGrid, u64)> {
        if y.len() != self.n_rows_total() {
            return Err(Error::mismatch("roi adjoint", self.n_rows_total(), y.len()));
        }
        let gathered: Vec<f64> = self.rows.iter().map(|&i| y.values()[i as usize]).collect();
        let mut out = vec![0.0; self.roi.low_res_len()];
        let ops = self.adjoint_active(&gathered, &mut out, None);
        Ok((ImageGrid::from_parts(self.roi.w, self.roi.h, pixel_size, out), ops))
    }
}

/// Applies `A` to the low-res ROI patch `v_low` placed in an otherwise zero
/// image. Returns the sinogram and the number of multiply-adds performed.
pub fn roi_forward(a: &SparseSystemMatrix, roi: &RoiSpec, v_low: &ImageGrid) -> Result<(Sinogram, u64)> {
    RoiBlock::new(a, roi)?.forward(v_low)
}

/// Measurements explained by the ROI alone: `b - A x1` with the ROI pixels of
/// `x1` zeroed, i.e. `b - A_o x_o`.
pub fn compute_bz(a: &SparseSystemMatrix, b: &Sinogram, x1: &ImageGrid, roi: &RoiSpec) -> Result<Sinogram> {
    if b.kind != SinogramKind::LogLinearized {
        return Err(Error::invalid("b", "compute_bz needs log-linearized measurements"));
    }
    if b.len() != a.n_rows() {
        return Err(Error::mismatch("compute_bz sinogram", a.n_rows(), b.len()));
    }
    let outside = zero_roi(x1, roi)?;
    let ao = a.forward(&outside)?;
    let values = b.values().iter().zip(ao.values()).map(|(bi, ai)| bi - ai).collect();
    Ok(Sinogram::from_parts(b.n_views, b.n_det, SinogramKind::LogLinearized, values))
}

/// Which sinogram views contribute to a (possibly stochastic) gradient.
#[derive(Debug, Clone, Copy)]
pub enum ViewSelection<'a> {
    All,
    /// Mask over views plus the factor that makes the estimate unbiased.
    Subset { views: &'a [bool], scale: f64 },
}

/// Output of one gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub gradient: Vec<f64>,
    /// `0.5 * ||b_z - A_z D(v)||^2` over the selected rows.
    pub data_misfit: f64,
    pub ops: u64,
}

/// Everything needed to evaluate the zoom objective and its surrogate
/// gradient `U(A_z^T (A_z D(v) - b_z))` for one ROI job.
#[derive(Debug, Clone)]
pub struct ZoomOperator {
    block: RoiBlock,
    resampler: Resampler,
    upsampler: Upsampler,
    pixel_size_high: f64,
    /// b_z on the active rows.
    bz_active: Vec<f64>,
    /// Constant `0.5 * sum b_z^2` over rays that miss the ROI.
    misfit_offset: f64,
    /// View index of each active row.
    row_views: Vec<u32>,
}

impl ZoomOperator {
    pub fn new(a: &SparseSystemMatrix, roi: &RoiSpec, bz: &Sinogram, upsampler: Upsampler) -> Result<Self> {
        if bz.len() != a.n_rows() {
            return Err(Error::mismatch("zoom operator b_z", a.n_rows(), bz.len()));
        }
        let block = RoiBlock::new(a, roi)?;
        let resampler = Resampler::new(roi.h, roi.w, roi.q, ResampleKernel::default())?;
        let bz_active: Vec<f64> = block.rows.iter().map(|&i| bz.values()[i as usize]).collect();
        let mut is_active = vec![false; a.n_rows()];
        for &i in &block.rows {
            is_active[i as usize] = true;
        }
        let misfit_offset = 0.5
            * bz.values()
                .iter()
                .zip(&is_active)
                .filter(|(_, &act)| !act)
                .map(|(v, _)| v * v)
                .sum::<f64>();
        let row_views = block.rows.iter().map(|&i| i / a.n_det() as u32).collect();
        Ok(Self {
            block,
            resampler,
            upsampler,
            pixel_size_high: a.pixel_size() / roi.q as f64,
            bz_active,
            misfit_offset,
            row_views,
        })
    }

    pub fn roi(&self) -> &RoiSpec {
        self.block.roi()
    }

    pub fn block(&self) -> &RoiBlock {
        &self.block
    }

    pub fn resampler(&self) -> &Resampler {
        &self.resampler
    }

    pub fn upsampler(&self) -> Upsampler {
        self.upsampler
    }

    pub fn n_views(&self) -> usize {
        self.block.n_views
    }

    pub fn pixel_size_high(&self) -> f64 {
        self.pixel_size_high
    }

    pub fn high_res_len(&self) -> usize {
        self.block.roi.high_res_len()
    }

    /// Wraps a high-res buffer as an ROI image.
    pub fn high_res_image(&self, values: Vec<f64>) -> ImageGrid {
        let roi = self.roi();
        ImageGrid::from_parts(roi.high_res_width(), roi.high_res_height(), self.pixel_size_high, values)
    }

    fn row_mask(&self, views: &[bool]) -> Vec<bool> {
        self.row_views.iter().map(|&v| views[v as usize]).collect()
    }

    /// `0.5 * ||b_z - A_z D(v)||^2` over all rays.
    pub fn objective(&self, v_high: &[f64]) -> (f64, u64) {
        let low = self.resampler.down(v_high);
        let mut fwd = vec![0.0; self.block.rows.len()];
        let mut ops = self.resampler.down_ops();
        ops += self.block.forward_active(&low, &mut fwd, None);
        let active: f64 = fwd.iter().zip(&self.bz_active).map(|(f, b)| (f - b) * (f - b)).sum();
        (self.misfit_offset + 0.5 * active, ops)
    }

    /// Surrogate gradient of the zoom objective at `v_high`. With
    /// [`Upsampler::AdjointOfDownsample`] this is the exact gradient.
    pub fn gradient(&self, v_high: &[f64], selection: ViewSelection<'_>) -> GradientEval {
        let mask = match selection {
            ViewSelection::All => None,
            ViewSelection::Subset { views, .. } => Some(self.row_mask(views)),
        };
        let mask = mask.as_deref();
        let low = self.resampler.down(v_high);
        let mut ops = self.resampler.down_ops();

        let mut resid = vec![0.0; self.block.rows.len()];
        ops += self.block.forward_active(&low, &mut resid, mask);
        let mut misfit = 0.0;
        for (k, (r, b)) in resid.iter_mut().zip(&self.bz_active).enumerate() {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            *r -= b;
            misfit += *r * *r;
            ops += 1;
        }

        let mut back = vec![0.0; self.block.roi.low_res_len()];
        ops += self.block.adjoint_active(&resid, &mut back, mask);
        if let ViewSelection::Subset { scale, .. } = selection {
            for g in &mut back {
                *g *= scale;
            }
            ops += back.len() as u64;
        }
        let gradient = self.resampler.apply_up(self.upsampler, &back);
        ops += self.resampler.up_ops(self.upsampler);
        GradientEval {
            gradient,
            data_misfit: 0.5 * misfit,
            ops,
        }
    }
}

impl ZoomOperator {
    /// `U(A_z^T A_z D(v))`, the data-free part of the gradient. Used to
    /// estimate the step size.
    pub fn normal(&self, v_high: &[f64]) -> (Vec<f64>, u64) {
        let low = self.resampler.down(v_high);
        let mut ops = self.resampler.down_ops();
        let mut fwd = vec![0.0; self.block.rows.len()];
        ops += self.block.forward_active(&low, &mut fwd, None);
        let mut back = vec![0.0; self.block.roi.low_res_len()];
        ops += self.block.adjoint_active(&fwd, &mut back, None);
        ops += self.resampler.up_ops(self.upsampler);
        (self.resampler.apply_up(self.upsampler, &back), ops)
    }
}

/// One-shot evaluation of `U(A_z^T (A_z D(v) - b_z))` for a high-res ROI image.
pub fn roi_gradient(
    a: &SparseSystemMatrix,
    roi: &RoiSpec,
    bz: &Sinogram,
    v: &ImageGrid,
    upsampler: Upsampler,
) -> Result<ImageGrid> {
    if v.height() != roi.high_res_height() || v.width() != roi.high_res_width() {
        return Err(Error::mismatch(
            "roi_gradient",
            format!("{}x{}", roi.high_res_height(), roi.high_res_width()),
            v.shape_string(),
        ));
    }
    let op = ZoomOperator::new(a, roi, bz, upsampler)?;
    let eval = op.gradient(v.values(), ViewSelection::All);
    Ok(op.high_res_image(eval.gradient))
}
