//! Image containers, ROI cropping/embedding and quality metrics.
//!
//! Images are dense row-major `f64` grids. Row 0 is the top of the image and
//! column 0 its left edge; every geometric operation in the crate follows
//! that convention.

mod resample;

pub use resample::{downsample, upsample, upsample_adjoint, ResampleKernel, Resampler, Upsampler};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported when the mean squared error is numerically zero.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixel_size: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("dimensions", format!("{width}x{height} is empty")));
        }
        if values.len() != width * height {
            return Err(Error::mismatch("image values", width * height, values.len()));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::invalid("pixel_size", format!("{pixel_size} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image construction"));
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, pixel_size: f64) -> Self {
        Self::filled(width, height, pixel_size, 0.0)
    }

    pub fn filled(width: usize, height: usize, pixel_size: f64, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        assert!(value.is_finite());
        Self {
            width,
            height,
            pixel_size,
            values: vec![value; width * height],
        }
    }

    /// Builds an image from values the caller already knows to be finite
    /// (outputs of the crate's own linear maps).
    pub(crate) fn from_parts(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            pixel_size,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Self {
        self.pixel_size = pixel_size;
        self
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.width,
            self.height,
            self.pixel_size,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}", self.height, self.width)
    }
}

/// Rectangle selected on the low-resolution image plus the zoom factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub row0: usize,
    pub col0: usize,
    pub h: usize,
    pub w: usize,
    pub q: usize,
}

impl RoiSpec {
    pub fn new(row0: usize, col0: usize, h: usize, w: usize, q: usize) -> Self {
        Self { row0, col0, h, w, q }
    }

    /// The whole `height` x `width` image at zoom factor `q`.
    pub fn full(height: usize, width: usize, q: usize) -> Self {
        Self::new(0, 0, height, width, q)
    }

    pub fn high_res_height(&self) -> usize {
        self.h * self.q
    }

    pub fn high_res_width(&self) -> usize {
        self.w * self.q
    }

    /// Number of unknowns of the high resolution block, `h*w*q^2`.
    pub fn high_res_len(&self) -> usize {
        self.high_res_height() * self.high_res_width()
    }

    pub fn low_res_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.h && col >= self.col0 && col < self.col0 + self.w
    }

    /// Checks the rectangle against an image of the given size.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.h == 0 {
            return Err(Error::invalid("roi", "height must be at least 1"));
        }
        if self.w == 0 {
            return Err(Error::invalid("roi", "width must be at least 1"));
        }
        if self.q == 0 {
            return Err(Error::invalid("roi", "zoom factor q must be at least 1"));
        }
        if self.row0 + self.h > height {
            return Err(Error::RoiBounds {
                edge: "bottom",
                value: self.row0 + self.h,
                limit: height,
            });
        }
        if self.col0 + self.w > width {
            return Err(Error::RoiBounds {
                edge: "right",
                value: self.col0 + self.w,
                limit: width,
            });
        }
        Ok(())
    }
}

/// Copies the `h x w` block selected by `roi` out of `img`.
pub fn extract_roi(img: &ImageGrid, roi: &RoiSpec) -> Result<ImageGrid> {
    roi.validate(img.height, img.width)?;
    let mut values = Vec::with_capacity(roi.low_res_len());
    for r in roi.row0..roi.row0 + roi.h {
        let start = r * img.width + roi.col0;
        values.extend_from_slice(&img.values[start..start + roi.w]);
    }
    Ok(ImageGrid::from_parts(roi.w, roi.h, img.pixel_size, values))
}

/// Places `patch` at the ROI location of an otherwise zero `height x width` image.
pub fn embed_roi(height: usize, width: usize, roi: &RoiSpec, patch: &ImageGrid) -> Result<ImageGrid> {
    roi.validate(height, width)?;
    if patch.height != roi.h || patch.width != roi.w {
        return Err(Error::mismatch(
            "embed_roi patch",
            format!("{}x{}", roi.h, roi.w),
            patch.shape_string(),
        ));
    }
    let mut values = vec![0.0; height * width];
    for (pr, r) in (roi.row0..roi.row0 + roi.h).enumerate() {
        let start = r * width + roi.col0;
        values[start..start + roi.w].copy_from_slice(&patch.values[pr * roi.w..(pr + 1) * roi.w]);
    }
    Ok(ImageGrid::from_parts(width, height, patch.pixel_size, values))
}

/// Returns `img` with the ROI pixels set to zero (the complement part `x_o`).
pub fn zero_roi(img: &ImageGrid, roi: &RoiSpec) -> Result<ImageGrid> {
    roi.validate(img.height, img.width)?;
    let mut out = img.clone();
    for r in roi.row0..roi.row0 + roi.h {
        let start = r * img.width + roi.col0;
        out.values[start..start + roi.w].fill(0.0);
    }
    Ok(out)
}

pub fn mse(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    if !x.same_shape(reference) {
        return Err(Error::mismatch("mse", reference.shape_string(), x.shape_string()));
    }
    let sum: f64 = x
        .values
        .iter()
        .zip(&reference.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid("peak", format!("{peak} must be positive")));
    }
    let err = mse(x, reference)?;
    if err < peak * peak * 10f64.powf(-PSNR_CAP_DB / 10.0) {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// PSNR with the peak taken as the maximum of the reference image.
pub fn psnr_auto(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let peak = reference.max();
    psnr(x, reference, if peak > 0.0 { peak } else { 1.0 })
}
