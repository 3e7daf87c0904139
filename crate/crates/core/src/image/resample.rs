//! Separable bicubic resampling by integer factors.
//!
//! Coordinates follow the pixel-center convention: output pixel `i` of a
//! resize by `scale` samples the input at `(i + 0.5) / scale - 0.5`. When
//! shrinking with antialiasing the kernel is stretched by the reduction
//! factor. Taps falling outside the image are clamped to the nearest edge
//! pixel, and every tap set is normalized to sum to one.

use serde::{Deserialize, Serialize};

use super::ImageGrid;
use crate::error::{Error, Result};

/// Keys cubic convolution kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleKernel {
    /// Shape parameter, `-0.5` for the classic bicubic kernel.
    pub a: f64,
    /// Stretch the kernel by the reduction factor when downsampling.
    pub antialias: bool,
}

impl Default for ResampleKernel {
    fn default() -> Self {
        Self {
            a: -0.5,
            antialias: true,
        }
    }
}

impl ResampleKernel {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let a = self.a;
        let x = x.abs();
        if x <= 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
        } else {
            0.0
        }
    }

    fn shrink_taps(&self, n_in: usize, n_out: usize, q: usize) -> AxisTaps {
        let stretch = if self.antialias { q as f64 } else { 1.0 };
        let support = 2.0 * stretch;
        let mut taps = AxisTaps::with_capacity(n_out);
        for i in 0..n_out {
            let center = (i as f64 + 0.5) * q as f64 - 0.5;
            let lo = (center - support).ceil() as i64;
            let hi = (center + support).floor() as i64;
            let set = (lo..=hi)
                .map(|j| (j, self.eval((center - j as f64) / stretch)))
                .filter(|&(_, w)| w != 0.0);
            taps.push_normalized(set, n_in);
        }
        taps
    }

    fn grow_taps(&self, n_in: usize, n_out: usize, q: usize) -> AxisTaps {
        let mut taps = AxisTaps::with_capacity(n_out);
        for i in 0..n_out {
            let center = (i as f64 + 0.5) / q as f64 - 0.5;
            let base = center.floor() as i64;
            let set = (base - 1..=base + 2)
                .map(|j| (j, self.eval(center - j as f64)))
                .filter(|&(_, w)| w != 0.0);
            taps.push_normalized(set, n_in);
        }
        taps
    }
}

/// Choice of the operator that maps low-resolution gradients back to the
/// high-resolution grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampler {
    /// Independent bicubic interpolation.
    #[default]
    Bicubic,
    /// Exact transpose of the bicubic downsampler.
    AdjointOfDownsample,
}

/// Flattened per-output tap lists for one axis.
#[derive(Debug, Clone)]
struct AxisTaps {
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisTaps {
    fn with_capacity(n_out: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_out + 1);
        offsets.push(0);
        Self {
            offsets,
            index: Vec::new(),
            weight: Vec::new(),
        }
    }

    fn push_normalized(&mut self, set: impl Iterator<Item = (i64, f64)>, n_in: usize) {
        let start = self.index.len();
        for (j, w) in set {
            self.index.push(j.clamp(0, n_in as i64 - 1) as usize);
            self.weight.push(w);
        }
        let total: f64 = self.weight[start..].iter().sum();
        for w in &mut self.weight[start..] {
            *w /= total;
        }
        self.offsets.push(self.index.len());
    }

    fn n_out(&self) -> usize {
        self.offsets.len() - 1
    }

    fn n_taps(&self) -> usize {
        self.index.len()
    }

    #[inline]
    fn taps(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.index[range.clone()].iter().copied().zip(self.weight[range].iter().copied())
    }

    /// Resamples every row of a `height x n_in` buffer.
    fn along_rows(&self, src: &[f64], n_in: usize, height: usize) -> Vec<f64> {
        let n_out = self.n_out();
        let mut out = vec![0.0; height * n_out];
        for r in 0..height {
            let row = &src[r * n_in..(r + 1) * n_in];
            for (i, o) in out[r * n_out..(r + 1) * n_out].iter_mut().enumerate() {
                *o = self.taps(i).map(|(j, w)| w * row[j]).sum();
            }
        }
        out
    }

    /// Resamples every column of a `n_in x width` buffer.
    fn along_cols(&self, src: &[f64], n_in: usize, width: usize) -> Vec<f64> {
        debug_assert_eq!(src.len(), n_in * width);
        let n_out = self.n_out();
        let mut out = vec![0.0; n_out * width];
        for i in 0..n_out {
            let dst = &mut out[i * width..(i + 1) * width];
            for (j, w) in self.taps(i) {
                let row = &src[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += w * s;
                }
            }
        }
        out
    }

    fn along_rows_transposed(&self, src: &[f64], n_in: usize, height: usize) -> Vec<f64> {
        let n_out = self.n_out();
        let mut out = vec![0.0; height * n_in];
        for r in 0..height {
            let row = &src[r * n_out..(r + 1) * n_out];
            let dst = &mut out[r * n_in..(r + 1) * n_in];
            for (i, &v) in row.iter().enumerate() {
                for (j, w) in self.taps(i) {
                    dst[j] += w * v;
                }
            }
        }
        out
    }

    fn along_cols_transposed(&self, src: &[f64], n_in: usize, width: usize) -> Vec<f64> {
        let n_out = self.n_out();
        let mut out = vec![0.0; n_in * width];
        for i in 0..n_out {
            let row = &src[i * width..(i + 1) * width];
            for (j, w) in self.taps(i) {
                let dst = &mut out[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

/// Precomputed bicubic down/up-sampling between a `low_h x low_w` grid and
/// the `q`-times finer grid. Reused across solver iterations.
#[derive(Debug, Clone)]
pub struct Resampler {
    low_h: usize,
    low_w: usize,
    q: usize,
    down_w: AxisTaps,
    down_h: AxisTaps,
    up_w: AxisTaps,
    up_h: AxisTaps,
}

impl Resampler {
    pub fn new(low_h: usize, low_w: usize, q: usize, kernel: ResampleKernel) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("q", "zoom factor must be at least 1"));
        }
        if low_h == 0 || low_w == 0 {
            return Err(Error::invalid("dimensions", "empty low resolution grid"));
        }
        Ok(Self {
            low_h,
            low_w,
            q,
            down_w: kernel.shrink_taps(low_w * q, low_w, q),
            down_h: kernel.shrink_taps(low_h * q, low_h, q),
            up_w: kernel.grow_taps(low_w, low_w * q, q),
            up_h: kernel.grow_taps(low_h, low_h * q, q),
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn low_len(&self) -> usize {
        self.low_h * self.low_w
    }

    pub fn high_len(&self) -> usize {
        self.low_len() * self.q * self.q
    }

    /// High-res buffer to low-res buffer.
    pub fn down(&self, high: &[f64]) -> Vec<f64> {
        assert_eq!(high.len(), self.high_len());
        if self.q == 1 {
            return high.to_vec();
        }
        let tmp = self.down_w.along_rows(high, self.low_w * self.q, self.low_h * self.q);
        self.down_h.along_cols(&tmp, self.low_h * self.q, self.low_w)
    }

    /// Low-res buffer to high-res buffer by bicubic interpolation.
    pub fn up(&self, low: &[f64]) -> Vec<f64> {
        assert_eq!(low.len(), self.low_len());
        if self.q == 1 {
            return low.to_vec();
        }
        let tmp = self.up_w.along_rows(low, self.low_w, self.low_h);
        self.up_h.along_cols(&tmp, self.low_h, self.low_w * self.q)
    }

    /// Transpose of [`Resampler::down`].
    pub fn down_adjoint(&self, low: &[f64]) -> Vec<f64> {
        assert_eq!(low.len(), self.low_len());
        if self.q == 1 {
            return low.to_vec();
        }
        let tmp = self.down_h.along_cols_transposed(low, self.low_h * self.q, self.low_w);
        self.down_w.along_rows_transposed(&tmp, self.low_w * self.q, self.low_h * self.q)
    }

    pub fn apply_up(&self, kind: Upsampler, low: &[f64]) -> Vec<f64> {
        match kind {
            Upsampler::Bicubic => self.up(low),
            Upsampler::AdjointOfDownsample => self.down_adjoint(low),
        }
    }

    /// Multiply-adds performed by one call to [`Resampler::down`].
    pub fn down_ops(&self) -> u64 {
        if self.q == 1 {
            return 0;
        }
        (self.low_h * self.q * self.down_w.n_taps() + self.low_w * self.down_h.n_taps()) as u64
    }

    /// Multiply-adds performed by one upsampling call of either kind.
    pub fn up_ops(&self, kind: Upsampler) -> u64 {
        if self.q == 1 {
            return 0;
        }
        match kind {
            Upsampler::Bicubic => {
                (self.low_h * self.up_w.n_taps() + self.low_w * self.q * self.up_h.n_taps()) as u64
            }
            Upsampler::AdjointOfDownsample => self.down_ops(),
        }
    }
}

fn check_factor(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::invalid("q", "zoom factor must be at least 1"));
    }
    Ok(())
}

/// Shrinks `img` by the integer factor `q` with the antialiased bicubic kernel.
pub fn downsample(img: &ImageGrid, q: usize) -> Result<ImageGrid> {
    check_factor(q)?;
    if !img.width().is_multiple_of(q) || !img.height().is_multiple_of(q) {
        return Err(Error::mismatch(
            "downsample",
            format!("dimensions divisible by {q}"),
            img.shape_string(),
        ));
    }
    let rs = Resampler::new(img.height() / q, img.width() / q, q, ResampleKernel::default())?;
    Ok(ImageGrid::from_parts(
        img.width() / q,
        img.height() / q,
        img.pixel_size() * q as f64,
        rs.down(img.values()),
    ))
}

/// Enlarges `img` by the integer factor `q` with bicubic interpolation.
pub fn upsample(img: &ImageGrid, q: usize) -> Result<ImageGrid> {
    check_factor(q)?;
    let rs = Resampler::new(img.height(), img.width(), q, ResampleKernel::default())?;
    Ok(ImageGrid::from_parts(
        img.width() * q,
        img.height() * q,
        img.pixel_size() / q as f64,
        rs.up(img.values()),
    ))
}

/// Applies the transpose of [`downsample`], mapping a low-res image to the
/// `q`-times finer grid.
pub fn upsample_adjoint(img: &ImageGrid, q: usize) -> Result<ImageGrid> {
    check_factor(q)?;
    let rs = Resampler::new(img.height(), img.width(), q, ResampleKernel::default())?;
    Ok(ImageGrid::from_parts(
        img.width() * q,
        img.height() * q,
        img.pixel_size() / q as f64,
        rs.down_adjoint(img.values()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageGrid {
        ImageGrid::new(w, h, 1.0, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_partition_of_unity() {
        let k = ResampleKernel::default();
        for t in [0.0, 0.1, 0.25, 0.5, 0.77, 0.99] {
            let s: f64 = (-2..=2).map(|j| k.eval(t - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.eval(2.0), 0.0);
    }

    #[test]
    fn constants_are_preserved() {
        for q in 1..=4 {
            let img = ImageGrid::filled(8 * q, 4 * q, 1.0, 3.25);
            let d = downsample(&img, q).unwrap();
            assert!(d.values().iter().all(|v| (v - 3.25).abs() < 1e-9));
            let u = upsample(&ImageGrid::filled(5, 3, 1.0, -1.5), q).unwrap();
            assert!(u.values().iter().all(|v| (v + 1.5).abs() < 1e-9));
            let round = downsample(&upsample(&ImageGrid::filled(6, 6, 1.0, 0.7), q).unwrap(), q).unwrap();
            assert!(round.values().iter().all(|v| (v - 0.7).abs() < 1e-9));
        }
    }

    #[test]
    fn unit_factor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random(&mut rng, 7, 5);
        assert_eq!(downsample(&img, 1).unwrap(), img);
        assert_eq!(upsample(&img, 1).unwrap(), img);
    }

    #[test]
    fn rejects_bad_factors() {
        let img = ImageGrid::zeros(6, 6, 1.0);
        assert!(downsample(&img, 4).is_err());
        assert!(downsample(&img, 0).is_err());
        assert!(upsample(&img, 0).is_err());
    }

    /// Direct 2-D convolution with clamped taps, normalized per output pixel.
    fn convolution_oracle(img: &ImageGrid, q: usize) -> Vec<f64> {
        let k = ResampleKernel::default();
        let (h, w) = (img.height(), img.width());
        let mut out = Vec::new();
        for oi in 0..h / q {
            for oj in 0..w / q {
                let cy = (oi as f64 + 0.5) * q as f64 - 0.5;
                let cx = (oj as f64 + 0.5) * q as f64 - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                for py in -20i64..(h as i64 + 20) {
                    for px in -20i64..(w as i64 + 20) {
                        let wy = k.eval((cy - py as f64) / q as f64);
                        let wx = k.eval((cx - px as f64) / q as f64);
                        let wt = wx * wy;
                        if wt == 0.0 {
                            continue;
                        }
                        let r = py.clamp(0, h as i64 - 1) as usize;
                        let c = px.clamp(0, w as i64 - 1) as usize;
                        acc += wt * img.get(r, c);
                        norm += wt;
                    }
                }
                out.push(acc / norm);
            }
        }
        out
    }

    #[test]
    fn impulse_downsample_matches_direct_convolution() {
        let mut v = vec![0.0; 64];
        v[3 * 8 + 4] = 1.0;
        let img = ImageGrid::new(8, 8, 1.0, v).unwrap();
        let got = downsample(&img, 2).unwrap();
        let want = convolution_oracle(&img, 2);
        for (g, w) in got.values().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = random(&mut rng, 12, 9);
        let got = downsample(&img, 3).unwrap();
        for (g, w) in got.values().iter().zip(&convolution_oracle(&img, 3)) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_reproduces_linear_ramp_in_interior() {
        let (w, h, q) = (10usize, 8usize, 2usize);
        let f = |y: f64, x: f64| 0.3 * x - 1.7 * y + 2.0;
        let vals = (0..h).flat_map(|r| (0..w).map(move |c| f(r as f64, c as f64))).collect();
        let img = ImageGrid::new(w, h, 1.0, vals).unwrap();
        let up = upsample(&img, q).unwrap();
        // exact where no tap is clamped: source coordinate in [1, n-3]
        for i in 0..h * q {
            for j in 0..w * q {
                let y = (i as f64 + 0.5) / q as f64 - 0.5;
                let x = (j as f64 + 0.5) / q as f64 - 0.5;
                if y < 1.0 || x < 1.0 || y > (h - 3) as f64 || x > (w - 3) as f64 {
                    continue;
                }
                assert!((up.get(i, j) - f(y, x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adjoint_variant_is_transpose_of_downsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in 1..=4 {
            let rs = Resampler::new(5, 6, q, ResampleKernel::default()).unwrap();
            let x: Vec<f64> = (0..rs.high_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..rs.low_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = rs.down(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&rs.down_adjoint(&y)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn deterministic_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random(&mut rng, 8, 8);
        let a = upsample(&img, 4).unwrap();
        let b = upsample(&img, 4).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn op_counts_match_tap_totals() {
        let rs = Resampler::new(50, 50, 4, ResampleKernel::default()).unwrap();
        // 16 stretched taps per output on each axis, 4 interpolation taps
        assert_eq!(rs.down_ops(), (200 * 50 * 16 + 50 * 50 * 16) as u64);
        assert_eq!(rs.up_ops(Upsampler::Bicubic), (50 * 200 * 4 + 200 * 200 * 4) as u64);
    }
}
