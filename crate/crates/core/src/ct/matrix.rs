//! Ray-driven system matrix in compressed row storage.
//!
//! Row `view * n_det + bin` holds the intersection lengths of that ray with
//! each pixel it crosses, found by walking the sorted crossings of the ray
//! with the grid lines (Siddon's method).

use super::{FanBeamGeometry, Sinogram, SinogramKind};
use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Segments shorter than this fraction of a pixel are dropped; they only
/// arise when a ray passes exactly through a grid corner.
const MIN_SEGMENT: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SparseSystemMatrix {
    geometry: FanBeamGeometry,
    width: usize,
    height: usize,
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSystemMatrix {
    pub fn build(geometry: &FanBeamGeometry, width: usize, height: usize) -> Result<Self> {
        geometry.validate(width, height)?;
        let n = geometry.n_rays();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut tracer = RayTracer::new(width, height, geometry.pixel_size);
        for view in 0..geometry.n_views {
            for bin in 0..geometry.n_det {
                let (src, det) = geometry.ray(view, bin);
                for &(c, v) in tracer.trace(src, det) {
                    cols.push(c);
                    vals.push(v);
                }
                row_offsets.push(cols.len());
            }
        }
        Ok(Self {
            geometry: *geometry,
            width,
            height,
            row_offsets,
            cols,
            vals,
        })
    }

    /// Assembles a matrix from raw CSR arrays, validating the storage invariants.
    pub fn from_csr(
        geometry: FanBeamGeometry,
        width: usize,
        height: usize,
        row_offsets: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        let n = geometry.n_rays();
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 || *row_offsets.last().unwrap() != cols.len() {
            return Err(Error::Format("row offsets inconsistent with entries".into()));
        }
        if cols.len() != vals.len() {
            return Err(Error::Format("column and value arrays differ in length".into()));
        }
        let d = width * height;
        for i in 0..n {
            let (s, e) = (row_offsets[i], row_offsets[i + 1]);
            if s > e {
                return Err(Error::Format(format!("row {i} has negative extent")));
            }
            let row = &cols[s..e];
            if row.windows(2).any(|p| p[0] >= p[1]) || row.iter().any(|&c| c as usize >= d) {
                return Err(Error::Format(format!("row {i} columns not strictly increasing in range")));
            }
        }
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format("matrix values must be finite and nonnegative".into()));
        }
        Ok(Self {
            geometry,
            width,
            height,
            row_offsets,
            cols,
            vals,
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.width * self.height
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn n_views(&self) -> usize {
        self.geometry.n_views
    }

    pub fn n_det(&self) -> usize {
        self.geometry.n_det
    }

    pub fn pixel_size(&self) -> f64 {
        self.geometry.pixel_size
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// `out = A x`. Returns the number of multiply-adds performed.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) -> u64 {
        assert_eq!(x.len(), self.n_cols());
        assert_eq!(out.len(), self.n_rows());
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *o = acc;
        }
        self.nnz() as u64
    }

    /// `out = A^T y`, accumulated row by row in ascending row order.
    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) -> u64 {
        assert_eq!(y.len(), self.n_rows());
        assert_eq!(out.len(), self.n_cols());
        out.fill(0.0);
        for (i, &yi) in y.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] += v * yi;
            }
        }
        self.nnz() as u64
    }

    pub fn forward(&self, x: &ImageGrid) -> Result<Sinogram> {
        if x.width() != self.width || x.height() != self.height {
            return Err(Error::mismatch(
                "forward",
                format!("{}x{}", self.height, self.width),
                x.shape_string(),
            ));
        }
        let mut out = vec![0.0; self.n_rows()];
        self.forward_into(x.values(), &mut out);
        Ok(Sinogram::from_parts(self.n_views(), self.n_det(), SinogramKind::LogLinearized, out))
    }

    pub fn adjoint(&self, y: &Sinogram) -> Result<ImageGrid> {
        if y.len() != self.n_rows() {
            return Err(Error::mismatch("adjoint", self.n_rows(), y.len()));
        }
        let mut out = vec![0.0; self.n_cols()];
        self.adjoint_into(y.values(), &mut out);
        Ok(ImageGrid::from_parts(self.width, self.height, self.pixel_size(), out))
    }
}

/// Reusable buffers for tracing rays through a fixed pixel grid.
struct RayTracer {
    width: usize,
    height: usize,
    pixel: f64,
    x0: f64,
    y_top: f64,
    alphas: Vec<f64>,
    entries: Vec<(u32, f64)>,
}

impl RayTracer {
    fn new(width: usize, height: usize, pixel: f64) -> Self {
        Self {
            width,
            height,
            pixel,
            x0: -0.5 * width as f64 * pixel,
            y_top: 0.5 * height as f64 * pixel,
            alphas: Vec::new(),
            entries: Vec::new(),
        }
    }

    fn trace(&mut self, src: [f64; 2], dst: [f64; 2]) -> &[(u32, f64)] {
        self.alphas.clear();
        self.entries.clear();
        let dx = dst[0] - src[0];
        let dy = dst[1] - src[1];
        let length = dx.hypot(dy);
        let (x_lo, x_hi) = (self.x0, -self.x0);
        let (y_lo, y_hi) = (-self.y_top, self.y_top);

        // parametric entry/exit of the bounding box
        let mut a_min = 0.0f64;
        let mut a_max = 1.0f64;
        for (s, d, lo, hi) in [(src[0], dx, x_lo, x_hi), (src[1], dy, y_lo, y_hi)] {
            if d == 0.0 {
                if s <= lo || s >= hi {
                    return &self.entries;
                }
            } else {
                let a1 = (lo - s) / d;
                let a2 = (hi - s) / d;
                a_min = a_min.max(a1.min(a2));
                a_max = a_max.min(a1.max(a2));
            }
        }
        if a_max <= a_min {
            return &self.entries;
        }

        self.alphas.push(a_min);
        self.alphas.push(a_max);
        if dx != 0.0 {
            for i in 0..=self.width {
                let a = (self.x0 + i as f64 * self.pixel - src[0]) / dx;
                if a > a_min && a < a_max {
                    self.alphas.push(a);
                }
            }
        }
        if dy != 0.0 {
            for j in 0..=self.height {
                let a = (self.y_top - j as f64 * self.pixel - src[1]) / dy;
                if a > a_min && a < a_max {
                    self.alphas.push(a);
                }
            }
        }
        self.alphas.sort_unstable_by(|a, b| a.total_cmp(b));

        for k in 0..self.alphas.len() - 1 {
            let (a1, a2) = (self.alphas[k], self.alphas[k + 1]);
            let seg = (a2 - a1) * length;
            if seg <= MIN_SEGMENT * self.pixel {
                continue;
            }
            let am = 0.5 * (a1 + a2);
            let x = src[0] + am * dx;
            let y = src[1] + am * dy;
            let col = (((x - self.x0) / self.pixel).floor() as i64).clamp(0, self.width as i64 - 1);
            let row = (((self.y_top - y) / self.pixel).floor() as i64).clamp(0, self.height as i64 - 1);
            self.entries.push(((row as usize * self.width + col as usize) as u32, seg));
        }

        self.entries.sort_unstable_by_key(|e| e.0);
        self.entries.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 += later.1;
                true
            } else {
                false
            }
        });
        &self.entries
    }
}
