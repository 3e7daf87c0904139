//! Analytic ellipse phantoms on the square `[-1, 1]^2`, with `x` to the right
//! and `y` up. Row 0 of a rendered image is the top edge.

use serde::{Deserialize, Serialize};

use crate::ct::{FanBeamGeometry, Sinogram, SinogramKind, DEFAULT_FOV};
use crate::error::{Error, Result};
use crate::image::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    /// Counter-clockwise rotation of the first axis, in degrees.
    pub angle_deg: f64,
    /// Added to every point inside the ellipse.
    pub value: f64,
}

impl Ellipse {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, angle_deg: f64, value: f64) -> Self {
        Self {
            center: [cx, cy],
            axes: [a, b],
            angle_deg,
            value,
        }
    }

    pub fn circle(cx: f64, cy: f64, r: f64, value: f64) -> Self {
        Self::new(cx, cy, r, r, 0.0, value)
    }

    /// Coordinates of `(x, y)` in the ellipse frame, scaled so the boundary is the unit circle.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        ((c * dx + s * dy) / self.axes[0], (-s * dx + c * dy) / self.axes[1])
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        u * u + v * v <= 1.0
    }

    /// Length of the chord cut by the line `p + t d`, `t` in `[0, 1]`.
    fn chord(&self, p: [f64; 2], d: [f64; 2]) -> f64 {
        let (px, py) = self.local(p[0], p[1]);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = (c * d[0] + s * d[1]) / self.axes[0];
        let dy = (-s * d[0] + c * d[1]) / self.axes[1];
        let a = dx * dx + dy * dy;
        let b = 2.0 * (px * dx + py * dy);
        let cc = px * px + py * py - 1.0;
        let disc = b * b - 4.0 * a * cc;
        if a == 0.0 || disc <= 0.0 {
            return 0.0;
        }
        let root = disc.sqrt();
        let t0 = ((-b - root) / (2.0 * a)).max(0.0);
        let t1 = ((-b + root) / (2.0 * a)).min(1.0);
        (t1 - t0).max(0.0) * d[0].hypot(d[1])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EllipsePhantom {
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantom {
    pub const BUILTIN: [&'static str; 3] = ["shepp_logan", "head_like", "chest_like"];

    pub fn new(ellipses: Vec<Ellipse>) -> Self {
        Self { ellipses }
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum::<f64>()
            .max(0.0)
    }
}

/// Renders on a `side x side` grid spanning [`DEFAULT_FOV`].
pub fn render(phantom: &EllipsePhantom, side: usize) -> Result<ImageGrid> {
    render_fov(phantom, side, DEFAULT_FOV)
}

/// Each pixel takes the phantom value at its centre, clamped at zero.
pub fn render_fov(phantom: &EllipsePhantom, side: usize, fov: f64) -> Result<ImageGrid> {
    if side < 8 {
        return Err(Error::invalid("side", format!("{side} is below the minimum of 8")));
    }
    if !(fov.is_finite() && fov > 0.0) {
        return Err(Error::invalid("fov", "must be positive"));
    }
    let step = 2.0 / side as f64;
    let mut values = Vec::with_capacity(side * side);
    for r in 0..side {
        let y = 1.0 - (r as f64 + 0.5) * step;
        for c in 0..side {
            let x = -1.0 + (c as f64 + 0.5) * step;
            values.push(phantom.value_at(x, y));
        }
    }
    ImageGrid::new(side, side, fov / side as f64, values)
}

/// Exact line integrals of the phantom for every ray of `geometry`, with the
/// unit square scaled to a field of view of `fov`. Overlaps are summed
/// without clamping, so this matches [`render`] only where no region goes
/// negative.
pub fn project(phantom: &EllipsePhantom, geometry: &FanBeamGeometry, fov: f64) -> Sinogram {
    let half = 0.5 * fov;
    let mut values = Vec::with_capacity(geometry.n_rays());
    for view in 0..geometry.n_views {
        for bin in 0..geometry.n_det {
            let (src, det) = geometry.ray(view, bin);
            let p = [src[0] / half, src[1] / half];
            let d = [(det[0] - src[0]) / half, (det[1] - src[1]) / half];
            let total: f64 = phantom.ellipses.iter().map(|e| e.value * e.chord(p, d)).sum();
            values.push(total * half);
        }
    }
    Sinogram::from_parts(geometry.n_views, geometry.n_det, SinogramKind::LogLinearized, values)
}

pub fn builtin(name: &str) -> Result<EllipsePhantom> {
    match name {
        "shepp_logan" => Ok(shepp_logan()),
        "head_like" => Ok(head_like()),
        "chest_like" => Ok(chest_like()),
        other => Err(Error::UnknownPhantom(other.to_string())),
    }
}

/// Shepp-Logan head with the higher-contrast values of Toft.
pub fn shepp_logan() -> EllipsePhantom {
    let table = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ];
    EllipsePhantom::new(
        table
            .iter()
            .map(|&(x, y, a, b, ang, v)| Ellipse::new(x, y, a, b, ang, v))
            .collect(),
    )
}

/// Axial head section with four clusters of fine structure, one per image
/// quadrant, centred near `(+-0.34, +-0.42)`.
pub fn head_like() -> EllipsePhantom {
    let mut e = vec![
        Ellipse::new(0.0, 0.0, 0.82, 0.96, 0.0, 1.0),
        Ellipse::new(0.0, -0.01, 0.78, 0.92, 0.0, -0.8),
        // ventricles and midline structures
        Ellipse::new(-0.08, 0.0, 0.04, 0.12, 15.0, -0.1),
        Ellipse::new(0.08, 0.0, 0.04, 0.12, -15.0, -0.1),
        Ellipse::new(0.0, -0.2, 0.05, 0.04, 0.0, 0.08),
    ];
    let (cx, cy) = (0.3125, 0.34375);
    // upper left: dots of decreasing size at two contrasts
    let mut x = -cx - 0.172;
    for r in [0.04, 0.032, 0.025, 0.02, 0.015] {
        x += r;
        e.push(Ellipse::circle(x, cy + 0.06, r, 0.6));
        e.push(Ellipse::circle(x, cy - 0.06, r, 0.3));
        x += r + 0.02;
    }
    // upper right: bar pattern of decreasing period
    let mut x = cx - 0.2;
    for w in [0.022, 0.016, 0.012] {
        for _ in 0..2 {
            e.push(Ellipse::new(x + w, cy, w, 0.1, 0.0, 0.5));
            x += 4.0 * w;
        }
    }
    // lower left: low-contrast disks and a thin oblique vessel
    for (dx, dy, r) in [(-0.08, 0.06, 0.05), (0.06, 0.05, 0.035), (0.0, -0.07, 0.025)] {
        e.push(Ellipse::circle(-cx + dx, -cy + dy, r, 0.1));
    }
    e.push(Ellipse::new(-cx, -cy, 0.16, 0.01, 35.0, 0.5));
    // lower right: ring with a nodule and satellite dots
    e.push(Ellipse::circle(cx, -cy, 0.09, 0.5));
    e.push(Ellipse::circle(cx, -cy, 0.07, -0.5));
    e.push(Ellipse::circle(cx + 0.02, -cy + 0.01, 0.025, 0.6));
    for k in 0..6 {
        let t = k as f64 * std::f64::consts::PI / 3.0;
        e.push(Ellipse::circle(cx + 0.13 * t.cos(), -cy + 0.13 * t.sin(), 0.012, 0.6));
    }
    EllipsePhantom::new(e)
}

/// Thorax section: body, lungs with nodules and vessels, spine, heart.
pub fn chest_like() -> EllipsePhantom {
    let mut e = vec![
        Ellipse::new(0.0, 0.0, 0.9, 0.62, 0.0, 0.25),
        Ellipse::new(-0.4, 0.05, 0.3, 0.45, 8.0, -0.2),
        Ellipse::new(0.4, 0.05, 0.3, 0.45, -8.0, -0.2),
        Ellipse::new(0.08, -0.05, 0.22, 0.18, 30.0, 0.05),
        Ellipse::new(0.0, -0.45, 0.09, 0.08, 0.0, 0.6),
        Ellipse::new(0.0, -0.45, 0.05, 0.04, 0.0, -0.3),
        Ellipse::new(-0.12, 0.02, 0.05, 0.05, 0.0, 0.05),
    ];
    // nodules of several sizes
    for (x, y, r) in [
        (-0.45, 0.3, 0.04),
        (-0.35, 0.25, 0.02),
        (-0.5, -0.2, 0.015),
        (0.45, 0.3, 0.03),
        (0.38, -0.2, 0.012),
        (0.5, -0.1, 0.02),
    ] {
        e.push(Ellipse::circle(x, y, r, 0.2));
    }
    // vessel branches
    for (x, y, len, ang) in [
        (-0.32, 0.0, 0.14, 60.0),
        (-0.45, 0.05, 0.12, 110.0),
        (0.32, 0.0, 0.14, 120.0),
        (0.45, 0.08, 0.12, 70.0),
    ] {
        e.push(Ellipse::new(x, y, len, 0.008, ang, 0.15));
    }
    EllipsePhantom::new(e)
}
