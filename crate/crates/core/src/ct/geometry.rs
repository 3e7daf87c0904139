use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical side length of the square field of view used by the presets.
/// Phantom attenuations are per unit length, so this fixes the range of the
/// line integrals (about 3.5 through the thickest part of a head phantom).
pub const DEFAULT_FOV: f64 = 16.0;

/// Fan-beam acquisition with an equiangular detector arc centred on the source.
///
/// Lengths are in the same physical unit as `pixel_size`. View `v` places the
/// source at angle `angles_start + 2*pi*v/n_views` on the circle of radius
/// `source_to_center`; detector bin `k` sits at fan angle
/// `(k - (n_det-1)/2) * det_pitch / source_to_detector`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub n_views: usize,
    pub n_det: usize,
    pub angles_start: f64,
    pub source_to_center: f64,
    pub source_to_detector: f64,
    pub det_pitch: f64,
    pub pixel_size: f64,
}

impl FanBeamGeometry {
    /// Standard geometry for a `side x side` grid: source at twice the image
    /// side from the centre, detector at four times, fan covering the image
    /// square with a 5% angular margin.
    pub fn standard(side: usize, pixel_size: f64, n_views: usize, n_det: usize) -> Self {
        let extent = side as f64 * pixel_size;
        let source_to_center = 2.0 * extent;
        let source_to_detector = 4.0 * extent;
        let half_diag = extent * std::f64::consts::FRAC_1_SQRT_2;
        let half_fan = 1.05 * (half_diag / source_to_center).asin();
        Self {
            n_views,
            n_det,
            angles_start: 0.0,
            source_to_center,
            source_to_detector,
            det_pitch: 2.0 * half_fan * source_to_detector / n_det as f64,
            pixel_size,
        }
    }

    /// Same acquisition sampled on a grid `q` times finer.
    pub fn refined(&self, q: usize) -> Self {
        Self {
            pixel_size: self.pixel_size / q as f64,
            ..*self
        }
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_det
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        self.angles_start + 2.0 * PI * view as f64 / self.n_views as f64
    }

    pub fn fan_angle(&self, bin: usize) -> f64 {
        (bin as f64 - (self.n_det as f64 - 1.0) / 2.0) * self.det_pitch / self.source_to_detector
    }

    /// Source position and detector-bin position of ray `(view, bin)`.
    pub fn ray(&self, view: usize, bin: usize) -> ([f64; 2], [f64; 2]) {
        let theta = self.view_angle(view);
        let src = [self.source_to_center * theta.cos(), self.source_to_center * theta.sin()];
        // central ray points from the source towards the origin
        let phi = theta + PI + self.fan_angle(bin);
        let det = [
            src[0] + self.source_to_detector * phi.cos(),
            src[1] + self.source_to_detector * phi.sin(),
        ];
        (src, det)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.n_views == 0 || self.n_det == 0 {
            return Err(Error::Geometry("n_views and n_det must be positive".into()));
        }
        let positive = [self.source_to_center, self.source_to_detector, self.det_pitch, self.pixel_size];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !self.angles_start.is_finite() {
            return Err(Error::Geometry("lengths must be finite and positive".into()));
        }
        let half_diag = 0.5 * self.pixel_size * ((width * width + height * height) as f64).sqrt();
        if self.source_to_center <= half_diag {
            return Err(Error::Geometry(format!(
                "source inside image support: source_to_center {} <= half diagonal {half_diag}",
                self.source_to_center
            )));
        }
        if self.source_to_detector <= self.source_to_center {
            return Err(Error::Geometry(format!(
                "detector must lie beyond the rotation centre: source_to_detector {} <= source_to_center {}",
                self.source_to_detector, self.source_to_center
            )));
        }
        Ok(())
    }
}

/// Named acquisition setups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryPreset {
    pub side: usize,
    pub n_views: usize,
    pub n_det: usize,
    pub fov: f64,
}

impl GeometryPreset {
    pub const NAMES: [&'static str; 3] = ["tiny", "desk", "full"];

    pub fn by_name(name: &str) -> Result<Self> {
        let (side, n_views, n_det) = match name {
            "tiny" => (32, 48, 48),
            "desk" => (128, 180, 192),
            "full" => (256, 360, 256),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            side,
            n_views,
            n_det,
            fov: DEFAULT_FOV,
        })
    }

    pub fn pixel_size(&self) -> f64 {
        self.fov / self.side as f64
    }

    pub fn geometry(&self) -> FanBeamGeometry {
        FanBeamGeometry::standard(self.side, self.pixel_size(), self.n_views, self.n_det)
    }
}
