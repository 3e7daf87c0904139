//! Pixelwise non-local means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlmParams {
    /// Decay of the patch-similarity weights, in image intensity units.
    pub filter_strength: f64,
    pub patch_radius: usize,
    pub window_radius: usize,
}

impl NlmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.filter_strength.is_finite() && self.filter_strength > 0.0) {
            return Err(Error::invalid("filter_strength", "must be positive and finite"));
        }
        if self.patch_radius == 0 || self.window_radius == 0 {
            return Err(Error::invalid("radii", "patch and window radii must be at least 1"));
        }
        Ok(())
    }
}

/// Each output pixel is the average of the search window around it, weighted
/// by `exp(-d2 / h^2)` where `d2` is the mean squared difference between the
/// two patches (edge-replicated) and `h` the filter strength.
pub fn nlm_denoise(img: &ImageGrid, params: &NlmParams) -> Result<ImageGrid> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let win = params.window_radius as i64;
    if w < 2 * params.window_radius + 1 || h < 2 * params.window_radius + 1 {
        return Err(Error::invalid(
            "window_radius",
            format!("image {}x{} smaller than search window {}", h, w, 2 * win + 1),
        ));
    }
    let pr = params.patch_radius as i64;
    let inv_h2 = 1.0 / (params.filter_strength * params.filter_strength);
    let patch_len = ((2 * pr + 1) * (2 * pr + 1)) as f64;

    // edge-replicated copy padded by the patch radius
    let pad = pr as usize;
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let src = img.values();
    let mut padded = vec![0.0; pw * ph];
    for r in 0..ph {
        let sr = (r as i64 - pr).clamp(0, h as i64 - 1) as usize;
        for c in 0..pw {
            let sc = (c as i64 - pr).clamp(0, w as i64 - 1) as usize;
            padded[r * pw + c] = src[sr * w + sc];
        }
    }
    let at = |r: i64, c: i64| padded[(r + pr) as usize * pw + (c + pr) as usize];

    let mut out = vec![0.0; w * h];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let center = src[r as usize * w + c as usize];
            let (mut num, mut den) = (0.0, 0.0);
            for sr in (r - win).max(0)..=(r + win).min(h as i64 - 1) {
                for sc in (c - win).max(0)..=(c + win).min(w as i64 - 1) {
                    let mut d2 = 0.0;
                    for dr in -pr..=pr {
                        for dc in -pr..=pr {
                            let diff = at(r + dr, c + dc) - at(sr + dr, sc + dc);
                            d2 += diff * diff;
                        }
                    }
                    let weight = (-(d2 / patch_len) * inv_h2).exp();
                    num += weight * (src[sr as usize * w + sc as usize] - center);
                    den += weight;
                }
            }
            out[r as usize * w + c as usize] = center + num / den;
        }
    }
    ImageGrid::new(w, h, img.pixel_size(), out)
}
