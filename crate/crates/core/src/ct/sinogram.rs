use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinogramKind {
    RawCounts,
    LogLinearized,
}

/// Measurement vector indexed by `view * n_det + bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_det: usize,
    pub kind: SinogramKind,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_views: usize, n_det: usize, kind: SinogramKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_views * n_det {
            return Err(Error::mismatch("sinogram values", n_views * n_det, values.len()));
        }
        match kind {
            SinogramKind::RawCounts => {
                if values.iter().any(|&v| !(v >= 0.0 && v.fract() == 0.0 && v.is_finite())) {
                    return Err(Error::invalid("counts", "raw counts must be nonnegative integers"));
                }
            }
            SinogramKind::LogLinearized => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("sinogram construction"));
                }
            }
        }
        Ok(Self {
            n_views,
            n_det,
            kind,
            values,
        })
    }

    pub(crate) fn from_parts(n_views: usize, n_det: usize, kind: SinogramKind, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_views * n_det);
        Self {
            n_views,
            n_det,
            kind,
            values,
        }
    }

    pub fn zeros(n_views: usize, n_det: usize) -> Self {
        Self::from_parts(n_views, n_det, SinogramKind::LogLinearized, vec![0.0; n_views * n_det])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
