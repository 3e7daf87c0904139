use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RoiSpec, Upsampler};
use crate::phantoms::{builtin, EllipsePhantom};
use crate::regularizers::DenoiserFamily;
use crate::solvers::{SolverConfig, StepSchedule};
use crate::ct::GeometryPreset;

/// Photon flux of the low-dose protocol, `2 * 10^3.5`.
pub fn low_dose_i0() -> f64 {
    2.0 * 10f64.powf(3.5)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("grid", format!("need 0 < lo <= hi, got {lo}, {hi}")));
    }
    match count {
        0 => Err(Error::invalid("grid", "count must be at least 1")),
        1 => Ok(vec![lo]),
        n => {
            let (a, b) = (lo.ln(), hi.ln());
            Ok((0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect())
        }
    }
}

/// Eight points per decade over two decades ending at `hi`.
pub fn default_grid(hi: f64) -> Vec<f64> {
    logspace(hi / 100.0, hi, 17).expect("positive bound")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "lzfg-tv")]
    LzfgTv,
    #[serde(rename = "lzfg-nlm")]
    LzfgNlm,
    #[serde(rename = "lzsg-tv")]
    LzsgTv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::LzfgTv, Method::LzfgNlm, Method::LzsgTv];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::LzfgTv => "lzfg-tv",
            Method::LzfgNlm => "lzfg-nlm",
            Method::LzsgTv => "lzsg-tv",
        }
    }

    /// Regularizer family of the iterative methods.
    pub fn family(&self) -> Option<DenoiserFamily> {
        match self {
            Method::Naive => None,
            Method::LzfgTv | Method::LzsgTv => Some(DenoiserFamily::Tv),
            Method::LzfgNlm => Some(DenoiserFamily::Nlm),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method {s:?}")))
    }
}

/// How measurements are produced from the phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementModel {
    /// Fine-grid render projected by the fine-grid system matrix.
    #[default]
    FineGrid,
    /// Exact line integrals of the ellipses.
    Analytic,
    /// Coarse-grid render projected by the reconstruction matrix.
    InverseCrime,
}

/// ROI rectangle on the coarse grid; the zoom factor is experiment-wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub row0: usize,
    pub col0: usize,
    pub h: usize,
    pub w: usize,
}

impl RoiRect {
    pub fn with_q(&self, q: usize) -> RoiSpec {
        RoiSpec::new(self.row0, self.col0, self.h, self.w, q)
    }
}

fn default_i0() -> f64 {
    low_dose_i0()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Builtin phantom name, ignored when `phantom_table` is given.
    pub phantom: String,
    #[serde(default)]
    pub phantom_table: Option<EllipsePhantom>,
    /// Geometry preset name (`tiny`, `desk`, `full`).
    pub preset: String,
    #[serde(default = "default_i0")]
    pub i0: f64,
    pub seed: u64,
    pub q: usize,
    #[serde(default)]
    pub measurement: MeasurementModel,
    pub rois: Vec<RoiRect>,
    pub methods: Vec<Method>,
    /// First-stage TV strengths searched against the coarse truth.
    pub global_lambdas: Vec<f64>,
    /// TV strengths of the zoom path.
    pub zoom_lambdas: Vec<f64>,
    /// NLM filter strengths of the zoom path.
    pub nlm_strengths: Vec<f64>,
    pub first_stage: SolverConfig,
    pub zoom: SolverConfig,
    pub nlm_zoom: SolverConfig,
    pub lzsg: SolverConfig,
    /// Upsampler inside the zoom gradient.
    #[serde(default)]
    pub upsampler: Upsampler,
    /// Fill the `wall_ms` trace column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    /// Named shipped configuration (`desk` or `full`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// 128x128 coarse grid, 180 views x 192 bins, four 32x32 ROIs zoomed 2x.
    pub fn desk() -> Self {
        let zoom = SolverConfig::with_iters(80);
        let lzsg = SolverConfig {
            minibatch_views: Some(30),
            step_schedule: StepSchedule::InvSqrt { eta0: None },
            ..SolverConfig::with_iters(120)
        };
        Self {
            name: "desk".into(),
            phantom: "head_like".into(),
            phantom_table: None,
            preset: "desk".into(),
            i0: low_dose_i0(),
            seed: 2024,
            q: 2,
            measurement: MeasurementModel::FineGrid,
            rois: vec![
                RoiRect { row0: 26, col0: 28, h: 32, w: 32 },
                RoiRect { row0: 26, col0: 68, h: 32, w: 32 },
                RoiRect { row0: 70, col0: 28, h: 32, w: 32 },
                RoiRect { row0: 70, col0: 68, h: 32, w: 32 },
            ],
            methods: Method::ALL.to_vec(),
            global_lambdas: default_grid(1.0),
            zoom_lambdas: default_grid(0.5),
            nlm_strengths: logspace(0.01, 0.1, 5).unwrap(),
            first_stage: SolverConfig::with_iters(60),
            zoom,
            nlm_zoom: SolverConfig::with_iters(30),
            lzsg,
            upsampler: Upsampler::Bicubic,
            timing: false,
        }
    }

    /// 256x256 coarse grid, 360 views x 256 bins, four 50x50 ROIs zoomed 4x,
    /// measurements from exact line integrals.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            preset: "full".into(),
            q: 4,
            measurement: MeasurementModel::Analytic,
            rois: vec![
                RoiRect { row0: 59, col0: 63, h: 50, w: 50 },
                RoiRect { row0: 59, col0: 143, h: 50, w: 50 },
                RoiRect { row0: 147, col0: 63, h: 50, w: 50 },
                RoiRect { row0: 147, col0: 143, h: 50, w: 50 },
            ],
            lzsg: SolverConfig {
                minibatch_views: Some(60),
                ..Self::desk().lzsg
            },
            ..Self::desk()
        }
    }

    pub fn phantom_table(&self) -> Result<EllipsePhantom> {
        match &self.phantom_table {
            Some(t) => Ok(t.clone()),
            None => builtin(&self.phantom),
        }
    }

    pub fn geometry_preset(&self) -> Result<GeometryPreset> {
        GeometryPreset::by_name(&self.preset)
    }

    pub fn validate(&self) -> Result<()> {
        let preset = self.geometry_preset()?;
        self.phantom_table()?;
        if !(self.i0.is_finite() && self.i0 > 0.0) {
            return Err(Error::invalid("i0", "must be positive"));
        }
        if self.q == 0 {
            return Err(Error::invalid("q", "zoom factor must be at least 1"));
        }
        for roi in &self.rois {
            roi.with_q(self.q).validate(preset.side, preset.side)?;
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "at least one method is required"));
        }
        if self.global_lambdas.is_empty() {
            return Err(Error::invalid("global_lambdas", "grid is empty"));
        }
        let needs = |m: Method| self.methods.contains(&m);
        if (needs(Method::LzfgTv) || needs(Method::LzsgTv)) && self.zoom_lambdas.is_empty() {
            return Err(Error::invalid("zoom_lambdas", "grid is empty"));
        }
        if needs(Method::LzfgNlm) && self.nlm_strengths.is_empty() {
            return Err(Error::invalid("nlm_strengths", "grid is empty"));
        }
        self.first_stage.validate(None)?;
        self.zoom.validate(Some(preset.n_views))?;
        self.nlm_zoom.validate(Some(preset.n_views))?;
        self.lzsg.validate(Some(preset.n_views))?;
        if needs(Method::LzsgTv) && self.lzsg.minibatch_views.is_none() {
            return Err(Error::invalid("lzsg", "minibatch_views is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logspace_endpoints_and_density() {
        let g = default_grid(1.0);
        assert_eq!(g.len(), 17);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[16] - 1.0).abs() < 1e-12);
        assert!((g[8] - 0.1).abs() < 1e-12);
        assert_eq!(logspace(2.0, 5.0, 1).unwrap(), vec![2.0]);
        assert!(logspace(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn presets_are_valid_and_round_trip() {
        for name in ["desk", "full"] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        }
        assert!(ExperimentConfig::preset("huge").is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.name());
        }
        assert!(Method::parse("bm3d").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::desk();
        cfg.rois.push(RoiRect { row0: 120, col0: 0, h: 32, w: 32 });
        assert!(cfg.validate().unwrap_err().to_string().contains("bottom"));
        let mut cfg = ExperimentConfig::desk();
        cfg.phantom = "brain".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("unknown phantom"));
    }
}
