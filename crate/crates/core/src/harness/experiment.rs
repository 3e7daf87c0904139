use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method};
use super::io::{write_png, write_rzf, write_trace_csv};
use super::workflow::{grid_search_lambda_with, simulate_measurements};
use crate::ct::{compute_bz, Sinogram, SparseSystemMatrix, ZoomOperator};
use crate::error::Result;
use crate::image::{downsample, extract_roi, psnr, ImageGrid, RoiSpec};
use crate::regularizers::{DenoiserFamily, DenoiserSpec};
use crate::solvers::{
    lambda_path_with, lzsg_with, naive_zoom, Reconstruction, RunContext, SolverConfig,
    ZoomResult,
};

/// Runs the first-stage solver for every `lambda` and keeps the one closest
/// to `x_truth` in mean squared error. Ties go to the earliest grid entry.
pub fn grid_search_lambda(
    a: &SparseSystemMatrix,
    b: &Sinogram,
    x_truth: &ImageGrid,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<(f64, Reconstruction)> {
    grid_search_lambda_with(a, b, x_truth, grid, cfg, &mut RunContext::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Selected regularization strength, absent for the naive zoom.
    pub strength: Option<f64>,
    pub psnr: f64,
    /// PSNR minus the naive-zoom PSNR on the same ROI.
    pub psnr_gain: f64,
    pub iterations_run: usize,
    pub op_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub roi: RoiSpec,
    pub naive_psnr: f64,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub first_stage_lambda: f64,
    pub first_stage_psnr: f64,
    pub peak: f64,
    pub rois: Vec<RoiSummary>,
}

impl ExperimentSummary {
    pub fn gain(&self, roi: usize, method: Method) -> Option<f64> {
        self.rois
            .get(roi)?
            .methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.psnr_gain)
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub image: ImageGrid,
    /// Iterative trace of the selected run, absent for the naive zoom.
    pub result: Option<ZoomResult>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub ground_truth: ImageGrid,
    pub first_stage: Reconstruction,
    pub sinogram: Sinogram,
    /// Outcomes per ROI, in the order of `methods`.
    pub outcomes: Vec<Vec<MethodOutcome>>,
}

/// Hex SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(cfg)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Log-linearized low-dose measurements and the fine-grid ground truth.
pub fn simulate(cfg: &ExperimentConfig, a: &SparseSystemMatrix) -> Result<(Sinogram, ImageGrid)> {
    let preset = cfg.geometry_preset()?;
    let phantom = cfg.phantom_table()?;
    simulate_measurements(&phantom, &preset, cfg.q, cfg.measurement, cfg.i0, cfg.seed, a)
}

fn best_of(results: Vec<ZoomResult>, strengths: &[f64]) -> (f64, ZoomResult) {
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.psnr_trace.last() > results[best].psnr_trace.last() {
            best = i;
        }
    }
    let strength = strengths[best];
    (strength, results.into_iter().nth(best).expect("index in range"))
}

struct RoiJob<'a> {
    op: ZoomOperator,
    init: ImageGrid,
    truth: &'a ImageGrid,
}

impl RoiJob<'_> {
    fn path(&self, grid: &[f64], family: DenoiserFamily, cfg: &SolverConfig) -> Result<(f64, ZoomResult)> {
        let mut ctx = RunContext::default().with_truth(self.truth);
        let results = lambda_path_with(&self.op, &self.init, grid, family, cfg, &mut ctx)?;
        Ok(best_of(results, grid))
    }

    fn stochastic(&self, grid: &[f64], cfg: &SolverConfig) -> Result<(f64, ZoomResult)> {
        let mut results = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let mut ctx = RunContext::default().with_truth(self.truth);
            let spec = DenoiserSpec::tv(lambda);
            results.push(lzsg_with(&self.op, &self.init, &spec, cfg, &mut ctx)?);
        }
        Ok(best_of(results, grid))
    }
}

/// Full protocol: simulate, pick the first-stage strength, zoom every ROI with
/// every method, and write artifacts to `out_dir` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let hash = config_hash(cfg)?;
    let preset = cfg.geometry_preset()?;
    let a = SparseSystemMatrix::build(&preset.geometry(), preset.side, preset.side)
        .map_err(|e| e.at_stage("system matrix"))?;
    let (b, truth) = simulate(cfg, &a).map_err(|e| e.at_stage("simulate"))?;
    let peak = truth.max();

    let coarse_truth = downsample(&truth, cfg.q).map_err(|e| e.at_stage("first stage"))?;
    let (lambda1, x1) = grid_search_lambda(&a, &b, &coarse_truth, &cfg.global_lambdas, &cfg.first_stage)
        .map_err(|e| e.at_stage("first stage"))?;
    let first_stage_psnr = psnr(&x1.image, &coarse_truth, peak)?;

    let mut roi_summaries = Vec::with_capacity(cfg.rois.len());
    let mut outcomes = Vec::with_capacity(cfg.rois.len());
    for rect in &cfg.rois {
        let roi = rect.with_q(cfg.q);
        let fine_rect = RoiSpec::new(roi.row0 * cfg.q, roi.col0 * cfg.q, roi.high_res_height(), roi.high_res_width(), 1);
        let crop = extract_roi(&truth, &fine_rect)?;
        let init = naive_zoom(&x1.image, &roi).map_err(|e| e.at_stage("zoom"))?;
        let naive_psnr = psnr(&init, &crop, peak)?;
        let bz = compute_bz(&a, &b, &x1.image, &roi).map_err(|e| e.at_stage("zoom"))?;
        let job = RoiJob {
            op: ZoomOperator::new(&a, &roi, &bz, cfg.upsampler).map_err(|e| e.at_stage("zoom"))?,
            init,
            truth: &crop,
        };

        let mut summaries = Vec::with_capacity(cfg.methods.len());
        let mut cells = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let run = match method {
                Method::Naive => None,
                Method::LzfgTv => Some(job.path(&cfg.zoom_lambdas, DenoiserFamily::Tv, &cfg.zoom)),
                Method::LzfgNlm => Some(job.path(&cfg.nlm_strengths, DenoiserFamily::Nlm, &cfg.nlm_zoom)),
                Method::LzsgTv => Some(job.stochastic(&cfg.zoom_lambdas, &cfg.lzsg)),
            };
            let (strength, result) = match run {
                None => (None, None),
                Some(r) => {
                    let (s, res) = r.map_err(|e| e.at_stage("zoom"))?;
                    (Some(s), Some(res))
                }
            };
            let image = result.as_ref().map_or_else(|| job.init.clone(), |r| r.x_high.clone());
            let value = psnr(&image, &crop, peak)?;
            summaries.push(MethodSummary {
                method,
                strength,
                psnr: value,
                psnr_gain: value - naive_psnr,
                iterations_run: result.as_ref().map_or(0, |r| r.iterations_run),
                op_count: result.as_ref().map_or(0, |r| r.op_count),
            });
            cells.push(MethodOutcome { method, image, result });
        }
        roi_summaries.push(RoiSummary {
            roi,
            naive_psnr,
            methods: summaries,
        });
        outcomes.push(cells);
    }

    let report = ExperimentReport {
        summary: ExperimentSummary {
            name: cfg.name.clone(),
            config_hash: hash,
            seed: cfg.seed,
            first_stage_lambda: lambda1,
            first_stage_psnr,
            peak,
            rois: roi_summaries,
        },
        ground_truth: truth,
        first_stage: x1,
        sinogram: b,
        outcomes,
    };
    if let Some(dir) = out_dir {
        write_report(cfg, &report, dir).map_err(|e| e.at_stage("write"))?;
    }
    Ok(report)
}

fn provenance(summary: &ExperimentSummary, method: &str, roi: Option<usize>) -> serde_json::Value {
    serde_json::json!({
        "config_hash": summary.config_hash,
        "seed": summary.seed,
        "method": method,
        "roi": roi,
    })
}

fn write_image(dir: &Path, stem: &str, img: &ImageGrid, peak: f64, prov: &serde_json::Value) -> Result<()> {
    write_rzf(&dir.join(format!("{stem}.rzf")), img, prov)?;
    write_png(&dir.join(format!("{stem}.png")), img, peak, prov)
}

fn write_report(cfg: &ExperimentConfig, report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let s = &report.summary;
    let peak = s.peak;
    write_image(dir, "ground_truth", &report.ground_truth, peak, &provenance(s, "ground_truth", None))?;
    write_image(dir, "first_stage", &report.first_stage.image, peak, &provenance(s, "first_stage", None))?;
    for (i, cells) in report.outcomes.iter().enumerate() {
        let roi = s.rois[i].roi;
        let fine = RoiSpec::new(roi.row0 * roi.q, roi.col0 * roi.q, roi.high_res_height(), roi.high_res_width(), 1);
        let crop = extract_roi(&report.ground_truth, &fine)?;
        write_image(dir, &format!("roi{i}_truth"), &crop, peak, &provenance(s, "ground_truth", Some(i)))?;
        for cell in cells {
            let name = cell.method.name();
            write_image(dir, &format!("roi{i}_{name}"), &cell.image, peak, &provenance(s, name, Some(i)))?;
            if let Some(r) = &cell.result {
                let wall = cfg.timing.then_some(r.wall_ms.as_slice());
                write_trace_csv(
                    &dir.join(format!("roi{i}_{name}.csv")),
                    &r.objective_trace,
                    &r.psnr_trace,
                    wall,
                )?;
            }
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(s)?)?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    Ok(())
}
