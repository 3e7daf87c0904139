//! Job parameters, their validation against a session, and execution.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::Value;

use roizoom::harness::io::format_trace_csv;
use roizoom::harness::{grid_search_lambda_with, run_path, run_zoom, Method};
use roizoom::image::{extract_roi, psnr, ImageGrid, RoiSpec, Upsampler};
use roizoom::regularizers::{DenoiserFamily, DenoiserSpec};
use roizoom::solvers::{fista_reconstruct_with, IterationInfo, RunContext, SolverConfig, StepSchedule};
use roizoom::Result;

use crate::session::{Reconstruction, Session};
use crate::store::JobKind;

/// A rejected parameter, reported as 422 with the field name.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl FieldError {
    fn new(field: &'static str, message: impl ToString) -> Self {
        Self {
            field,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum JobSpec {
    Reconstruct {
        /// One strength, or a grid searched against the session ground truth.
        lambdas: Vec<f64>,
        solver: SolverConfig,
    },
    Zoom {
        roi: RoiSpec,
        method: Method,
        denoiser: DenoiserSpec,
        solver: SolverConfig,
        upsampler: Upsampler,
        source: Reconstruction,
    },
    Path {
        roi: RoiSpec,
        grid: Vec<f64>,
        family: DenoiserFamily,
        solver: SolverConfig,
        upsampler: Upsampler,
        source: Reconstruction,
    },
}

impl JobSpec {
    pub fn kind(&self) -> JobKind {
        match self {
            JobSpec::Reconstruct { .. } => JobKind::Reconstruct,
            JobSpec::Zoom { .. } => JobKind::Zoom,
            JobSpec::Path { .. } => JobKind::Path,
        }
    }
}

fn field<T: DeserializeOwned>(body: &Value, name: &'static str) -> std::result::Result<Option<T>, FieldError> {
    match body.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| FieldError::new(name, e)),
    }
}

fn required<T: DeserializeOwned>(body: &Value, name: &'static str) -> std::result::Result<T, FieldError> {
    field(body, name)?.ok_or_else(|| FieldError::new(name, "is required"))
}

fn strengths(values: Vec<f64>, name: &'static str) -> std::result::Result<Vec<f64>, FieldError> {
    if values.is_empty() {
        return Err(FieldError::new(name, "grid is empty"));
    }
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(FieldError::new(name, format!("{bad} is not a nonnegative number")));
    }
    Ok(values)
}

fn default_strength(family: DenoiserFamily) -> f64 {
    match family {
        DenoiserFamily::Tv => 0.1,
        DenoiserFamily::Nlm => 0.05,
    }
}

/// Parses and validates a job body against `session`.
pub fn parse(body: &Value, session: &Session) -> std::result::Result<JobSpec, FieldError> {
    if !body.is_object() {
        return Err(FieldError::new("body", "expected a JSON object"));
    }
    let kind: JobKind = required(body, "kind")?;
    let n_views = session.a.n_views();
    let check_solver = |cfg: SolverConfig| {
        cfg.validate(Some(n_views))
            .map(|_| cfg)
            .map_err(|e| FieldError::new("solver", e))
    };
    if kind == JobKind::Reconstruct {
        let lambdas = match (field::<f64>(body, "lambda")?, field::<Vec<f64>>(body, "lambda_grid")?) {
            (Some(_), Some(_)) => return Err(FieldError::new("lambda", "give lambda or lambda_grid, not both")),
            (Some(l), None) => strengths(vec![l], "lambda")?,
            (None, Some(g)) => strengths(g, "lambda_grid")?,
            (None, None) => return Err(FieldError::new("lambda", "lambda or lambda_grid is required")),
        };
        let solver = check_solver(field(body, "solver")?.unwrap_or(SolverConfig::with_iters(60)))?;
        return Ok(JobSpec::Reconstruct { lambdas, solver });
    }

    let roi: RoiSpec = required(body, "roi")?;
    roi.validate(session.a.height(), session.a.width())
        .map_err(|e| FieldError::new("roi", e))?;
    let upsampler = field(body, "upsampler")?.unwrap_or_default();
    let source_job: Option<String> = field(body, "source")?;
    let source = session.reconstruction(source_job.as_deref()).ok_or_else(|| match &source_job {
        Some(id) => FieldError::new("source", format!("no finished reconstruction from job {id}")),
        None => FieldError::new("source", "no finished reconstruction; run a reconstruct job first"),
    })?;
    let denoiser: Option<DenoiserSpec> = field(body, "denoiser")?;
    if let Some(d) = &denoiser {
        d.validate().map_err(|e| FieldError::new("denoiser", e))?;
    }
    let solver: Option<SolverConfig> = field(body, "solver")?;

    if kind == JobKind::Path {
        let grid = strengths(required(body, "lambda_grid")?, "lambda_grid")?;
        let family = match denoiser {
            None => DenoiserFamily::Tv,
            Some(d) => d
                .family()
                .ok_or_else(|| FieldError::new("denoiser", "a path needs a TV or NLM denoiser"))?,
        };
        let solver = check_solver(solver.unwrap_or(SolverConfig::with_iters(80)))?;
        return Ok(JobSpec::Path {
            roi,
            grid,
            family,
            solver,
            upsampler,
            source,
        });
    }

    let method = match field::<String>(body, "method")? {
        None => Method::LzfgTv,
        Some(name) => Method::parse(&name).map_err(|e| FieldError::new("method", e))?,
    };
    let denoiser = match (method.family(), denoiser) {
        (None, _) => DenoiserSpec::Identity,
        (Some(f), None) => f.spec(default_strength(f)),
        (Some(f), Some(d)) if d.family() == Some(f) => d,
        (Some(f), Some(_)) => {
            return Err(FieldError::new("denoiser", format!("{} needs a {f:?} denoiser", method.name())))
        }
    };
    let solver = solver.unwrap_or_else(|| match method {
        Method::LzsgTv => SolverConfig {
            minibatch_views: Some((n_views / 6).max(1)),
            step_schedule: StepSchedule::InvSqrt { eta0: None },
            ..SolverConfig::with_iters(120)
        },
        _ => SolverConfig::with_iters(80),
    });
    if method == Method::LzsgTv && solver.minibatch_views.is_none() {
        return Err(FieldError::new("solver", "minibatch_views is required by lzsg-tv"));
    }
    let solver = check_solver(solver)?;
    Ok(JobSpec::Zoom {
        roi,
        method,
        denoiser,
        solver,
        upsampler,
        source,
    })
}

/// One image produced by a job.
pub struct Produced {
    pub image: ImageGrid,
    pub trace: Option<String>,
    pub strength: Option<f64>,
    pub psnr: Option<f64>,
    pub iterations: usize,
}

pub struct Output {
    pub images: Vec<Produced>,
    pub selected_lambda: Option<f64>,
}

/// Maps observer calls of consecutive runs onto one job-wide fraction and
/// stops the run once `cancel` is raised.
struct Tracker<'a> {
    runs: usize,
    finished: usize,
    last: usize,
    report: &'a (dyn Fn(f64) + Sync),
    cancel: &'a AtomicBool,
}

impl Tracker<'_> {
    fn observe(&mut self, info: &IterationInfo) -> bool {
        if self.cancel.load(Ordering::SeqCst) {
            return false;
        }
        if info.iteration <= self.last {
            self.finished += 1;
        }
        self.last = info.iteration;
        let per_run = info.max_iters.max(1) as f64;
        let done = self.finished as f64 + (info.iteration as f64 / per_run).min(1.0);
        (self.report)(done / self.runs as f64);
        true
    }
}

/// Ground-truth crop on the zoomed grid; only defined when the zoom factor
/// equals the session oversampling.
fn fine_crop(session: &Session, roi: &RoiSpec) -> Result<Option<ImageGrid>> {
    if roi.q != session.spec.q {
        return Ok(None);
    }
    let fine = RoiSpec::new(roi.row0 * roi.q, roi.col0 * roi.q, roi.high_res_height(), roi.high_res_width(), 1);
    extract_roi(&session.truth, &fine).map(Some)
}

fn psnr_against(x: &ImageGrid, truth: Option<&ImageGrid>, peak: f64) -> Option<f64> {
    truth.and_then(|t| psnr(x, t, peak).ok()).filter(|p| p.is_finite())
}

/// Runs `spec` to completion on the calling thread.
pub fn execute(
    spec: &JobSpec,
    session: &Session,
    report: &(dyn Fn(f64) + Sync),
    cancel: &AtomicBool,
) -> Result<Output> {
    let runs = match spec {
        JobSpec::Reconstruct { lambdas, .. } => lambdas.len(),
        JobSpec::Zoom { .. } => 1,
        JobSpec::Path { grid, .. } => grid.len(),
    };
    let mut tracker = Tracker {
        runs,
        finished: 0,
        last: 0,
        report,
        cancel,
    };
    let mut observer = |info: &IterationInfo| tracker.observe(info);
    let peak = session.window;
    match spec {
        JobSpec::Reconstruct { lambdas, solver } => {
            let truth = &session.coarse_truth;
            let mut ctx = RunContext::default().with_truth(truth).with_observer(&mut observer);
            let (lambda, rec) = if lambdas.len() == 1 {
                let rec = fista_reconstruct_with(&session.a, &session.b, lambdas[0], solver, None, &mut ctx)?;
                (lambdas[0], rec)
            } else {
                grid_search_lambda_with(&session.a, &session.b, truth, lambdas, solver, &mut ctx)?
            };
            let trace = format_trace_csv(&rec.objective_trace, &rec.psnr_trace, None);
            Ok(Output {
                images: vec![Produced {
                    psnr: psnr_against(&rec.image, Some(truth), peak),
                    image: rec.image,
                    trace: Some(trace),
                    strength: Some(lambda),
                    iterations: rec.iterations_run,
                }],
                selected_lambda: (lambdas.len() > 1).then_some(lambda),
            })
        }
        JobSpec::Zoom {
            roi,
            method,
            denoiser,
            solver,
            upsampler,
            source,
        } => {
            let crop = fine_crop(session, roi)?;
            let mut ctx = RunContext::default().with_observer(&mut observer);
            ctx.truth = crop.as_ref();
            let out = run_zoom(&session.a, &session.b, &source.x1, roi, *method, denoiser, solver, *upsampler, &mut ctx)?;
            let trace = out
                .result
                .as_ref()
                .map(|r| format_trace_csv(&r.objective_trace, &r.psnr_trace, None));
            Ok(Output {
                images: vec![Produced {
                    psnr: psnr_against(&out.image, crop.as_ref(), peak),
                    strength: denoiser.strength(),
                    iterations: out.result.as_ref().map_or(0, |r| r.iterations_run),
                    image: out.image,
                    trace,
                }],
                selected_lambda: None,
            })
        }
        JobSpec::Path {
            roi,
            grid,
            family,
            solver,
            upsampler,
            source,
        } => {
            let crop = fine_crop(session, roi)?;
            let mut ctx = RunContext::default().with_observer(&mut observer);
            ctx.truth = crop.as_ref();
            let results = run_path(&session.a, &session.b, &source.x1, roi, grid, *family, solver, *upsampler, &mut ctx)?;
            let images = results
                .into_iter()
                .zip(grid)
                .map(|(r, &s)| Produced {
                    psnr: psnr_against(&r.x_high, crop.as_ref(), peak),
                    trace: Some(format_trace_csv(&r.objective_trace, &r.psnr_trace, None)),
                    strength: Some(s),
                    iterations: r.iterations_run,
                    image: r.x_high,
                })
                .collect();
            Ok(Output {
                images,
                selected_lambda: None,
            })
        }
    }
}

/// Session reconstruction entry for a finished reconstruct job.
pub fn reconstruction_of(job: &str, image_id: &str, image: ImageGrid) -> Reconstruction {
    Reconstruction {
        job: job.to_string(),
        image: image_id.to_string(),
        x1: Arc::new(image),
    }
}
