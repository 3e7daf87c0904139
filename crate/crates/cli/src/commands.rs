//! Subcommand bodies. Every output lands under `--out` with a fixed name.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use roizoom::ct::{Sinogram, SinogramKind, SparseSystemMatrix};
use roizoom::harness::io::{read_rzf, sidecar_path, write_png, write_rzf, write_trace_csv};
use roizoom::harness::{grid_search_lambda_with, run_experiment, run_path, run_zoom, ExperimentConfig, Method, ScanSpec};
use roizoom::image::{downsample, extract_roi, psnr, ImageGrid, RoiSpec};
use roizoom::regularizers::{DenoiserFamily, DenoiserSpec};
use roizoom::solvers::{fista_reconstruct_with, naive_zoom, RunContext, SolverConfig, StepSchedule};
use roizoom_service::ServiceConfig;

use crate::{ExperimentArgs, Failure, PathArgs, ReconstructArgs, ServeArgs, SimulateArgs, ZoomArgs, ZoomTarget};

const SCAN: &str = "scan.json";
const SINOGRAM: &str = "sinogram.rzf";
const GROUND_TRUTH: &str = "ground_truth.rzf";
const RECON: &str = "recon.rzf";
const SUMMARY: &str = "summary.json";

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let bytes = serde_json::to_vec_pretty(value).map_err(roizoom::Error::from)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn write_image(dir: &Path, stem: &str, img: &ImageGrid, window: f64, prov: &serde_json::Value) -> Result<(), Failure> {
    write_rzf(&dir.join(format!("{stem}.rzf")), img, prov)?;
    write_png(&dir.join(format!("{stem}.png")), img, window, prov)?;
    Ok(())
}

/// Measurements and ground truth of a `simulate` folder.
struct Scan {
    spec: ScanSpec,
    a: SparseSystemMatrix,
    b: Sinogram,
    truth: ImageGrid,
    window: f64,
}

fn load_scan(dir: &Path) -> Result<Scan, Failure> {
    let raw = fs::read(dir.join(SCAN)).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", dir.join(SCAN).display()),
    })?;
    let spec: ScanSpec = serde_json::from_slice(&raw).map_err(roizoom::Error::from)?;
    let a = spec.system_matrix()?;
    let sino = read_rzf(&dir.join(SINOGRAM))?;
    if (sino.width(), sino.height()) != (a.n_det(), a.n_views()) {
        return Err(Failure {
            code: 1,
            message: format!(
                "{SINOGRAM} is {}x{} but the {} geometry has {} views of {} bins",
                sino.height(),
                sino.width(),
                spec.preset,
                a.n_views(),
                a.n_det()
            ),
        });
    }
    let b = Sinogram::new(a.n_views(), a.n_det(), SinogramKind::LogLinearized, sino.into_values())?;
    let truth = read_rzf(&dir.join(GROUND_TRUTH))?;
    let window = truth.max().max(1e-12);
    Ok(Scan {
        spec,
        a,
        b,
        truth,
        window,
    })
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let spec = ScanSpec {
        phantom: args.phantom,
        preset: args.geometry,
        i0: args.i0,
        seed: args.seed,
        q: args.q,
        measurement: args.measurement,
    };
    let a = spec.system_matrix()?;
    let (b, truth) = spec.simulate(&a)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join(SCAN), &spec)?;
    let prov = |kind: &str| json!({ "kind": kind, "scan": spec });
    let sino = ImageGrid::new(b.n_det, b.n_views, 1.0, b.values().to_vec())?;
    write_rzf(&args.out.join(SINOGRAM), &sino, &prov("sinogram"))?;
    write_rzf(&args.out.join(GROUND_TRUTH), &truth, &prov("ground_truth"))?;
    log::info!(
        "simulated {} on {} ({} views x {} bins) into {}",
        spec.phantom,
        spec.preset,
        b.n_views,
        b.n_det,
        args.out.display()
    );
    Ok(())
}

/// Copies the scan files so `out` can serve as `--in` of later commands.
fn carry_scan(from: &Path, to: &Path) -> Result<(), Failure> {
    if from.canonicalize()? == to.canonicalize()? {
        return Ok(());
    }
    for name in [SINOGRAM, GROUND_TRUTH] {
        fs::copy(from.join(name), to.join(name))?;
        let side = sidecar_path(&from.join(name));
        if side.exists() {
            fs::copy(&side, sidecar_path(&to.join(name)))?;
        }
    }
    fs::copy(from.join(SCAN), to.join(SCAN))?;
    Ok(())
}

pub fn reconstruct(args: ReconstructArgs) -> Result<(), Failure> {
    let scan = load_scan(&args.input)?;
    let coarse = downsample(&scan.truth, scan.spec.q)?;
    let cfg = SolverConfig::with_iters(args.iters);
    cfg.validate(Some(scan.a.n_views()))?;
    let mut ctx = RunContext::default().with_truth(&coarse);
    let (lambda, rec) = match (&args.lambda, &args.lambda_grid) {
        (Some(l), _) => (*l, fista_reconstruct_with(&scan.a, &scan.b, *l, &cfg, None, &mut ctx)?),
        (None, Some(grid)) => grid_search_lambda_with(&scan.a, &scan.b, &coarse, &grid.0, &cfg, &mut ctx)?,
        (None, None) => return Err(usage("give --lambda or --lambda-grid")),
    };
    fs::create_dir_all(&args.out)?;
    carry_scan(&args.input, &args.out)?;
    let value = psnr(&rec.image, &coarse, scan.window)?;
    let prov = json!({ "kind": "recon", "lambda": lambda, "seed": scan.spec.seed });
    write_image(&args.out, "recon", &rec.image, scan.window, &prov)?;
    write_trace_csv(&args.out.join("trace_recon.csv"), &rec.objective_trace, &rec.psnr_trace, None)?;
    write_json(
        &args.out.join(SUMMARY),
        &json!({
            "command": "reconstruct",
            "lambda": lambda,
            "lambda_grid": args.lambda_grid.as_ref().map(|g| &g.0),
            "psnr": value,
            "iterations_run": rec.iterations_run,
            "converged": rec.converged,
            "op_count": rec.op_count,
        }),
    )?;
    log::info!("lambda {lambda}: PSNR {value:.2} dB after {} iterations", rec.iterations_run);
    Ok(())
}

/// Inputs shared by `zoom` and `path`.
struct ZoomSetup {
    scan: Scan,
    x1: ImageGrid,
    roi: RoiSpec,
    /// Ground truth on the zoomed grid, when the zoom factor matches the scan.
    crop: Option<ImageGrid>,
}

fn zoom_setup(t: &ZoomTarget) -> Result<ZoomSetup, Failure> {
    let scan = load_scan(&t.input)?;
    let x1 = read_rzf(&t.input.join(RECON))?;
    let q = t.q.unwrap_or(scan.spec.q);
    let roi = RoiSpec::new(t.roi.row0, t.roi.col0, t.roi.h, t.roi.w, q);
    roi.validate(x1.height(), x1.width())?;
    let crop = if q == scan.spec.q {
        let fine = RoiSpec::new(roi.row0 * q, roi.col0 * q, roi.high_res_height(), roi.high_res_width(), 1);
        Some(extract_roi(&scan.truth, &fine)?)
    } else {
        None
    };
    fs::create_dir_all(&t.out)?;
    Ok(ZoomSetup { scan, x1, roi, crop })
}

fn psnr_of(x: &ImageGrid, crop: Option<&ImageGrid>, window: f64) -> Result<Option<f64>, Failure> {
    Ok(match crop {
        Some(t) => Some(psnr(x, t, window)?).filter(|p| p.is_finite()),
        None => None,
    })
}

fn default_strength(family: DenoiserFamily) -> f64 {
    match family {
        DenoiserFamily::Tv => 0.1,
        DenoiserFamily::Nlm => 0.05,
    }
}

pub fn zoom(args: ZoomArgs) -> Result<(), Failure> {
    let method = Method::parse(&args.method)?;
    let s = zoom_setup(&args.target)?;
    let denoiser = match method.family() {
        None => DenoiserSpec::Identity,
        Some(f) => f.spec(args.lambda.unwrap_or_else(|| default_strength(f))),
    };
    denoiser.validate()?;
    let n_views = s.scan.a.n_views();
    let cfg = match method {
        Method::LzsgTv => SolverConfig {
            minibatch_views: Some(args.minibatch.unwrap_or((n_views / 6).max(1))),
            step_schedule: StepSchedule::InvSqrt { eta0: None },
            ..SolverConfig::with_iters(args.target.iters.unwrap_or(120))
        },
        _ => SolverConfig::with_iters(args.target.iters.unwrap_or(80)),
    };
    cfg.validate(Some(n_views))?;
    let mut ctx = RunContext {
        truth: s.crop.as_ref(),
        ..RunContext::default()
    };
    let out = run_zoom(&s.scan.a, &s.scan.b, &s.x1, &s.roi, method, &denoiser, &cfg, args.target.upsampler, &mut ctx)?;

    let name = method.name();
    let dir = &args.target.out;
    let prov = json!({ "kind": "zoom", "method": name, "roi": s.roi, "strength": denoiser.strength() });
    write_image(dir, &format!("zoom_{name}"), &out.image, s.scan.window, &prov)?;
    if let Some(r) = &out.result {
        write_trace_csv(&dir.join(format!("trace_{name}.csv")), &r.objective_trace, &r.psnr_trace, Some(&r.wall_ms))?;
    }
    let naive = naive_zoom(&s.x1, &s.roi)?;
    let value = psnr_of(&out.image, s.crop.as_ref(), s.scan.window)?;
    let naive_value = psnr_of(&naive, s.crop.as_ref(), s.scan.window)?;
    write_json(
        &dir.join(SUMMARY),
        &json!({
            "command": "zoom",
            "method": method,
            "roi": s.roi,
            "strength": denoiser.strength(),
            "psnr": value,
            "naive_psnr": naive_value,
            "psnr_gain": value.zip(naive_value).map(|(v, n)| v - n),
            "iterations_run": out.result.as_ref().map_or(0, |r| r.iterations_run),
            "op_count": out.result.as_ref().map_or(0, |r| r.op_count),
            "wall_time_ms": out.result.as_ref().map(|r| r.wall_time_ms),
        }),
    )?;
    match value.zip(naive_value) {
        Some((v, n)) => log::info!("{name}: PSNR {v:.2} dB ({:+.2} dB over naive)", v - n),
        None => log::info!("{name}: done (no ground truth at this zoom factor)"),
    }
    Ok(())
}

pub fn path(args: PathArgs) -> Result<(), Failure> {
    let (family, method) = match args.family.as_str() {
        "tv" => (DenoiserFamily::Tv, Method::LzfgTv),
        "nlm" => (DenoiserFamily::Nlm, Method::LzfgNlm),
        other => return Err(usage(format!("family must be tv or nlm, got {other:?}"))),
    };
    let s = zoom_setup(&args.target)?;
    let cfg = SolverConfig::with_iters(args.target.iters.unwrap_or(80));
    cfg.validate(Some(s.scan.a.n_views()))?;
    let mut ctx = RunContext {
        truth: s.crop.as_ref(),
        ..RunContext::default()
    };
    let grid = &args.grid.0;
    let results = run_path(&s.scan.a, &s.scan.b, &s.x1, &s.roi, grid, family, &cfg, args.target.upsampler, &mut ctx)?;

    let name = method.name();
    let dir = &args.target.out;
    let mut runs = Vec::with_capacity(results.len());
    for (i, (r, &strength)) in results.iter().zip(grid).enumerate() {
        let prov = json!({ "kind": "path", "method": name, "roi": s.roi, "index": i, "strength": strength });
        write_image(dir, &format!("zoom_{name}_{i}"), &r.x_high, s.scan.window, &prov)?;
        write_trace_csv(&dir.join(format!("trace_{name}_{i}.csv")), &r.objective_trace, &r.psnr_trace, Some(&r.wall_ms))?;
        runs.push(json!({
            "index": i,
            "strength": strength,
            "psnr": psnr_of(&r.x_high, s.crop.as_ref(), s.scan.window)?,
            "iterations_run": r.iterations_run,
        }));
    }
    write_json(
        &dir.join(SUMMARY),
        &json!({ "command": "path", "method": method, "roi": s.roi, "runs": runs }),
    )?;
    log::info!("{name}: {} path images in {}", results.len(), dir.display());
    Ok(())
}

pub fn experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let raw = fs::read(&args.config).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", args.config.display()),
    })?;
    let cfg: ExperimentConfig =
        serde_json::from_slice(&raw).map_err(|e| usage(format!("config {}: {e}", args.config.display())))?;
    let report = run_experiment(&cfg, Some(&args.out))?;
    let s = &report.summary;
    println!(
        "{}: first stage lambda {} at {:.2} dB",
        s.name, s.first_stage_lambda, s.first_stage_psnr
    );
    for (i, roi) in s.rois.iter().enumerate() {
        let gains: Vec<String> = roi
            .methods
            .iter()
            .filter(|m| m.method != Method::Naive)
            .map(|m| format!("{} {:+.2} dB", m.method.name(), m.psnr_gain))
            .collect();
        println!("roi{i} naive {:.2} dB | {}", roi.naive_psnr, gains.join(" | "));
    }
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut cfg = ServiceConfig::from_env().map_err(usage)?;
    if let Some(p) = args.port {
        cfg.port = p;
    }
    if let Some(d) = args.data {
        cfg.data_dir = Some(d);
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        cfg.workers = w;
    }
    cfg.ui_dir = args.ui;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(roizoom_service::serve(cfg))?;
    Ok(())
}
