//! `roizoom` command line: simulate, reconstruct, zoom, sweep and serve.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roizoom::harness::{logspace, MeasurementModel};
use roizoom::image::Upsampler;

#[derive(Parser)]
#[command(name = "roizoom", version, about = "Local zoom-in reconstruction for low-dose fan-beam CT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a low-dose scan; writes scan.json, sinogram.rzf and ground_truth.rzf.
    Simulate(SimulateArgs),
    /// First-stage TV reconstruction of a simulated scan; writes recon.rzf.
    Reconstruct(ReconstructArgs),
    /// Refine and superresolve one region of interest.
    Zoom(ZoomArgs),
    /// Warm-started regularization path over one region of interest.
    Path(PathArgs),
    /// Full evaluation protocol from a JSON config.
    Experiment(ExperimentArgs),
    /// Start the HTTP job service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in phantom: shepp_logan or head_like.
    #[arg(long, default_value = "head_like")]
    phantom: String,
    /// Geometry preset: tiny, desk or full.
    #[arg(long, default_value = "desk")]
    geometry: String,
    /// Incident photons per detector bin.
    #[arg(long, default_value_t = roizoom::harness::low_dose_i0())]
    i0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth oversampling relative to the reconstruction grid.
    #[arg(long, default_value_t = 2)]
    q: usize,
    /// fine_grid, analytic or inverse_crime.
    #[arg(long, default_value = "fine_grid", value_parser = parse_measurement)]
    measurement: MeasurementModel,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Folder written by `simulate`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, conflicts_with = "lambda_grid", required_unless_present = "lambda_grid")]
    lambda: Option<f64>,
    /// Strengths to search, "logspace:lo,hi,count" or "a,b,c"; keeps the best in MSE.
    #[arg(long, value_parser = parse_grid)]
    lambda_grid: Option<Grid>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ZoomTarget {
    /// Folder holding scan.json, sinogram.rzf, ground_truth.rzf and recon.rzf.
    #[arg(long = "in")]
    input: PathBuf,
    /// Region on the reconstruction grid as row,col,h,w (row-major, zero-based).
    #[arg(long, value_parser = parse_roi)]
    roi: Roi,
    /// Zoom factor; defaults to the scan oversampling.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// bicubic or adjoint_of_downsample.
    #[arg(long, default_value = "bicubic", value_parser = parse_upsampler)]
    upsampler: Upsampler,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ZoomArgs {
    #[command(flatten)]
    target: ZoomTarget,
    /// naive, lzfg-tv, lzfg-nlm or lzsg-tv.
    #[arg(long, default_value = "lzfg-tv")]
    method: String,
    /// Regularization strength; defaults to 0.1 for TV and 0.05 for NLM.
    #[arg(long)]
    lambda: Option<f64>,
    /// Views per minibatch for lzsg-tv; defaults to a sixth of the views.
    #[arg(long)]
    minibatch: Option<usize>,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    target: ZoomTarget,
    /// Strengths in run order, "logspace:lo,hi,count" or "a,b,c".
    #[arg(long, value_parser = parse_grid)]
    grid: Grid,
    /// tv or nlm.
    #[arg(long, default_value = "tv")]
    family: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// ExperimentConfig JSON, see configs/.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Overrides RZ_PORT.
    #[arg(long)]
    port: Option<u16>,
    /// Artifact folder; overrides RZ_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Concurrent jobs; overrides RZ_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Static browser client served under `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct Roi {
    row0: usize,
    col0: usize,
    h: usize,
    w: usize,
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_roi(s: &str) -> Result<Roi, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("roi must be four non-negative integers row,col,h,w, got {s:?}"))?;
    match parts[..] {
        [row0, col0, h, w] if h > 0 && w > 0 => Ok(Roi { row0, col0, h, w }),
        [_, _, _, _] => Err("roi height and width must be positive".into()),
        _ => Err(format!("roi must be four integers row,col,h,w, got {} values", parts.len())),
    }
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let values = if let Some(rest) = s.strip_prefix("logspace:") {
        let p: Vec<&str> = rest.split(',').map(str::trim).collect();
        let [lo, hi, n] = p[..] else {
            return Err(format!("expected logspace:lo,hi,count, got {s:?}"));
        };
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{v:?} is not a number"));
        let count = n.parse::<usize>().map_err(|_| format!("{n:?} is not a count"))?;
        logspace(num(lo)?, num(hi)?, count).map_err(|e| e.to_string())?
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err("grid values must be finite and non-negative".into());
    }
    Ok(Grid(values))
}

fn parse_measurement(s: &str) -> Result<MeasurementModel, String> {
    serde_json::from_value(s.into()).map_err(|_| format!("unknown measurement model {s:?}"))
}

fn parse_upsampler(s: &str) -> Result<Upsampler, String> {
    serde_json::from_value(s.into()).map_err(|_| format!("unknown upsampler {s:?}"))
}

/// A failed command: exit status 2 for rejected input, 1 otherwise.
struct Failure {
    code: u8,
    message: String,
}

impl From<roizoom::Error> for Failure {
    fn from(e: roizoom::Error) -> Self {
        let code = match e {
            roizoom::Error::InvalidParameter { .. }
            | roizoom::Error::RoiBounds { .. }
            | roizoom::Error::UnknownPhantom(_)
            | roizoom::Error::UnknownPreset(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Zoom(a) => commands::zoom(a),
        Command::Path(a) => commands::path(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Serve(a) => commands::serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
