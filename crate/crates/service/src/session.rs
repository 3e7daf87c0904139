//! Simulated scans shared read-only by the jobs submitted against them.

use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

use roizoom::ct::{Sinogram, SparseSystemMatrix};
use roizoom::harness::ScanSpec;
use roizoom::image::{downsample, ImageGrid};
use roizoom::Result;

use crate::artifacts::Artifacts;

pub struct Session {
    pub id: String,
    pub spec: ScanSpec,
    pub a: SparseSystemMatrix,
    pub b: Sinogram,
    /// Ground truth on the fine grid.
    pub truth: ImageGrid,
    /// Ground truth on the reconstruction grid.
    pub coarse_truth: ImageGrid,
    /// Display window shared by every image of the session.
    pub window: f64,
    pub ground_truth_image: String,
    pub sinogram_image: String,
    state: Mutex<SessionState>,
}

#[derive(Default, Clone)]
struct SessionState {
    jobs: Vec<String>,
    /// Finished first-stage images, oldest first.
    reconstructions: Vec<Reconstruction>,
}

/// A finished first-stage image.
#[derive(Debug, Clone, Serialize)]
pub struct Reconstruction {
    pub job: String,
    pub image: String,
    #[serde(skip)]
    pub x1: std::sync::Arc<ImageGrid>,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub id: String,
    #[serde(flatten)]
    pub spec: ScanSpec,
    /// Reconstruction grid.
    pub width: usize,
    pub height: usize,
    pub n_views: usize,
    pub n_det: usize,
    pub ground_truth_image: String,
    pub sinogram_image: String,
    pub reconstruction: Option<Reconstruction>,
    pub jobs: Vec<String>,
}

/// Stable id of a scan specification: identical payloads map to one session.
pub fn session_id(spec: &ScanSpec) -> String {
    let digest = Sha256::digest(serde_json::to_vec(spec).expect("scan spec serializes"));
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("ses-{hex}")
}

impl Session {
    /// Builds the system matrix and simulates the scan. Slow; run off the async runtime.
    pub fn create(spec: ScanSpec, artifacts: &Artifacts) -> Result<Self> {
        spec.validate()?;
        let id = session_id(&spec);
        let a = spec.system_matrix()?;
        let (b, truth) = spec.simulate(&a)?;
        let coarse_truth = downsample(&truth, spec.q)?;
        let window = truth.max().max(1e-12);
        let prov = |kind: &str| serde_json::json!({ "session": id, "seed": spec.seed, "kind": kind });
        let ground_truth_image = artifacts.put_image(truth.clone(), window, prov("ground_truth"))?;
        let sino = ImageGrid::new(b.n_det, b.n_views, 1.0, b.values().to_vec())?;
        let sino_window = sino.max().max(1e-12);
        let sinogram_image = artifacts.put_image(sino, sino_window, prov("sinogram"))?;
        Ok(Self {
            id,
            spec,
            a,
            b,
            truth,
            coarse_truth,
            window,
            ground_truth_image,
            sinogram_image,
            state: Mutex::default(),
        })
    }

    pub fn add_job(&self, job: String) {
        self.lock().jobs.push(job);
    }

    pub fn add_reconstruction(&self, rec: Reconstruction) {
        self.lock().reconstructions.push(rec);
    }

    /// The reconstruction made by `job`, or the latest one.
    pub fn reconstruction(&self, job: Option<&str>) -> Option<Reconstruction> {
        let state = self.lock();
        match job {
            Some(id) => state.reconstructions.iter().find(|r| r.job == id).cloned(),
            None => state.reconstructions.last().cloned(),
        }
    }

    pub fn view(&self) -> SessionView {
        let state = self.lock().clone();
        SessionView {
            id: self.id.clone(),
            spec: self.spec.clone(),
            width: self.a.width(),
            height: self.a.height(),
            n_views: self.a.n_views(),
            n_det: self.a.n_det(),
            ground_truth_image: self.ground_truth_image.clone(),
            sinogram_image: self.sinogram_image.clone(),
            reconstruction: state.reconstructions.last().cloned(),
            jobs: state.jobs,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}
