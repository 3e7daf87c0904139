//! HTTP job service over the zoom-in pipeline.
//!
//! A session simulates one scan; jobs run the first-stage reconstruction,
//! single zooms and regularization paths against it on a bounded worker pool.
//! Clients poll job records and fetch images by id.

mod api;
pub mod artifacts;
pub mod jobs;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use tokio::sync::Semaphore;

pub use api::router;
use artifacts::Artifacts;
use session::Session;
use store::JobStore;

/// Runtime settings, normally read from `RZ_PORT`, `RZ_DATA_DIR` and `RZ_WORKERS`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    /// Folder mirroring finished artifacts; in-memory only when absent.
    pub data_dir: Option<PathBuf>,
    pub workers: usize,
    /// Static assets served under `/` (the browser client).
    pub ui_dir: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| (n.get() / 2).max(1))
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: None,
            workers: default_workers(),
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Like [`Self::from_env`] with an injectable variable source.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut cfg = Self::default();
        if let Some(p) = get("RZ_PORT") {
            cfg.port = p.parse().map_err(|_| format!("RZ_PORT: {p:?} is not a port number"))?;
        }
        if let Some(d) = get("RZ_DATA_DIR").filter(|d| !d.is_empty()) {
            cfg.data_dir = Some(PathBuf::from(d));
        }
        if let Some(w) = get("RZ_WORKERS") {
            cfg.workers = match w.parse::<usize>() {
                Ok(n) if n >= 1 => n,
                _ => return Err(format!("RZ_WORKERS: {w:?} is not a positive integer")),
            };
        }
        Ok(cfg)
    }
}

/// Shared state behind every handler.
pub struct AppState {
    pub(crate) sessions: Mutex<HashMap<String, Arc<Session>>>,
    /// Serializes session creation so identical payloads simulate once.
    pub(crate) creating: tokio::sync::Mutex<()>,
    pub(crate) jobs: Arc<JobStore>,
    pub(crate) artifacts: Arc<Artifacts>,
    pub(crate) workers: Arc<Semaphore>,
    pub(crate) ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(cfg: &ServiceConfig) -> roizoom::Result<Arc<Self>> {
        Ok(Arc::new(Self {
            sessions: Mutex::default(),
            creating: tokio::sync::Mutex::new(()),
            jobs: Arc::new(JobStore::new()),
            artifacts: Arc::new(Artifacts::new(cfg.data_dir.clone())?),
            workers: Arc::new(Semaphore::new(cfg.workers.max(1))),
            ui_dir: cfg.ui_dir.clone(),
        }))
    }

    pub(crate) fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }
}

/// Binds `0.0.0.0:port` and serves until the process ends.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(&cfg).map_err(std::io::Error::other)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr} with {} workers", cfg.workers);
    axum::serve(listener, router(state)).await
}
