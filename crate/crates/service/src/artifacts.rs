//! Images and traces produced by sessions and jobs, optionally mirrored to disk.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use roizoom::harness::io::{read_rzf, sidecar_path, write_rzf, Sidecar};
use roizoom::image::ImageGrid;
use roizoom::Result;

use crate::store::JobRecord;

#[derive(Debug, Clone)]
pub struct StoredImage {
    pub image: Arc<ImageGrid>,
    /// Upper end of the PNG display window.
    pub window: f64,
}

pub struct Artifacts {
    images: Mutex<HashMap<String, StoredImage>>,
    traces: Mutex<HashMap<String, String>>,
    dir: Option<PathBuf>,
}

impl Artifacts {
    /// Creates the `images`, `traces` and `jobs` folders under `dir` when given.
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            for sub in ["images", "traces", "jobs"] {
                fs::create_dir_all(d.join(sub))?;
            }
        }
        Ok(Self {
            images: Mutex::default(),
            traces: Mutex::default(),
            dir,
        })
    }

    pub fn put_image(&self, image: ImageGrid, window: f64, provenance: serde_json::Value) -> Result<String> {
        let id = format!("img-{}", uuid::Uuid::new_v4().simple());
        if let Some(d) = &self.dir {
            let mut prov = provenance;
            prov["window"] = window.into();
            write_rzf(&d.join("images").join(format!("{id}.rzf")), &image, &prov)?;
        }
        let stored = StoredImage {
            image: Arc::new(image),
            window,
        };
        lock(&self.images).insert(id.clone(), stored);
        Ok(id)
    }

    /// Looks in memory first, then in the data directory.
    pub fn image(&self, id: &str) -> Option<StoredImage> {
        if let Some(img) = lock(&self.images).get(id) {
            return Some(img.clone());
        }
        let path = self.file("images", id, "rzf")?;
        let image = read_rzf(&path).ok()?;
        let side: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(&path)).ok()?).ok()?;
        let window = side.provenance["window"].as_f64().unwrap_or_else(|| image.max().max(1e-12));
        let stored = StoredImage {
            image: Arc::new(image),
            window,
        };
        lock(&self.images).insert(id.to_string(), stored.clone());
        Some(stored)
    }

    pub fn put_trace(&self, csv: String) -> Result<String> {
        let id = format!("trace-{}", uuid::Uuid::new_v4().simple());
        if let Some(d) = &self.dir {
            fs::write(d.join("traces").join(format!("{id}.csv")), &csv)?;
        }
        lock(&self.traces).insert(id.clone(), csv);
        Ok(id)
    }

    pub fn trace(&self, id: &str) -> Option<String> {
        if let Some(t) = lock(&self.traces).get(id) {
            return Some(t.clone());
        }
        fs::read_to_string(self.file("traces", id, "csv")?).ok()
    }

    pub fn save_job(&self, record: &JobRecord) -> Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join("jobs").join(format!("{}.json", record.id));
            fs::write(path, serde_json::to_vec_pretty(record)?)?;
        }
        Ok(())
    }

    pub fn load_job(&self, id: &str) -> Option<JobRecord> {
        serde_json::from_slice(&fs::read(self.file("jobs", id, "json")?).ok()?).ok()
    }

    /// Path of a stored artifact; ids that could escape the folder are refused.
    fn file(&self, sub: &str, id: &str, ext: &str) -> Option<PathBuf> {
        let dir = self.dir.as_deref()?;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return None;
        }
        Some(Path::new(dir).join(sub).join(format!("{id}.{ext}")))
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}
