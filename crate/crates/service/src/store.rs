//! In-memory job records with monotone lifecycle updates.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Reconstruct,
    Zoom,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    /// Position in the lifecycle; terminal states share the top rank.
    pub fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }
}

/// References to the artifacts of a finished job.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    /// Image ids; path jobs list one per strength in grid order.
    pub images: Vec<String>,
    /// Trace ids (CSV), parallel to `images` for iterative runs.
    pub traces: Vec<String>,
    /// Regularization strength of each image, absent for the naive zoom.
    pub strengths: Vec<Option<f64>>,
    /// Strength chosen by a reconstruct grid search.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_lambda: Option<f64>,
    /// PSNR of each image against the session ground truth, when comparable.
    pub psnr: Vec<Option<f64>>,
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub session: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    /// Unix milliseconds.
    pub created_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

impl JobRecord {
    pub fn new(id: String, session: String, kind: JobKind) -> Self {
        Self {
            id,
            session,
            kind,
            state: JobState::Queued,
            progress: 0.0,
            created_at: now_ms(),
            started_at: None,
            finished_at: None,
            result: None,
            error: None,
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CancelError {
    NotFound,
    AlreadyFinished(JobState),
}

struct Entry {
    record: JobRecord,
    cancel: Arc<AtomicBool>,
}

/// Serialized job table. Every mutation keeps state rank and progress
/// nondecreasing, so no reader can observe a regression.
#[derive(Default)]
pub struct JobStore {
    jobs: Mutex<HashMap<String, Entry>>,
}

impl JobStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a queued job and returns its cancellation flag.
    pub fn insert(&self, record: JobRecord) -> Arc<AtomicBool> {
        let cancel = Arc::new(AtomicBool::new(false));
        let entry = Entry {
            record,
            cancel: cancel.clone(),
        };
        self.lock().insert(entry.record.id.clone(), entry);
        cancel
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.lock().get(id).map(|e| e.record.clone())
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `queued -> running`. False when the job was cancelled while queued.
    pub fn start(&self, id: &str) -> bool {
        let mut jobs = self.lock();
        match jobs.get_mut(id) {
            Some(e) if e.record.state == JobState::Queued => {
                e.record.state = JobState::Running;
                e.record.started_at = Some(now_ms());
                true
            }
            _ => false,
        }
    }

    /// Raises the progress of a running job; lower or non-finite values are ignored.
    pub fn progress(&self, id: &str, fraction: f64) {
        if !fraction.is_finite() {
            return;
        }
        let mut jobs = self.lock();
        if let Some(e) = jobs.get_mut(id) {
            if e.record.state == JobState::Running {
                e.record.progress = e.record.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }

    /// `running -> done | failed`. A job already terminal (cancelled) keeps
    /// its state and the outcome is dropped. Returns the final record.
    pub fn finish(&self, id: &str, outcome: Result<JobResult, String>) -> Option<JobRecord> {
        let mut jobs = self.lock();
        let e = jobs.get_mut(id)?;
        if e.record.state == JobState::Running {
            e.record.finished_at = Some(now_ms());
            match outcome {
                Ok(result) => {
                    e.record.state = JobState::Done;
                    e.record.progress = 1.0;
                    e.record.result = Some(result);
                }
                Err(msg) => {
                    e.record.state = JobState::Failed;
                    e.record.error = Some(msg);
                }
            }
        }
        Some(e.record.clone())
    }

    /// Fails a queued or running job with "cancelled" and raises its flag.
    pub fn cancel(&self, id: &str) -> Result<JobRecord, CancelError> {
        let mut jobs = self.lock();
        let e = jobs.get_mut(id).ok_or(CancelError::NotFound)?;
        if e.record.state.is_terminal() {
            return Err(CancelError::AlreadyFinished(e.record.state));
        }
        e.cancel.store(true, Ordering::SeqCst);
        e.record.state = JobState::Failed;
        e.record.error = Some("cancelled".into());
        e.record.finished_at = Some(now_ms());
        Ok(e.record.clone())
    }

    /// Adopts a record loaded from disk if the id is unknown.
    pub fn restore(&self, record: JobRecord) {
        let mut jobs = self.lock();
        jobs.entry(record.id.clone()).or_insert_with(|| Entry {
            record,
            cancel: Arc::new(AtomicBool::new(false)),
        });
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Entry>> {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(id: &str) -> (JobStore, Arc<AtomicBool>) {
        let s = JobStore::new();
        let flag = s.insert(JobRecord::new(id.into(), "s".into(), JobKind::Zoom));
        (s, flag)
    }

    #[test]
    fn happy_path() {
        let (s, _) = store_with("a");
        assert_eq!(s.get("a").unwrap().state, JobState::Queued);
        assert!(s.start("a"));
        assert!(!s.start("a"));
        s.progress("a", 0.4);
        s.progress("a", 0.2);
        assert_eq!(s.get("a").unwrap().progress, 0.4);
        let done = s.finish("a", Ok(JobResult::default())).unwrap();
        assert_eq!(done.state, JobState::Done);
        assert_eq!(done.progress, 1.0);
        assert_eq!(s.cancel("a"), Err(CancelError::AlreadyFinished(JobState::Done)));
    }

    #[test]
    fn cancel_wins_over_late_results() {
        let (s, flag) = store_with("a");
        s.start("a");
        let rec = s.cancel("a").unwrap();
        assert!(flag.load(Ordering::SeqCst));
        assert_eq!((rec.state, rec.error.as_deref()), (JobState::Failed, Some("cancelled")));
        let after = s.finish("a", Ok(JobResult::default())).unwrap();
        assert_eq!(after.state, JobState::Failed);
        assert!(after.result.is_none());
        assert_eq!(s.cancel("missing"), Err(CancelError::NotFound));
    }

    #[test]
    fn cancelled_while_queued_never_starts() {
        let (s, _) = store_with("a");
        s.cancel("a").unwrap();
        assert!(!s.start("a"));
        assert_eq!(s.get("a").unwrap().state, JobState::Failed);
    }
}
