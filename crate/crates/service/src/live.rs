//! A session shared between HTTP handlers and a background training worker.
//!
//! The worker owns model mutation: it repeatedly takes the session lock,
//! applies queued corrections, trains one chunk and publishes a snapshot
//! when something visible changed. Handlers read the latest published
//! snapshot without touching the lock. Annotations are appended to the log
//! (the single write serialization point), queued, and applied either by
//! the handler itself, if it gets the session lock within the correction
//! timeout, or by the worker shortly after.

use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle, Thread};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::{Result, ServiceError};
use crate::log::{AnnotationEvent, AnnotationLog};
use crate::session::{ImportSummary, Progress, Session, LOG_FILE, SESSION_FILE};
use crate::snapshot::{LabelDef, Snapshot, TextScores, TrainingState};

const IDLE_WAIT: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub event: AnnotationEvent,
    /// True when the refresh had not been applied within the timeout; the
    /// scores then predate this annotation.
    pub stale: bool,
    pub snapshot_pass: u64,
    pub scores: TextScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub state: TrainingState,
    pub passes: u64,
    pub snapshot_pass: u64,
    pub val_rmse: Option<f64>,
    pub pending_corrections: usize,
    pub m: usize,
    pub n1: usize,
    pub labels: usize,
    pub annotations: usize,
}

struct Journal {
    log: AnnotationLog,
    pending: VecDeque<AnnotationEvent>,
}

struct Shared {
    cfg: ServiceConfig,
    session: Mutex<Session>,
    journal: Mutex<Journal>,
    published: RwLock<Arc<Snapshot>>,
    shutdown: AtomicBool,
    worker: OnceLock<Thread>,
}

impl Shared {
    fn publish(&self, session: &Session) {
        let snap = Arc::new(session.snapshot());
        *self.published.write() = snap;
    }

    /// Applies every queued correction. Must be called with the session lock held.
    fn drain(&self, session: &mut Session) -> usize {
        let events: Vec<AnnotationEvent> = self.journal.lock().pending.drain(..).collect();
        for ev in &events {
            if let Err(e) = session.annotate(ev.row_id, ev.label_id, ev.value) {
                tracing::warn!(seq = ev.seq, error = %e, "dropping correction");
            }
        }
        events.len()
    }

    fn wake_worker(&self) {
        if let Some(t) = self.worker.get() {
            t.unpark();
        }
    }

    fn work(&self) {
        while !self.shutdown.load(Ordering::Acquire) {
            let busy = {
                let mut session = self.session.lock();
                let applied = self.drain(&mut session);
                let progress = match session.train_step(self.cfg.train_chunk) {
                    Ok(p) => p,
                    Err(e) => {
                        tracing::error!(error = %e, "training step failed");
                        Progress::Idle
                    }
                };
                if applied > 0
                    || matches!(progress, Progress::Pass { .. } | Progress::Converged { .. })
                {
                    self.publish(&session);
                }
                !matches!(progress, Progress::Idle)
            };
            if !busy {
                thread::park_timeout(IDLE_WAIT);
            }
        }
    }
}

pub struct LiveSession {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl LiveSession {
    /// Restores the session in `cfg.data_dir` if one was persisted there,
    /// otherwise starts an empty one, then starts the training worker.
    pub fn open(cfg: ServiceConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.data_dir)?;
        let log_path = cfg.data_dir.join(LOG_FILE);
        let (session, log) = if cfg.data_dir.join(SESSION_FILE).is_file() {
            let mut session = Session::restore(&cfg.data_dir)?;
            let log = AnnotationLog::open(&log_path)?;
            let replayed = session.replay(&log)?;
            if replayed > 0 {
                tracing::info!(
                    replayed,
                    "applied annotations logged after the last persist"
                );
            }
            (session, log)
        } else {
            if log_path.exists() {
                let aside =
                    log_path.with_extension(format!("orphaned-{}", crate::log::now_millis()));
                tracing::warn!(path = %aside.display(), "annotation log without a session; moved aside");
                fs::rename(&log_path, &aside)?;
            }
            (
                Session::new(cfg.hp, cfg.min_count)?,
                AnnotationLog::open(&log_path)?,
            )
        };
        Ok(Self::start(cfg, session, log))
    }

    /// Serves an existing session. The log should be the one that
    /// produced its label block.
    pub fn start(cfg: ServiceConfig, session: Session, log: AnnotationLog) -> Self {
        let snap = Arc::new(session.snapshot());
        let shared = Arc::new(Shared {
            cfg,
            session: Mutex::new(session),
            journal: Mutex::new(Journal {
                log,
                pending: VecDeque::new(),
            }),
            published: RwLock::new(snap),
            shutdown: AtomicBool::new(false),
            worker: OnceLock::new(),
        });
        let worker_shared = Arc::clone(&shared);
        let handle = thread::Builder::new()
            .name("labelfact-train".into())
            .spawn(move || worker_shared.work())
            .expect("spawn training worker");
        let _ = shared.worker.set(handle.thread().clone());
        LiveSession {
            shared,
            worker: Some(handle),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.cfg
    }

    pub fn data_dir(&self) -> PathBuf {
        self.shared.cfg.data_dir.clone()
    }

    /// The latest published snapshot.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.shared.published.read())
    }

    /// Runs `f` with exclusive access to the session, then publishes.
    pub fn with_session<R>(&self, f: impl FnOnce(&mut Session) -> R) -> R {
        let mut session = self.shared.session.lock();
        self.shared.drain(&mut session);
        let out = f(&mut session);
        self.shared.publish(&session);
        drop(session);
        self.shared.wake_worker();
        out
    }

    pub fn import_texts(&self, texts: Vec<String>) -> Result<ImportSummary> {
        self.with_session(|s| s.import_texts(texts))
    }

    pub fn create_label(&self, name: &str, owner: &str) -> Result<LabelDef> {
        self.with_session(|s| s.create_label(name, owner))
    }

    pub fn delete_label(&self, id: usize, owner: &str) -> Result<LabelDef> {
        self.with_session(|s| s.delete_label(id, Some(owner)))
    }

    /// Logs the annotation durably, then tries to apply it within the
    /// correction timeout.
    pub fn annotate(
        &self,
        row: usize,
        label: usize,
        value: u8,
        owner: &str,
    ) -> Result<AnnotationAck> {
        let event = {
            let mut journal = self.shared.journal.lock();
            // validated under the journal lock so a concurrent label deletion
            // published after this point is caught when the event is applied
            self.snapshot()
                .check_annotation(row, label, value, Some(owner))?;
            let ev = journal.log.append(row, label, value)?;
            journal.pending.push_back(ev.clone());
            ev
        };
        let applied = match self
            .shared
            .session
            .try_lock_for(self.shared.cfg.correction_timeout())
        {
            Some(mut session) => {
                self.shared.drain(&mut session);
                self.shared.publish(&session);
                true
            }
            None => false,
        };
        self.shared.wake_worker();
        let snap = self.snapshot();
        Ok(AnnotationAck {
            stale: !applied,
            snapshot_pass: snap.pass,
            scores: snap.text_scores(row, Some(owner))?,
            event,
        })
    }

    /// Applies a batch of annotations, e.g. from a re-imported export file.
    pub fn annotate_batch(&self, cells: &[(usize, usize, u8)], owner: &str) -> Result<usize> {
        let snap = self.snapshot();
        for &(row, label, value) in cells {
            snap.check_annotation(row, label, value, Some(owner))?;
        }
        {
            let mut journal = self.shared.journal.lock();
            for &(row, label, value) in cells {
                let ev = journal.log.append(row, label, value)?;
                journal.pending.push_back(ev);
            }
        }
        self.with_session(|_| ());
        Ok(cells.len())
    }

    pub fn status(&self) -> Status {
        let snap = self.snapshot();
        let journal = self.shared.journal.lock();
        Status {
            state: snap.state,
            passes: snap.pass,
            snapshot_pass: snap.pass,
            val_rmse: snap.val_rmse,
            pending_corrections: journal.pending.len(),
            m: snap.m(),
            n1: snap.n1(),
            labels: snap.labels(None).len(),
            annotations: journal.log.len(),
        }
    }

    /// Writes the session into the data directory.
    pub fn persist(&self) -> Result<u64> {
        let dir = self.data_dir();
        self.with_session(|s| s.persist(&dir).map(|_| s.passes()))
    }

    /// Blocks until training is idle or converged and no correction is
    /// pending, or `timeout` elapses. Returns whether it settled.
    pub fn wait_settled(&self, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let settled = {
                let session = self.shared.session.lock();
                session.is_settled()
                    && self.shared.journal.lock().pending.is_empty()
                    && self.snapshot().revision == session.revision()
            };
            if settled {
                return true;
            }
            if std::time::Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn shutdown(&mut self) -> Result<()> {
        self.shared.shutdown.store(true, Ordering::Release);
        self.shared.wake_worker();
        if let Some(h) = self.worker.take() {
            h.join()
                .map_err(|_| ServiceError::Internal("training worker panicked".into()))?;
        }
        Ok(())
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
