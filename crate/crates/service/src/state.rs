//! Shared server state: immutable dataset and distances, the current
//! analysis snapshot, the session, and artifact caches.
//!
//! Readers clone the snapshot `Arc` and never block on recomputation.
//! Session mutations take the session lock, which is the single writer.
//! Only one recomputation runs at a time; a second request while one is
//! running is refused rather than queued.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use transens_core::descriptors::EnsembleDistances;
use transens_core::field::GroupDisplacementField;
use transens_core::ingest::Dataset;
use transens_core::pipeline::Analysis;
use transens_core::session::{Session, StaleReport};
use transens_core::strain::GlyphParams;

use crate::error::{ApiError, ApiResult};

/// Retry hint handed out with `409` responses.
pub const RETRY_AFTER_MS: u64 = 500;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Kernel width for group fields when a request does not set one.
    pub sigma: Option<f64>,
    pub glyphs: GlyphParams,
    /// Parent directory of export runs.
    pub export_dir: PathBuf,
    /// Session file written after every mutation, when set.
    pub session_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Progress {
    pub busy: bool,
    pub job: Option<String>,
    pub elapsed_s: Option<f64>,
}

pub struct AppState {
    pub dataset: Arc<Dataset>,
    pub ensemble: Arc<EnsembleDistances>,
    pub config: ServeConfig,
    analysis: RwLock<Arc<Analysis>>,
    session: Mutex<Session>,
    reductions: Mutex<HashMap<u64, Arc<Analysis>>>,
    views: Mutex<HashMap<String, Arc<Value>>>,
    fields: Mutex<HashMap<String, Arc<GroupDisplacementField>>>,
    busy: AtomicBool,
    job: Mutex<Option<(String, Instant)>>,
}

/// Held while a recomputation runs; releases the busy flag on drop.
pub struct JobGuard {
    state: Arc<AppState>,
}

impl Drop for JobGuard {
    fn drop(&mut self) {
        *lock(&self.state.job) = None;
        self.state.busy.store(false, Ordering::Release);
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    pub fn new(analysis: Analysis, mut session: Session, config: ServeConfig) -> (Arc<Self>, StaleReport) {
        session.reduction_cutoff = analysis.reduction.cutoff;
        let stale = session.validate(&analysis);
        let analysis = Arc::new(analysis);
        let state = Arc::new(Self {
            dataset: Arc::clone(&analysis.dataset),
            ensemble: Arc::clone(&analysis.ensemble),
            config,
            reductions: Mutex::new(HashMap::from([(analysis.reduction.cutoff.to_bits(), Arc::clone(&analysis))])),
            analysis: RwLock::new(analysis),
            session: Mutex::new(session),
            views: Mutex::new(HashMap::new()),
            fields: Mutex::new(HashMap::new()),
            busy: AtomicBool::new(false),
            job: Mutex::new(None),
        });
        (state, stale)
    }

    /// Current analysis snapshot.
    pub fn analysis(&self) -> Arc<Analysis> {
        Arc::clone(&self.analysis.read().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn session(&self) -> Session {
        lock(&self.session).clone()
    }

    /// Applies `f` to the session and persists it when a session file is
    /// configured. The session lock is held for the whole call.
    pub fn with_session<T>(&self, f: impl FnOnce(&mut Session, &Analysis) -> ApiResult<T>) -> ApiResult<T> {
        let mut session = lock(&self.session);
        let analysis = self.analysis();
        let mut draft = session.clone();
        let out = f(&mut draft, &analysis)?;
        draft.check().map_err(ApiError::from)?;
        if let Some(path) = &self.config.session_path {
            draft
                .save(path)
                .map_err(|e| ApiError::internal(format!("saving session: {e}")))?;
        }
        *session = draft;
        Ok(out)
    }

    pub fn try_begin(self: &Arc<Self>, job: &str) -> Option<JobGuard> {
        if self
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return None;
        }
        *lock(&self.job) = Some((job.to_string(), Instant::now()));
        Some(JobGuard { state: Arc::clone(self) })
    }

    pub fn progress(&self) -> Progress {
        let job = lock(&self.job).clone();
        Progress {
            busy: self.busy.load(Ordering::Acquire),
            elapsed_s: job.as_ref().map(|(_, t)| t.elapsed().as_secs_f64()),
            job: job.map(|(j, _)| j),
        }
    }

    pub fn running_job(&self) -> String {
        lock(&self.job)
            .as_ref()
            .map_or_else(|| "a recomputation".to_string(), |(j, _)| j.clone())
    }

    pub fn cached_reduction(&self, cutoff: f64) -> Option<Arc<Analysis>> {
        lock(&self.reductions).get(&cutoff.to_bits()).cloned()
    }

    /// Makes `analysis` current and re-validates the session against it.
    /// The snapshot and the session change under the session lock, so
    /// no reader sees a session that refers to the previous hierarchy.
    pub fn install(&self, analysis: Arc<Analysis>) -> ApiResult<StaleReport> {
        lock(&self.reductions).insert(analysis.reduction.cutoff.to_bits(), Arc::clone(&analysis));
        let mut session = lock(&self.session);
        let mut draft = session.clone();
        draft.reduction_cutoff = analysis.reduction.cutoff;
        let stale = draft.validate(analysis.as_ref());
        if let Some(path) = &self.config.session_path {
            draft
                .save(path)
                .map_err(|e| ApiError::internal(format!("saving session: {e}")))?;
        }
        *self.analysis.write().unwrap_or_else(|p| p.into_inner()) = analysis;
        *session = draft;
        Ok(stale)
    }

    pub fn cached_view(&self, key: &str) -> Option<Arc<Value>> {
        lock(&self.views).get(key).cloned()
    }

    pub fn store_view(&self, key: String, value: Value) -> Arc<Value> {
        let value = Arc::new(value);
        lock(&self.views).insert(key, Arc::clone(&value));
        value
    }

    pub fn cached_field(&self, key: &str) -> Option<Arc<GroupDisplacementField>> {
        lock(&self.fields).get(key).cloned()
    }

    pub fn store_field(&self, key: String, field: GroupDisplacementField) -> Arc<GroupDisplacementField> {
        let field = Arc::new(field);
        lock(&self.fields).insert(key, Arc::clone(&field));
        field
    }
}

/// Cluster cutoff in the middle of the widest gap between consecutive
/// merge heights, which separates the most distinct groups. Trees with
/// fewer than two merges are cut at the root height.
pub fn default_cluster_cutoff(analysis: &Analysis) -> f64 {
    let tree = &analysis.hierarchy.tree;
    let mut heights: Vec<f64> = tree.nodes().iter().filter(|n| !n.is_leaf()).map(|n| n.height).collect();
    heights.sort_by(f64::total_cmp);
    heights
        .windows(2)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map_or(tree.height(tree.root()), |w| 0.5 * (w[0] + w[1]))
}
