//! HTTP API over a deployment config, its record store and its background
//! checkpoints.
//!
//! Every response is computed from those three sources. The store is
//! re-synchronised with its file before each use so violations appended by a
//! separate `stopline run` show up without a restart. Mutations of the store
//! and of the config each go through a single lock, so slip numbers stay
//! gap-free and readers never see a half-applied patch.

mod api;
pub mod error;
pub mod slip;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::routing::{get, patch, post};
use axum::Router;

use stopline_core::config::Deployment;
use stopline_core::framelist::{ingest_list, FrameRecord};
use stopline_core::store::RecordStore;

pub use error::{ApiError, ErrorBody};
pub use slip::SlipDocument;

/// Records per page of `GET /violations`.
pub const PAGE_SIZE: usize = 50;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub config_path: PathBuf,
    pub store_path: PathBuf,
    /// Frame list the pipeline ran over; frames are also known through the
    /// records that reference them.
    pub list_path: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    /// Directory relative frame paths resolve against.
    pub frames_base: PathBuf,
    /// JSONL log of applied config patches.
    pub audit_path: PathBuf,
    /// Bearer token required by mutating endpoints.
    pub token: String,
}

impl ServiceOptions {
    /// Options with the same defaults as the batch CLI: checkpoints in
    /// `<store stem>.ckpt`, frames relative to the list (or the config), and
    /// the audit log next to the config.
    pub fn new(config_path: PathBuf, store_path: PathBuf, list_path: Option<PathBuf>, token: String) -> Self {
        let stem = store_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "store".into());
        let checkpoint_dir = store_path.with_file_name(format!("{stem}.ckpt"));
        let frames_base = list_path
            .as_deref()
            .or(Some(config_path.as_path()))
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let audit_path = config_path.with_extension("audit.jsonl");
        Self {
            config_path,
            store_path,
            list_path,
            checkpoint_dir,
            frames_base,
            audit_path,
            token,
        }
    }
}

pub struct AppState {
    pub options: ServiceOptions,
    deployment: RwLock<Deployment>,
    store: Mutex<RecordStore>,
}

#[derive(Debug)]
pub enum StartupError {
    Config(stopline_core::config::ConfigError),
    Store(stopline_core::store::StoreError),
}

impl std::fmt::Display for StartupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartupError::Config(e) => write!(f, "{e}"),
            StartupError::Store(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StartupError {}

impl AppState {
    pub fn open(options: ServiceOptions) -> Result<Arc<Self>, StartupError> {
        let deployment = Deployment::load(&options.config_path).map_err(StartupError::Config)?;
        let store = RecordStore::open(&options.store_path).map_err(StartupError::Store)?;
        Ok(Arc::new(Self {
            options,
            deployment: RwLock::new(deployment),
            store: Mutex::new(store),
        }))
    }

    pub fn deployment(&self) -> Deployment {
        self.deployment.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Locks the store after applying any lines other writers appended.
    fn store(&self) -> Result<MutexGuard<'_, RecordStore>, ApiError> {
        let mut guard = self.store.lock().unwrap_or_else(|p| p.into_inner());
        guard.refresh()?;
        Ok(guard)
    }

    /// Every frame the service can resolve, by frame id.
    fn frame_index(&self) -> Result<HashMap<String, FrameRecord>, ApiError> {
        let mut index = HashMap::new();
        if let Some(list) = &self.options.list_path {
            let ingested = ingest_list(list).map_err(|e| ApiError::internal(e.to_string()))?;
            index.extend(ingested.frames.into_iter().map(|f| (f.frame_id(), f)));
        }
        for r in self.store()?.records() {
            index.entry(r.frame.frame_id()).or_insert_with(|| r.frame.clone());
        }
        Ok(index)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/cameras", get(api::list_cameras))
        .route("/cameras/{id}/pans/{k}/background", get(api::get_background))
        .route("/cameras/{id}/pans/{k}/config", patch(api::update_config))
        .route("/cameras/{id}/pans/{k}/band", post(api::preview_band))
        .route("/redetect", post(api::redetect))
        .route("/violations", get(api::list_violations))
        .route("/violations/{id}/review", post(api::review_violation))
        .route("/violations/{id}/slip", get(api::get_slip))
        .route("/frames/{id}/image", get(api::get_frame_image))
        .fallback(api::no_route)
        .with_state(state)
}
