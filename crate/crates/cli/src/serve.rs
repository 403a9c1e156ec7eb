//! Labeling API: exposes each session's pending feedback request and live
//! metrics over HTTP. Sessions run on their own threads; a human-mode session
//! blocks until its pending request is answered through `POST .../label`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use dota_core::eval::{improvement_curve, Summary};
use dota_core::feedback::{SubmitError, SubmitOutcome};
use dota_core::session::PredictionRecord;
use dota_core::{stream_io, AdaptConfig, ClassifierSpec, EmbeddingRecord, FeedbackMode, FeedbackQueue, Session};

use crate::ServeArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    WaitingFeedback,
    Finished,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub status: Status,
    pub processed: u64,
    pub total: Option<u64>,
    pub gamma: f64,
    pub feedback_mode: FeedbackMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
struct Progress {
    status: Status,
    /// Stream positions consumed, skipped samples included.
    processed: u64,
    log: Vec<PredictionRecord>,
    error: Option<String>,
}

/// One adaptation session and the state the HTTP side reads.
pub struct SessionHandle {
    id: String,
    cfg: AdaptConfig,
    class_names: Vec<String>,
    total: Option<u64>,
    window: usize,
    queue: Arc<FeedbackQueue>,
    progress: Mutex<Progress>,
}

impl SessionHandle {
    /// Starts the engine thread over `records`. The final report is written to
    /// `report` when the stream is exhausted.
    pub fn spawn<I>(
        id: impl Into<String>,
        spec: ClassifierSpec,
        cfg: AdaptConfig,
        records: I,
        total: Option<u64>,
        window: usize,
        report: Option<PathBuf>,
    ) -> dota_core::Result<Arc<Self>>
    where
        I: IntoIterator<Item = dota_core::Result<EmbeddingRecord>> + Send + 'static,
    {
        let queue = Arc::new(FeedbackQueue::new(spec.num_classes()));
        let class_names = spec.class_names().to_vec();
        let mut session = Session::new(spec, cfg.clone())?.with_feedback_queue(queue.clone());
        let handle = Arc::new(Self {
            id: id.into(),
            cfg,
            class_names,
            total,
            window,
            queue,
            progress: Mutex::new(Progress { status: Status::Running, processed: 0, log: Vec::new(), error: None }),
        });
        let engine = handle.clone();
        thread::spawn(move || {
            let result = session.run_stream_with(records, engine.window, |s, outcome| {
                let mut p = engine.lock();
                p.log.push(outcome.record.clone());
                p.processed = s.state().position;
            });
            let result = result.and_then(|r| match &report {
                Some(path) => stream_io::write_report_file(path, &r).map(|()| r),
                None => Ok(r),
            });
            let mut p = engine.lock();
            p.processed = session.state().position;
            match result {
                Ok(r) => {
                    info!("session {} finished after {} samples", engine.id, r.log.len());
                    p.status = Status::Finished;
                }
                Err(e) => {
                    error!("session {} stopped: {e}", engine.id);
                    p.status = Status::Error;
                    p.error = Some(e.to_string());
                }
            }
        });
        Ok(handle)
    }

    fn lock(&self) -> MutexGuard<'_, Progress> {
        self.progress.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn queue(&self) -> &FeedbackQueue {
        &self.queue
    }

    fn describe(&self, p: &Progress) -> ApiSession {
        let status = match p.status {
            Status::Running if self.queue.pending().is_some() => Status::WaitingFeedback,
            s => s,
        };
        ApiSession {
            session_id: self.id.clone(),
            status,
            processed: p.processed,
            total: self.total,
            gamma: self.cfg.gamma,
            feedback_mode: self.cfg.feedback_mode,
            error: p.error.clone(),
        }
    }

    pub fn snapshot(&self) -> ApiSession {
        self.describe(&self.lock())
    }

    /// Copy of the prediction log so far.
    pub fn log(&self) -> Vec<PredictionRecord> {
        self.lock().log.clone()
    }

    fn metrics(&self) -> dota_core::Result<serde_json::Value> {
        let p = self.lock();
        let summary = Summary::from_log(&p.log, self.window)?;
        let improvement = improvement_curve(&p.log, self.window).ok().and_then(|c| c.last().map(|&(_, g)| g));
        Ok(json!({
            "session": self.describe(&p),
            "summary": summary,
            "latest_window": {
                "window": self.window,
                "acc": summary.window_acc.last().copied().flatten(),
                "zs_acc": summary.window_zs_acc.last().copied().flatten(),
                "improvement": improvement,
            },
        }))
    }

    /// Wakes a blocked engine so its thread can exit.
    pub fn close(&self) {
        self.queue.close();
    }
}

#[derive(Default)]
pub struct Registry {
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, handle: Arc<SessionHandle>) {
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(handle.id.clone(), handle);
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionHandle>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn all(&self) -> Vec<Arc<SessionHandle>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    pub fn close_all(&self) {
        for s in self.all() {
            s.close();
        }
    }
}

#[derive(Debug)]
enum ApiError {
    NotFound(String),
    BadRequest(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": message }))).into_response()
    }
}

type Shared = Arc<Registry>;

fn find(reg: &Registry, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
    reg.get(id).ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    sample_id: String,
    label_index: i64,
}

async fn list_sessions(State(reg): State<Shared>) -> Json<Vec<ApiSession>> {
    Json(reg.all().iter().map(|s| s.snapshot()).collect())
}

async fn pending(State(reg): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = find(&reg, &id)?;
    Ok(match session.queue.pending() {
        Some(request) => Json(request).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn label(State(reg): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let session = find(&reg, &id)?;
    let body: LabelBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed label body: {e}")))?;
    let k = session.class_names.len();
    let label = usize::try_from(body.label_index)
        .ok()
        .filter(|&l| l < k)
        .ok_or_else(|| ApiError::Unprocessable(format!("label {} out of range for {k} classes", body.label_index)))?;
    // Serialize with metric reads so a snapshot never straddles a label.
    let _guard = session.lock();
    let outcome = session.queue.submit(&body.sample_id, label).map_err(|e| match e {
        SubmitError::NotPending(_) => ApiError::Conflict(e.to_string()),
        SubmitError::InvalidLabel { .. } => ApiError::Unprocessable(e.to_string()),
    })?;
    let status = match outcome {
        SubmitOutcome::Accepted => "accepted",
        SubmitOutcome::AlreadyApplied => "already_applied",
    };
    Ok(Json(json!({ "sample_id": body.sample_id, "label_index": label, "status": status })).into_response())
}

async fn metrics(State(reg): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let session = find(&reg, &id)?;
    session.metrics().map(Json).map_err(|e| ApiError::Internal(e.to_string()))
}

async fn classes(State(reg): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let session = find(&reg, &id)?;
    Ok(Json(json!({ "class_names": session.class_names })))
}

pub fn router(registry: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/sessions", get(list_sessions))
        .route("/api/v1/sessions/{id}/pending", get(pending))
        .route("/api/v1/sessions/{id}/label", post(label))
        .route("/api/v1/sessions/{id}/metrics", get(metrics))
        .route("/api/v1/sessions/{id}/classes", get(classes))
        .with_state(registry);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let spec = stream_io::read_classifier(&args.input.classifier)
        .with_context(|| format!("reading {}", args.input.classifier.display()))?;
    let reader = stream_io::open_stream(&args.input.stream)
        .with_context(|| format!("opening {}", args.input.stream.display()))?;
    let header = reader.header();
    anyhow::ensure!(
        header.dim as usize == spec.dim(),
        "stream dimension {} does not match classifier dimension {}",
        header.dim,
        spec.dim()
    );
    let id = args.input.stream.file_stem().map_or("session".into(), |s| s.to_string_lossy().into_owned());
    let records = reader.map(|r| r.and_then(|raw| raw.ingest()));
    let registry = Arc::new(Registry::new());
    let handle = SessionHandle::spawn(
        id.clone(),
        spec,
        args.adapt.config(),
        records,
        Some(header.count),
        args.window,
        args.report.clone(),
    )?;
    registry.insert(handle);

    let app = router(registry.clone(), args.static_dir.clone());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.port)).await?;
        info!("session {id:?} listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = tokio::signal::ctrl_c().await;
                registry.close_all();
            })
            .await?;
        Ok(())
    })
}
