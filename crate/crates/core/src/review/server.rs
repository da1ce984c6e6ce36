//! HTTP front of the review workflow.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::session::{ReviewSession, SampleStatus, SESSION_FILE};
use super::verdict::VerdictRequest;
use super::ReviewError;
use crate::detector::{read_score_report, DEFAULT_TAU};

/// All sessions under one root directory. Verdict appends are serialized by
/// the lock.
pub struct ReviewService {
    root: PathBuf,
    sessions: Mutex<BTreeMap<String, ReviewSession>>,
}

impl ReviewService {
    /// Reopens every session persisted under `root`.
    pub fn open(root: &Path) -> Result<Self, ReviewError> {
        std::fs::create_dir_all(root).map_err(|e| ReviewError::io(root, e))?;
        let mut sessions = BTreeMap::new();
        let entries = std::fs::read_dir(root).map_err(|e| ReviewError::io(root, e))?;
        for entry in entries {
            let dir = entry.map_err(|e| ReviewError::io(root, e))?.path();
            if dir.join(SESSION_FILE).exists() {
                let s = ReviewSession::open(&dir)?;
                log::info!("recovered session {} with {} verdicts", s.id(), s.effective_count());
                sessions.insert(s.id().to_string(), s);
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            sessions: Mutex::new(sessions),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates (or reopens) the session for a manifest and a score report.
    pub fn create_session(&self, manifest: &Path, scores: &Path, tau: f64) -> Result<String, ReviewError> {
        let text = std::fs::read_to_string(scores).map_err(|e| ReviewError::io(scores, e))?;
        let scores = read_score_report(&text)?;
        let session = ReviewSession::create(&self.root, manifest, &scores, tau)?;
        let id = session.id().to_string();
        let mut sessions = self.sessions.lock().expect("session lock");
        sessions.entry(id.clone()).or_insert(session);
        Ok(id)
    }

    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut ReviewSession) -> Result<T, ReviewError>) -> Result<T, ReviewError> {
        let mut sessions = self.sessions.lock().expect("session lock");
        let s = sessions.get_mut(id).ok_or_else(|| ReviewError::NotFound {
            kind: "session",
            id: id.to_string(),
        })?;
        f(s)
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::Invalid(_) | ReviewError::Pipeline(_) | ReviewError::Detector(_) => StatusCode::BAD_REQUEST,
            ReviewError::NotFound { .. } => StatusCode::NOT_FOUND,
            ReviewError::Pending(_) => StatusCode::CONFLICT,
            ReviewError::CorruptLog { .. } | ReviewError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let ReviewError::Pending(ids) = &self {
            body["pending"] = json!(ids);
        }
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<ReviewService>;

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ReviewError> {
    let body: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ReviewError::Invalid(format!("malformed request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    manifest: PathBuf,
    scores: PathBuf,
    #[serde(default)]
    tau: Option<f64>,
}

async fn create(State(svc): State<Shared>, body: Bytes) -> Result<Response, ReviewError> {
    let req: CreateBody = parse(&body)?;
    let id = svc.create_session(&req.manifest, &req.scores, req.tau.unwrap_or(DEFAULT_TAU))?;
    let pending = svc.with_session(&id, |s| Ok(s.pending_count()))?;
    Ok(Json(json!({ "session_id": id, "pending": pending })).into_response())
}

async fn next(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ReviewError> {
    svc.with_session(&id, |s| {
        Ok(match s.next_pending() {
            Some(b) => Json(json!(b)).into_response(),
            None => Json(json!({ "done": true })).into_response(),
        })
    })
}

#[derive(Deserialize)]
struct SamplesQuery {
    status: Option<SampleStatus>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn samples(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SamplesQuery>,
) -> Result<Response, ReviewError> {
    let offset = q.offset.unwrap_or(0);
    svc.with_session(&id, |s| {
        let (items, total) = s.samples(q.status, offset, q.limit.unwrap_or(50));
        Ok(Json(json!({ "total": total, "offset": offset, "items": items })).into_response())
    })
}

#[derive(Deserialize)]
struct ImageQuery {
    session: Option<String>,
}

async fn image(
    State(svc): State<Shared>,
    UrlPath(sample_id): UrlPath<String>,
    Query(q): Query<ImageQuery>,
) -> Result<Response, ReviewError> {
    let path = {
        let sessions = svc.sessions.lock().expect("session lock");
        let found = sessions
            .values()
            .filter(|s| q.session.as_deref().is_none_or(|id| id == s.id()))
            .find_map(|s| s.manifest().get(&sample_id).map(|e| s.manifest().image_path(e)));
        found.ok_or_else(|| ReviewError::NotFound {
            kind: "image",
            id: sample_id.clone(),
        })?
    };
    let bytes = std::fs::read(&path).map_err(|e| ReviewError::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn verdict(State(svc): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ReviewError> {
    let req: VerdictRequest = parse(&body)?;
    let out = svc.with_session(&id, |s| s.submit(req))?;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ReviewError> {
    svc.with_session(&id, |s| {
        let r = s.report();
        Ok(match q.format.as_deref() {
            Some("text") => r.to_table().into_response(),
            _ => Json(r).into_response(),
        })
    })
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CleanBody {
    #[serde(default)]
    allow_partial: bool,
}

async fn cleaned(State(svc): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ReviewError> {
    let req: CleanBody = parse(&body)?;
    let (path, cleaned) = svc.with_session(&id, |s| s.write_cleaned_manifest(req.allow_partial))?;
    Ok(Json(json!({ "path": path, "summary": cleaned.summary })).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id/next", get(next))
        .route("/sessions/:id/samples", get(samples))
        .route("/sessions/:id/verdicts", post(verdict))
        .route("/sessions/:id/report", get(report))
        .route("/sessions/:id/cleaned-manifest", post(cleaned))
        .route("/images/:sample_id", get(image))
        .with_state(service)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, service: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
