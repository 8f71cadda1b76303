//! Local JSON API consumed by the review app.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use proclens_core::evaluation::{check_step_refs, record_rating, EvalError, EvaluationRecord};
use proclens_core::llm_harness::{Harness, PROMPT_TOO_LONG};
use proclens_core::project::{GenerateError, Project};
use proclens_core::replay::reconstruct_at_with;
use proclens_core::report::build_report;
use proclens_core::segmentation::{gaps, SegmentationError};
use proclens_core::{SessionKey, TaskKind};

pub struct AppState {
    pub project: Project,
    pub harness: Harness,
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{key}/snapshots", get(snapshots))
        .route("/api/sessions/{key}/state", get(state_at))
        .route("/api/sessions/{key}/gaps", get(session_gaps))
        .route("/api/generate", post(generate))
        .route("/api/records", get(list_records))
        .route("/api/records/{id}/checks", get(record_checks))
        .route("/api/evaluations", post(post_evaluation).get(list_evaluations))
        .route("/api/report", get(report))
        .with_state(state)
}

pub async fn serve(state: Shared, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl From<GenerateError> for ApiError {
    fn from(e: GenerateError) -> Self {
        match &e {
            _ if e.is_not_found() => not_found(e.to_string()),
            GenerateError::Segmentation(
                SegmentationError::InvalidRange { .. } | SegmentationError::NonPositiveThreshold(_),
            ) => unprocessable(e.to_string()),
            _ => internal(e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(e.status(), e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    #[serde(flatten)]
    pub key: SessionKey,
    pub event_count: usize,
}

async fn list_sessions(State(st): State<Shared>) -> Json<Vec<SessionSummary>> {
    Json(
        st.project
            .sessions
            .iter()
            .map(|(id, s)| SessionSummary {
                id: id.clone(),
                key: s.key.clone(),
                event_count: s.len(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct SnapshotQuery {
    threshold_ms: Option<i64>,
    #[serde(default)]
    dedup: bool,
}

async fn snapshots(
    State(st): State<Shared>,
    Path(key): Path<String>,
    Query(q): Query<SnapshotQuery>,
) -> ApiResult<proclens_core::SnapshotSequence> {
    Ok(Json(st.project.snapshots(&key, q.threshold_ms, q.dedup)?))
}

#[derive(Debug, Deserialize)]
struct StateQuery {
    at: usize,
}

async fn state_at(
    State(st): State<Shared>,
    Path(key): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<proclens_core::CodeState> {
    let session = st
        .project
        .session(&key)
        .ok_or_else(|| not_found(format!("unknown session '{key}'")))?;
    if q.at == 0 || q.at > session.len() {
        return Err(unprocessable(format!("at must be within 1..={}", session.len())));
    }
    reconstruct_at_with(session, q.at, st.project.config.replay_mode)
        .map(Json)
        .map_err(internal)
}

#[derive(Debug, Deserialize)]
struct GapQuery {
    threshold_ms: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GapMarker {
    pub after_event_index: usize,
    pub gap_ms: i64,
    pub is_break: bool,
}

async fn session_gaps(
    State(st): State<Shared>,
    Path(key): Path<String>,
    Query(q): Query<GapQuery>,
) -> ApiResult<Vec<GapMarker>> {
    let session = st
        .project
        .session(&key)
        .ok_or_else(|| not_found(format!("unknown session '{key}'")))?;
    let threshold = q.threshold_ms.unwrap_or(st.project.config.threshold_ms);
    if threshold <= 0 {
        return Err(unprocessable("threshold_ms must be positive"));
    }
    Ok(Json(
        gaps(session)
            .into_iter()
            .map(|g| GapMarker {
                after_event_index: g.after_event_index,
                gap_ms: g.gap_ms,
                is_break: g.gap_ms >= threshold,
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub session: String,
    pub task: TaskKind,
    pub model: String,
    pub step_from: Option<usize>,
    pub step_to: Option<usize>,
    #[serde(default)]
    pub override_fit: bool,
}

async fn generate(State(st): State<Shared>, body: Result<Json<GenerateRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(req)) => req,
        Err(e) => return ApiError::from(e).into_response(),
    };
    let worker = tokio::task::spawn_blocking(move || {
        let range = match (req.step_from, req.step_to) {
            (None, None) => None,
            (from, to) => {
                let len = st.project.snapshots(&req.session, None, false)?.len();
                Some((from.unwrap_or(1), to.unwrap_or(len)))
            }
        };
        st.project
            .generate(&st.harness, &req.session, req.task, &req.model, range, req.override_fit)
    });
    match worker.await {
        Ok(Ok(record)) => {
            let status = if record.is_ok() {
                StatusCode::OK
            } else if record.error_detail.as_deref() == Some(PROMPT_TOO_LONG) {
                StatusCode::UNPROCESSABLE_ENTITY
            } else {
                StatusCode::SERVICE_UNAVAILABLE
            };
            (status, Json(record)).into_response()
        }
        Ok(Err(e)) => ApiError::from(e).into_response(),
        Err(e) => internal(e).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct RecordQuery {
    session: Option<String>,
}

async fn list_records(
    State(st): State<Shared>,
    Query(q): Query<RecordQuery>,
) -> ApiResult<Vec<proclens_core::GenerationRecord>> {
    if let Some(s) = &q.session {
        if st.project.session(s).is_none() {
            return Err(not_found(format!("unknown session '{s}'")));
        }
    }
    let records = st.project.records.list().map_err(internal)?;
    Ok(Json(
        records
            .into_iter()
            .filter(|r| q.session.as_ref().is_none_or(|s| &r.session.id() == s))
            .collect(),
    ))
}

async fn record_checks(
    State(st): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<proclens_core::evaluation::AutoCheckReport> {
    let record = st
        .project
        .records
        .load(&id)
        .map_err(internal)?
        .ok_or_else(|| not_found(format!("unknown record '{id}'")))?;
    if !record.is_ok() {
        return Err(unprocessable(format!("record '{id}' has no successful response")));
    }
    Ok(Json(check_step_refs(&record.response_text, record.step_count)))
}

async fn post_evaluation(
    State(st): State<Shared>,
    body: Result<Json<EvaluationRecord>, JsonRejection>,
) -> ApiResult<proclens_core::evaluation::StoredEvaluation> {
    let Json(rating) = body?;
    record_rating(&st.project.evaluations, &st.project.records, rating)
        .map(Json)
        .map_err(|e| match e {
            EvalError::UnknownRecord(_) => not_found(e.to_string()),
            e if e.is_validation() => unprocessable(e.to_string()),
            e => internal(e),
        })
}

#[derive(Debug, Deserialize)]
struct EvaluationQuery {
    record: String,
}

async fn list_evaluations(
    State(st): State<Shared>,
    Query(q): Query<EvaluationQuery>,
) -> ApiResult<Vec<proclens_core::evaluation::StoredEvaluation>> {
    if !st.project.records.contains(&q.record) {
        return Err(not_found(format!("unknown record '{}'", q.record)));
    }
    st.project.evaluations.for_record(&q.record).map(Json).map_err(internal)
}

async fn report(State(st): State<Shared>) -> ApiResult<proclens_core::report::Report> {
    let records = st.project.records.list().map_err(internal)?;
    let evaluations = st.project.evaluations.latest().map_err(internal)?;
    Ok(Json(build_report(&records, &evaluations, &st.project.codebook)))
}
