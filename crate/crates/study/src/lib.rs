//! HTTP front end for the verification study.
//!
//! | Method | Path                       | Body / result                      |
//! |--------|----------------------------|------------------------------------|
//! | POST   | `/sessions`                | → session id, participant, order   |
//! | GET    | `/sessions/{id}`           | → session info (for resuming)      |
//! | GET    | `/sessions/{id}/next`      | → next trial or `finished`         |
//! | POST   | `/sessions/{id}/judgments` | `{example_id, judgment, elapsed_ms}` |
//! | GET    | `/results.csv`             | one row per judged trial           |
//! | GET    | `/analysis.csv`            | per-scenario time and accuracy     |

use std::net::SocketAddr;
use std::sync::Arc;

use attrib_core::study::{analysis_csv, analyze, results_csv, Judgment, StudyError, StudyStore};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Deserialize)]
pub struct JudgmentBody {
    pub example_id: String,
    pub judgment: Judgment,
    pub elapsed_ms: u64,
}

struct ApiError(StudyError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::Duplicate(_) => StatusCode::CONFLICT,
            StudyError::UnknownExample(_) | StudyError::NotServed(_) | StudyError::InvalidElapsed => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            StudyError::InvalidConfig(_) | StudyError::State(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        ApiError(e)
    }
}

type Shared = State<Arc<StudyStore>>;

async fn create_session(State(store): Shared) -> Result<impl IntoResponse, ApiError> {
    let info = store.create_session()?;
    tracing::info!(session = %info.session_id, participant = info.participant_index, "session created");
    Ok((StatusCode::CREATED, Json(info)))
}

async fn session_info(State(store): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.session_info(&id)?))
}

async fn next_trial(State(store): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.next_trial(&id)?))
}

async fn submit(
    State(store): Shared,
    Path(id): Path<String>,
    Json(body): Json<JudgmentBody>,
) -> Result<impl IntoResponse, ApiError> {
    let ack = store.submit_judgment(&id, &body.example_id, body.judgment, body.elapsed_ms)?;
    if ack.flagged {
        tracing::warn!(session = %id, example = %body.example_id, "client and server timings diverge");
    }
    Ok(Json(ack))
}

fn csv(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn results(State(store): Shared) -> Response {
    csv(results_csv(&store.records()))
}

async fn analysis(State(store): Shared) -> Response {
    let summaries = analyze(&store.records(), &store.config().scenarios);
    csv(analysis_csv(&summaries, |s| s.as_str().to_string()))
}

pub fn router(store: Arc<StudyStore>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/judgments", post(submit))
        .route("/results.csv", get(results))
        .route("/analysis.csv", get(analysis))
        .with_state(store)
}

/// Serves the study until the process is stopped.
pub async fn serve(store: Arc<StudyStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "study service listening");
    axum::serve(listener, router(store)).await
}
