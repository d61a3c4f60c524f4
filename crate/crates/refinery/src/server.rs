//! HTTP API over the evaluation arena.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use refinery_core::arena::{Arena, ArenaError, Choice};
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub rater: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreferenceBody {
    pub pair_id: String,
    pub choice: Choice,
    pub rater_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstructionsBody {
    pub instructions: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

fn arena_error(e: ArenaError) -> Response {
    let status = match e {
        ArenaError::NotFound(_) => StatusCode::NOT_FOUND,
        ArenaError::Conflict(_) => StatusCode::CONFLICT,
        ArenaError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    error(status, e.to_string())
}

async fn next_pair(State(arena): State<Arc<Arena>>, Query(q): Query<NextQuery>) -> Response {
    let Some(rater) = q.rater.filter(|r| !r.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing rater");
    };
    match arena.next_pair(&rater) {
        Some(pair) => Json(pair).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit(State(arena): State<Arc<Arena>>, Json(body): Json<PreferenceBody>) -> Response {
    if body.rater_id.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "missing rater_id");
    }
    match arena.submit_preference(&body.pair_id, body.choice, &body.rater_id) {
        Ok(_) => Json(arena.leaderboard()).into_response(),
        Err(e) => arena_error(e),
    }
}

async fn leaderboard(State(arena): State<Arc<Arena>>) -> Response {
    Json(arena.leaderboard()).into_response()
}

async fn render(State(arena): State<Arc<Arena>>, Path(key): Path<String>) -> Response {
    match arena.render(&key) {
        Some(artifact) => ([(header::CONTENT_TYPE, "application/json")], artifact.to_bytes()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no render {key}")),
    }
}

async fn instructions(State(arena): State<Arc<Arena>>) -> Response {
    Json(InstructionsBody {
        instructions: arena.instructions().to_string(),
    })
    .into_response()
}

pub fn router(arena: Arc<Arena>) -> Router {
    Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/preferences", post(submit))
        .route("/api/leaderboard", get(leaderboard))
        .route("/api/renders/{key}", get(render))
        .route("/api/instructions", get(instructions))
        .with_state(arena)
}
