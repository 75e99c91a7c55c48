//! HTTP protocol between the labeling console and a human-mode training run.
//!
//! | method | path                     | result                                   |
//! |--------|--------------------------|------------------------------------------|
//! | GET    | `/api/session`           | session status and progress              |
//! | GET    | `/api/query/next`        | oldest pending query, or 204             |
//! | POST   | `/api/query/{id}/label`  | `{t, action}`; 422 invalid, 409 repeated |
//! | POST   | `/api/query/{id}/pass`   | no correction for the segment            |
//!
//! Unknown segment ids answer 404. Error bodies are `{"error": reason}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use icopro::labelers::{LabelBridge, Outcome, SubmitError};
use serde::Deserialize;
use serde_json::json;

/// An action given by index or by name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ActionRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBody {
    pub t: usize,
    pub action: ActionRef,
}

pub fn router(bridge: Arc<LabelBridge>) -> Router {
    Router::new()
        .route("/api/session", get(session))
        .route("/api/query/next", get(next_query))
        .route("/api/query/{id}/label", post(label))
        .route("/api/query/{id}/pass", post(pass))
        .with_state(bridge)
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

async fn session(State(bridge): State<Arc<LabelBridge>>) -> Response {
    Json(bridge.info()).into_response()
}

async fn next_query(State(bridge): State<Arc<LabelBridge>>) -> Response {
    match bridge.next_query() {
        Some(q) => Json(q).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

fn parse_id(raw: &str) -> Result<u64, Response> {
    raw.parse().map_err(|_| error(StatusCode::NOT_FOUND, format!("unknown segment {raw}")))
}

fn submit(bridge: &LabelBridge, id: u64, outcome: Outcome) -> Response {
    match bridge.submit(id, outcome) {
        Ok(()) => Json(json!({ "segment_id": id, "outcome": outcome })).into_response(),
        Err(e) => submit_error(e),
    }
}

fn submit_error(e: SubmitError) -> Response {
    let status = match e {
        SubmitError::UnknownSegment(_) => StatusCode::NOT_FOUND,
        SubmitError::AlreadyResolved(_) => StatusCode::CONFLICT,
        SubmitError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
    };
    error(status, e.to_string())
}

async fn label(State(bridge): State<Arc<LabelBridge>>, Path(raw): Path<String>, body: Bytes) -> Response {
    let id = match parse_id(&raw) {
        Ok(id) => id,
        Err(r) => return r,
    };
    let body: LabelBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("bad label body: {e}")),
    };
    let action = match body.action {
        ActionRef::Index(a) => a,
        ActionRef::Name(name) => {
            let query = match bridge.pending_query(id) {
                Ok(q) => q,
                Err(e) => return submit_error(e),
            };
            match query.action_names.iter().position(|n| *n == name) {
                Some(a) => a,
                None => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown action `{name}`")),
            }
        }
    };
    submit(&bridge, id, Outcome::Label { t: body.t, action })
}

async fn pass(State(bridge): State<Arc<LabelBridge>>, Path(raw): Path<String>) -> Response {
    match parse_id(&raw) {
        Ok(id) => submit(&bridge, id, Outcome::Pass),
        Err(r) => r,
    }
}
