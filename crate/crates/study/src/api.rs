use crate::store::{Next, Submit};
use crate::{tally, Study};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use tower_http::services::ServeDir;

type Shared = Arc<Study>;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub study_dir: PathBuf,
    pub key_file: Option<PathBuf>,
    /// Defaults to `<study_dir>/log`.
    pub log_dir: Option<PathBuf>,
    /// Built UI bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e)
}

async fn blocking<T: Send + 'static>(
    study: Shared,
    f: impl FnOnce(&Study) -> T + Send + 'static,
) -> Result<T, Response> {
    tokio::task::spawn_blocking(move || f(&study)).await.map_err(internal)
}

fn parse_object(body: &[u8]) -> Result<serde_json::Map<String, Value>, Response> {
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(error(StatusCode::BAD_REQUEST, "body must be a JSON object")),
        Err(e) => Err(error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}"))),
    }
}

fn string_field<'a>(m: &'a serde_json::Map<String, Value>, name: &str) -> Result<&'a str, Response> {
    m.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| error(StatusCode::BAD_REQUEST, format!("`{name}` must be a string")))
}

fn score_field(m: &serde_json::Map<String, Value>, name: &str) -> Result<i64, Response> {
    m.get(name)
        .and_then(Value::as_i64)
        .ok_or_else(|| error(StatusCode::BAD_REQUEST, format!("`{name}` must be an integer in 1..=5")))
}

async fn create_session(State(study): State<Shared>, body: Bytes) -> Response {
    let parsed = parse_object(&body).and_then(|m| {
        Ok((string_field(&m, "rater")?.to_string(), string_field(&m, "study_id")?.to_string()))
    });
    let (rater, study_id) = match parsed {
        Ok(v) => v,
        Err(r) => return r,
    };
    if study_id != study.descriptor().study_id {
        return error(StatusCode::NOT_FOUND, format!("unknown study {study_id}"));
    }
    match blocking(study, move |s| s.create_session(&rater)).await {
        Ok(Ok((session_id, n_pairs))) => {
            (StatusCode::CREATED, Json(json!({ "session_id": session_id, "n_pairs": n_pairs }))).into_response()
        }
        Ok(Err(e)) => internal(e),
        Err(r) => r,
    }
}

async fn next_pair(State(study): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(study, move |s| s.next(&id)).await {
        Ok(Ok(Next::Pair { pair_id, left_url, right_url, index, total, served_at })) => Json(json!({
            "pair_id": pair_id,
            "left_url": left_url,
            "right_url": right_url,
            "index": index,
            "total": total,
            "served_at": served_at,
        }))
        .into_response(),
        Ok(Ok(Next::Done)) => StatusCode::NO_CONTENT.into_response(),
        Ok(Ok(Next::UnknownSession)) => error(StatusCode::NOT_FOUND, "unknown session"),
        Ok(Err(e)) => internal(e),
        Err(r) => r,
    }
}

async fn respond(State(study): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    let parsed = parse_object(&body).and_then(|m| {
        Ok((string_field(&m, "pair_id")?.to_string(), score_field(&m, "sharpness")?, score_field(&m, "noise")?))
    });
    let (pair_id, sharpness, noise) = match parsed {
        Ok(v) => v,
        Err(r) => return r,
    };
    match blocking(study, move |s| s.submit(&id, &pair_id, sharpness, noise)).await {
        Ok(Ok(Submit::Accepted { next_index })) => {
            Json(json!({ "accepted": true, "next_index": next_index })).into_response()
        }
        Ok(Ok(Submit::UnknownSession)) => error(StatusCode::NOT_FOUND, "unknown session"),
        Ok(Ok(Submit::Invalid(m))) => error(StatusCode::BAD_REQUEST, m),
        Ok(Ok(Submit::Conflict(m))) => error(StatusCode::CONFLICT, m),
        Ok(Err(e)) => internal(e),
        Err(r) => r,
    }
}

async fn descriptor(State(study): State<Shared>, Path(id): Path<String>) -> Response {
    if id != study.descriptor().study_id {
        return error(StatusCode::NOT_FOUND, format!("unknown study {id}"));
    }
    Json(study.descriptor().clone()).into_response()
}

async fn summary(State(study): State<Shared>, Path(id): Path<String>) -> Response {
    if id != study.descriptor().study_id {
        return error(StatusCode::NOT_FOUND, format!("unknown study {id}"));
    }
    let Some(key) = study.key() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no key file loaded");
    };
    Json(tally(key, &study.records())).into_response()
}

/// Builds the application: the JSON API, pair images under `/pairs`, and
/// optionally a UI bundle at `/`.
pub fn router(study: Arc<Study>, study_dir: &std::path::Path, ui_dir: Option<&std::path::Path>) -> Router {
    let app = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_pair))
        .route("/api/sessions/{id}/responses", post(respond))
        .route("/api/studies/{id}", get(descriptor))
        .route("/api/studies/{id}/summary", get(summary))
        .nest_service("/pairs", ServeDir::new(study_dir.join("pairs")))
        .with_state(study);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}

/// Loads the study, replays its logs, and serves until the process ends.
/// Prints `listening on http://<addr>` once the socket is bound.
pub async fn serve(opts: ServeOptions) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let log_dir = opts.log_dir.clone().unwrap_or_else(|| opts.study_dir.join("log"));
    let study = Arc::new(Study::open(&opts.study_dir, opts.key_file.as_deref(), &log_dir)?);
    let app = router(study, &opts.study_dir, opts.ui_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, app).await?;
    Ok(())
}
