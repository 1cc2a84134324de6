//! HTTP/JSON front end for coaching sessions.
//!
//! | method | path | message |
//! |---|---|---|
//! | POST | `/v1/sessions` | `CreateSession` |
//! | POST | `/v1/sessions/{id}/submit` | `SubmitCoachInput` |
//! | POST | `/v1/sessions/{id}/step` | `StepEpisode` |
//! | POST | `/v1/sessions/{id}/run` | `RunToConvergence`, NDJSON events |
//! | GET, POST | `/v1/sessions/{id}/state` | `GetState` |
//! | POST | `/v1/sessions/{id}/feedback` | `FeedbackUpdate` |
//! | GET | `/v1/sessions/{id}/events` | NDJSON history, `?follow=true` to keep streaming |
//! | GET | `/v1/sessions/{id}/log` | episode log, same bytes as `scoopcoach coach` |
//! | DELETE | `/v1/sessions/{id}` | closes the session |
//! | GET | `/v1/schema` | `SCHEMA.md` |

pub mod session;
pub mod wire;

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use scoopcoach_core::pipeline::episode_log;
use scoopcoach_core::RunConfig;

use session::{Ack, SessionHandle};
use wire::{parse_request, Envelope, ErrorBody, ErrorCode, Event, Request, Response as Reply};

pub const SCHEMA_DOC: &str = include_str!("../SCHEMA.md");

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Configuration for sessions created without their own.
    pub base: RunConfig,
    /// Live sessions allowed at once; further creates are rejected.
    pub max_sessions: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            base: RunConfig::default(),
            max_sessions: 1,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                config,
                sessions: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.inner
            .sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(ErrorBody::new(ErrorCode::SessionNotFound, format!("no session '{id}'"))))
    }
}

pub struct ApiError(pub ErrorBody);

impl From<ErrorBody> for ApiError {
    fn from(e: ErrorBody) -> Self {
        ApiError(e)
    }
}

pub fn status_of(code: ErrorCode) -> StatusCode {
    use ErrorCode::*;
    match code {
        InvalidJson | MissingSchemaVersion | UnsupportedSchemaVersion | UnknownMessageType | WrongMessageType
        | InvalidMessage => StatusCode::BAD_REQUEST,
        InvalidConfig | InvalidCoachInput | EmptyActionSet => StatusCode::UNPROCESSABLE_ENTITY,
        NoCoachInput | SessionLimit | SessionBusy => StatusCode::CONFLICT,
        SessionNotFound => StatusCode::NOT_FOUND,
        Runtime => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(self.0.code), Json(Envelope::new(Reply::Error(self.0)))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn reply(status: StatusCode, body: Reply) -> Response {
    (status, Json(Envelope::new(body))).into_response()
}

fn expect(body: &Bytes, ty: &str) -> Result<Request, ApiError> {
    let req = parse_request(body)?;
    if req.type_name() != ty {
        return Err(ApiError(
            ErrorBody::new(
                ErrorCode::WrongMessageType,
                format!("this endpoint takes {ty}, got {}", req.type_name()),
            )
            .with_key("type"),
        ));
    }
    Ok(req)
}

fn ack_reply(id: String, ack: Ack) -> Response {
    reply(
        StatusCode::OK,
        Reply::Ack {
            session_id: id,
            phase: ack.phase,
            changed: ack.changed,
            warnings: ack.warnings,
        },
    )
}

fn ndjson(lines: impl Stream<Item = String> + Send + 'static) -> Response {
    let body = Body::from_stream(lines.map(|mut l| {
        l.push('\n');
        Ok::<_, Infallible>(l)
    }));
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

fn event_line(e: &Event) -> String {
    serde_json::to_string(&Envelope::new(e)).expect("event serializes")
}

async fn create(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let Request::CreateSession { config_toml, seed } = expect(&body, "CreateSession")? else {
        unreachable!()
    };
    let mut config = match config_toml {
        Some(text) => RunConfig::from_toml_str(&text).map_err(ErrorBody::from)?,
        None => state.inner.config.base.clone(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let mut sessions = state.inner.sessions.lock().expect("session map lock");
    if sessions.len() >= state.inner.config.max_sessions {
        return Err(ApiError(ErrorBody::new(
            ErrorCode::SessionLimit,
            format!("{} live session(s) allowed; close one first", state.inner.config.max_sessions),
        )));
    }
    let n = state.inner.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n:06}");
    let handle = SessionHandle::spawn(id.clone(), config)?;
    let snap = handle.snapshot();
    sessions.insert(id.clone(), handle);
    tracing::info!(session = %id, seed = snap.seed, "session created");
    Ok(reply(
        StatusCode::CREATED,
        Reply::SessionCreated {
            session_id: id,
            phase: snap.phase,
            config_hash: snap.config_hash.clone(),
            seed: snap.seed,
        },
    ))
}

async fn submit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Request::SubmitCoachInput { input } = expect(&body, "SubmitCoachInput")? else {
        unreachable!()
    };
    let ack = state.session(&id)?.submit(input).await?;
    Ok(ack_reply(id, ack))
}

async fn step(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Request::StepEpisode { idempotency_key } = expect(&body, "StepEpisode")? else {
        unreachable!()
    };
    let report = state.session(&id)?.step(idempotency_key).await?;
    Ok(reply(
        StatusCode::OK,
        Reply::EpisodeReport {
            session_id: id,
            report,
        },
    ))
}

async fn run(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Request::RunToConvergence { episodes } = expect(&body, "RunToConvergence")? else {
        unreachable!()
    };
    let rx = state.session(&id)?.run(episodes).await?;
    let lines = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (event_line(&e), rx)) });
    Ok(ndjson(lines))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let snap = state.session(&id)?.snapshot();
    Ok(reply(StatusCode::OK, Reply::Snapshot((*snap).clone())))
}

async fn post_state(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    expect(&body, "GetState")?;
    get_state(State(state), Path(id)).await
}

async fn feedback(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Request::FeedbackUpdate { input } = expect(&body, "FeedbackUpdate")? else {
        unreachable!()
    };
    let ack = state.session(&id)?.feedback(input).await?;
    Ok(ack_reply(id, ack))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    follow: bool,
}

/// History as events, in order, with feedback boundaries interleaved.
fn history_events(snap: &wire::Snapshot) -> Vec<Event> {
    let mut out = Vec::new();
    let mut bounds = snap.boundaries.iter().peekable();
    for r in &snap.episode_history {
        while let Some(b) = bounds.next_if(|b| b.episode <= r.episode) {
            out.push(Event::PhaseBoundary {
                episode: b.episode,
                input: b.input,
            });
        }
        out.push(Event::EpisodeReport { report: *r });
    }
    out.extend(bounds.map(|b| Event::PhaseBoundary {
        episode: b.episode,
        input: b.input,
    }));
    out
}

async fn events(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<EventsQuery>) -> ApiResult {
    let handle = state.session(&id)?;
    // Subscribe before reading history so nothing falls between the two.
    let live = handle.subscribe();
    let snap = handle.snapshot();
    let seen = snap.episode_history.len();
    let past = stream::iter(history_events(&snap).into_iter().map(|e| event_line(&e)));
    if !q.follow {
        return Ok(ndjson(past));
    }
    let live = stream::unfold((live, seen), |(mut rx, seen)| async move {
        loop {
            match rx.recv().await {
                Ok(Event::EpisodeReport { report }) if report.episode < seen => continue,
                Ok(e) => return Some((event_line(&e), (rx, seen))),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(ndjson(past.chain(live)))
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = state.session(&id)?;
    let text = episode_log(handle.config(), &handle.snapshot().episode_history);
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn close(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = state
        .inner
        .sessions
        .lock()
        .expect("session map lock")
        .remove(&id)
        .ok_or_else(|| ApiError(ErrorBody::new(ErrorCode::SessionNotFound, format!("no session '{id}'"))))?;
    let phase = handle.snapshot().phase;
    tracing::info!(session = %id, "session closed");
    Ok(ack_reply(
        id,
        Ack {
            phase,
            changed: true,
            warnings: Vec::new(),
        },
    ))
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], SCHEMA_DOC)
}

pub fn router(config: ServiceConfig) -> Router {
    Router::new()
        .route("/v1/schema", get(schema))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", axum::routing::delete(close))
        .route("/v1/sessions/{id}/submit", post(submit))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/run", post(run))
        .route("/v1/sessions/{id}/state", get(get_state).post(post_state))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/log", get(log))
        .with_state(AppState::new(config))
}

pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "serving");
    axum::serve(listener, router(config)).await
}
