//! Client for the session service. Wire types come from
//! `scoopcoach_service::wire`.

use futures::StreamExt;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;

use scoopcoach_core::learn::{CoachInput, EpisodeReport};
use scoopcoach_service::wire::{Envelope, ErrorBody, Event, Request, Response, Snapshot};

pub use scoopcoach_service::wire;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {} ({:?}): {}", .body.key.as_deref().unwrap_or("-"), .body.code, .body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("bad response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Error body returned by the service, if any.
    pub fn api(&self) -> Option<&ErrorBody> {
        match self {
            ClientError::Api { body, .. } => Some(body),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Acknowledgment of a coach input or feedback update.
#[derive(Debug, Clone, PartialEq)]
pub struct Ack {
    pub changed: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

/// A session on one server.
#[derive(Debug, Clone)]
pub struct Session {
    client: Client,
    pub id: String,
    pub config_hash: String,
    pub seed: u64,
}

fn decode<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
}

impl Client {
    /// `base` is the server root, for example `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1{path}", self.base)
    }

    async fn send(&self, method: Method, path: &str, body: Option<Request>) -> Result<reqwest::Response> {
        let mut req = self.http.request(method, self.url(path));
        if let Some(body) = body {
            req = req.json(&Envelope::new(body));
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        match decode::<Envelope<Response>>(&text)?.body {
            Response::Error(body) => Err(ClientError::Api { status, body }),
            other => Err(ClientError::Decode(format!("{status} with {other:?}"))),
        }
    }

    async fn call(&self, method: Method, path: &str, body: Option<Request>) -> Result<Response> {
        let text = self.send(method, path, body).await?.text().await?;
        Ok(decode::<Envelope<Response>>(&text)?.body)
    }

    pub async fn create_session(&self, config_toml: Option<String>, seed: Option<u64>) -> Result<Session> {
        match self
            .call(Method::POST, "/sessions", Some(Request::CreateSession { config_toml, seed }))
            .await?
        {
            Response::SessionCreated {
                session_id,
                config_hash,
                seed,
                ..
            } => Ok(Session {
                client: self.clone(),
                id: session_id,
                config_hash,
                seed,
            }),
            other => Err(ClientError::Decode(format!("expected SessionCreated, got {other:?}"))),
        }
    }

    /// Handle for an existing session id.
    pub async fn session(&self, id: &str) -> Result<Session> {
        let snap = self.state(id).await?;
        Ok(Session {
            client: self.clone(),
            id: snap.session_id,
            config_hash: snap.config_hash,
            seed: snap.seed,
        })
    }

    async fn state(&self, id: &str) -> Result<Snapshot> {
        match self.call(Method::GET, &format!("/sessions/{id}/state"), None).await? {
            Response::Snapshot(s) => Ok(s),
            other => Err(ClientError::Decode(format!("expected Snapshot, got {other:?}"))),
        }
    }

    pub async fn schema(&self) -> Result<String> {
        Ok(self.send(Method::GET, "/schema", None).await?.text().await?)
    }
}

impl Session {
    fn path(&self, tail: &str) -> String {
        format!("/sessions/{}{tail}", self.id)
    }

    async fn ack(&self, tail: &str, body: Request) -> Result<Ack> {
        match self.client.call(Method::POST, &self.path(tail), Some(body)).await? {
            Response::Ack { changed, warnings, .. } => Ok(Ack { changed, warnings }),
            other => Err(ClientError::Decode(format!("expected Ack, got {other:?}"))),
        }
    }

    pub async fn submit(&self, input: CoachInput) -> Result<Ack> {
        self.ack("/submit", Request::SubmitCoachInput { input }).await
    }

    pub async fn feedback(&self, input: CoachInput) -> Result<Ack> {
        self.ack("/feedback", Request::FeedbackUpdate { input }).await
    }

    pub async fn step(&self, idempotency_key: Option<String>) -> Result<EpisodeReport> {
        match self
            .client
            .call(Method::POST, &self.path("/step"), Some(Request::StepEpisode { idempotency_key }))
            .await?
        {
            Response::EpisodeReport { report, .. } => Ok(report),
            other => Err(ClientError::Decode(format!("expected EpisodeReport, got {other:?}"))),
        }
    }

    /// Runs episodes, calling `on_event` for each streamed line, and
    /// returns all events.
    pub async fn run(&self, episodes: Option<usize>, mut on_event: impl FnMut(&Event)) -> Result<Vec<Event>> {
        let resp = self
            .client
            .send(Method::POST, &self.path("/run"), Some(Request::RunToConvergence { episodes }))
            .await?;
        let mut stream = resp.bytes_stream();
        let mut buf = Vec::new();
        let mut out = Vec::new();
        while let Some(chunk) = stream.next().await {
            buf.extend_from_slice(&chunk?);
            while let Some(nl) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=nl).collect();
                let text = String::from_utf8_lossy(&line[..nl]);
                let event = decode::<Envelope<Event>>(&text)?.body;
                on_event(&event);
                out.push(event);
            }
        }
        if let Some(Event::Error(body)) = out.last() {
            return Err(ClientError::Api {
                status: StatusCode::OK,
                body: body.clone(),
            });
        }
        Ok(out)
    }

    pub async fn state(&self) -> Result<Snapshot> {
        self.client.state(&self.id).await
    }

    /// Recorded history as events.
    pub async fn events(&self) -> Result<Vec<Event>> {
        let text = self.client.send(Method::GET, &self.path("/events"), None).await?.text().await?;
        text.lines().map(|l| decode::<Envelope<Event>>(l).map(|e| e.body)).collect()
    }

    /// Episode log in the same form the headless CLI writes.
    pub async fn log(&self) -> Result<String> {
        Ok(self.client.send(Method::GET, &self.path("/log"), None).await?.text().await?)
    }

    pub async fn close(self) -> Result<()> {
        self.client.call(Method::DELETE, &self.path(""), None).await?;
        Ok(())
    }
}
