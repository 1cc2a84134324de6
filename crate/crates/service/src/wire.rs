//! Wire messages. Every payload is a JSON object carrying `schema_version`
//! and a `type` tag; see `SCHEMA.md` for the documented forms.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scoopcoach_core::learn::{CoachInput, EpisodeReport};
use scoopcoach_core::{Pose, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

/// `{"schema_version": 1, "type": ..., ...body}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(body: T) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Request {
    CreateSession {
        /// Complete run configuration as TOML; the server default when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_toml: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    SubmitCoachInput {
        #[serde(flatten)]
        input: CoachInput,
    },
    StepEpisode {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    RunToConvergence {
        /// Episodes to run; `rl.max_episodes` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episodes: Option<usize>,
    },
    GetState {},
    FeedbackUpdate {
        #[serde(flatten)]
        input: CoachInput,
    },
}

impl Request {
    pub const TYPES: [&'static str; 6] = [
        "CreateSession",
        "SubmitCoachInput",
        "StepEpisode",
        "RunToConvergence",
        "GetState",
        "FeedbackUpdate",
    ];

    pub fn type_name(&self) -> &'static str {
        match self {
            Request::CreateSession { .. } => "CreateSession",
            Request::SubmitCoachInput { .. } => "SubmitCoachInput",
            Request::StepEpisode { .. } => "StepEpisode",
            Request::RunToConvergence { .. } => "RunToConvergence",
            Request::GetState {} => "GetState",
            Request::FeedbackUpdate { .. } => "FeedbackUpdate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "idle")]
    Idle,
    #[serde(rename = "selfeval")]
    SelfEval,
    #[serde(rename = "coaching")]
    Coaching,
}

/// Static scene geometry for drawing the side view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surface_height: f64,
    pub goal_container_pose: Pose,
    pub goal_container_half_width: f64,
    pub pour_pose: Pose,
}

/// A feedback update that took effect before `episode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub episode: usize,
    pub input: CoachInput,
}

/// Immutable view of a session published after every change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub phase: Phase,
    pub config_hash: String,
    pub seed: u64,
    pub coach_input: Option<CoachInput>,
    pub episode_history: Vec<EpisodeReport>,
    /// Feedback updates, in order.
    pub boundaries: Vec<Boundary>,
    pub greedy_action: Option<f64>,
    pub current_trajectory: Option<Trajectory>,
    pub warnings: Vec<String>,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Response {
    SessionCreated {
        session_id: String,
        phase: Phase,
        config_hash: String,
        seed: u64,
    },
    Ack {
        session_id: String,
        phase: Phase,
        /// False when the request left the session unchanged.
        changed: bool,
        warnings: Vec<String>,
    },
    EpisodeReport {
        session_id: String,
        report: EpisodeReport,
    },
    Snapshot(Snapshot),
    Error(ErrorBody),
}

/// One line of an NDJSON event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    EpisodeReport { report: EpisodeReport },
    PhaseBoundary { episode: usize, input: CoachInput },
    RunComplete { episodes: usize, greedy_action: f64 },
    Error(ErrorBody),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidJson,
    MissingSchemaVersion,
    UnsupportedSchemaVersion,
    UnknownMessageType,
    WrongMessageType,
    InvalidMessage,
    InvalidConfig,
    InvalidCoachInput,
    EmptyActionSet,
    NoCoachInput,
    SessionNotFound,
    SessionLimit,
    SessionBusy,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    /// Offending config key or field, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorBody {
            code,
            message: message.into(),
            key: None,
        }
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.key = Some(key.into());
        self
    }
}

impl From<scoopcoach_core::Error> for ErrorBody {
    fn from(e: scoopcoach_core::Error) -> Self {
        use scoopcoach_core::Error as E;
        let message = e.to_string();
        match e {
            E::Config { key, .. } => ErrorBody::new(ErrorCode::InvalidConfig, message).with_key(key),
            E::InvalidCoachInput(_) => ErrorBody::new(ErrorCode::InvalidCoachInput, message),
            E::EmptyActionSet => ErrorBody::new(ErrorCode::EmptyActionSet, message),
            _ => ErrorBody::new(ErrorCode::Runtime, message),
        }
    }
}

/// Parses a request envelope. Unknown fields are ignored; a missing or
/// different schema version and unknown `type` tags are rejected.
pub fn parse_request(body: &[u8]) -> Result<Request, ErrorBody> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ErrorBody::new(ErrorCode::InvalidJson, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ErrorBody::new(ErrorCode::InvalidJson, "message must be a JSON object"))?;
    match obj.get("schema_version") {
        None => {
            return Err(ErrorBody::new(ErrorCode::MissingSchemaVersion, "schema_version is required")
                .with_key("schema_version"))
        }
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => {
            return Err(ErrorBody::new(
                ErrorCode::UnsupportedSchemaVersion,
                format!("schema_version {v} is not supported; expected {SCHEMA_VERSION}"),
            )
            .with_key("schema_version"))
        }
    }
    let ty = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ErrorBody::new(ErrorCode::InvalidMessage, "type is required").with_key("type"))?;
    if !Request::TYPES.contains(&ty) {
        return Err(
            ErrorBody::new(ErrorCode::UnknownMessageType, format!("unknown message type '{ty}'")).with_key("type"),
        );
    }
    serde_json::from_value(value).map_err(|e| ErrorBody::new(ErrorCode::InvalidMessage, e.to_string()))
}
