//! Wire records. One JSON object per line; every request carries `type`,
//! `seq` and `session`, and every response echoes `seq` and `session`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::prm::PrmScore;
use crate::world::{Action, GuiState, TaskSpec};

pub const PROTOCOL_VERSION: u32 = 1;

pub mod codes {
    pub const NO_SESSION: &str = "NO_SESSION";
    pub const BAD_STATE: &str = "BAD_STATE";
    pub const BAD_FRAME: &str = "BAD_FRAME";
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const BAD_VERSION: &str = "BAD_VERSION";
    pub const BAD_TASK: &str = "BAD_TASK";
    pub const FORMAT: &str = "FORMAT";
    pub const SESSION_DONE: &str = "SESSION_DONE";
    pub const UNSUPPORTED: &str = "UNSUPPORTED";
    pub const INTERNAL: &str = "INTERNAL";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Request {
    Reset { protocol_version: u32, task: TaskSpec, seed: u64, obstacle_prob: f64 },
    Step { action: Action },
    CheckSuccess,
    EnumerateActions,
    Ping,
    Score { task: TaskSpec, state: GuiState, action: Action },
}

impl Request {
    pub fn type_name(&self) -> &'static str {
        match self {
            Request::Reset { .. } => "Reset",
            Request::Step { .. } => "Step",
            Request::CheckSuccess => "CheckSuccess",
            Request::EnumerateActions => "EnumerateActions",
            Request::Ping => "Ping",
            Request::Score { .. } => "Score",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Response {
    State { state: GuiState },
    Stepped { state: GuiState, terminated: bool },
    Success { success: bool },
    Actions { actions: Vec<Action> },
    Pong,
    Scored { score: PrmScore },
    Error { code: String, message: String },
}

impl Response {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Response::Error { code: code.to_string(), message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame<T> {
    pub seq: u64,
    pub session: String,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid endpoint {0:?}: expected HOST:PORT with port in 1..=65535")]
pub struct EndpointError(pub String);

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self, EndpointError> {
        let host = host.into();
        if port == 0 || host.is_empty() {
            return Err(EndpointError(format!("{host}:{port}")));
        }
        Ok(Self { host, port })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_start_matches("tcp://");
        let (host, port) = s.rsplit_once(':').ok_or_else(|| EndpointError(s.into()))?;
        let port: u16 = port.parse().map_err(|_| EndpointError(s.into()))?;
        Endpoint::new(host, port).map_err(|_| EndpointError(s.into()))
    }
}

/// Parses one request line. Failures become the error response to send back,
/// echoing whatever `seq`/`session` could be recovered.
pub fn decode_request(line: &str) -> Result<Frame<Request>, Frame<Response>> {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return Err(Frame { seq: 0, session: String::new(), body: Response::error(codes::BAD_FRAME, e.to_string()) })
        }
    };
    let seq = value.get("seq").and_then(|v| v.as_u64());
    let session = value.get("session").and_then(|v| v.as_str()).map(str::to_string);
    let fail = |code: &str, msg: String| Frame {
        seq: seq.unwrap_or(0),
        session: session.clone().unwrap_or_default(),
        body: Response::error(code, msg),
    };
    if seq.is_none() || session.is_none() {
        return Err(fail(codes::BAD_FRAME, "missing seq or session".into()));
    }
    match serde_json::from_value::<Frame<Request>>(value.clone()) {
        Ok(f) => Ok(f),
        Err(e) => {
            let ty = value.get("type").and_then(|v| v.as_str()).unwrap_or("");
            let bad_state = ty == "Score"
                && value.get("state").map_or(true, |s| serde_json::from_value::<GuiState>(s.clone()).is_err());
            Err(fail(if bad_state { codes::BAD_STATE } else { codes::BAD_REQUEST }, e.to_string()))
        }
    }
}

pub fn encode<T: Serialize>(frame: &Frame<T>) -> String {
    let mut s = serde_json::to_string(frame).expect("frame serializes");
    s.push('\n');
    s
}
