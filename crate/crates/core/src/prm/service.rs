//! PRM scoring over the environment wire framing (`Score` requests).

use std::io;
use std::sync::{Arc, Mutex};

use super::PrmModel;
use crate::netenv::{codes, serve, Connection, Endpoint, Handler, Request, Response, ServerHandle, DEFAULT_IO_TIMEOUT};
use crate::ppo::{RlError, StepScorer};
use crate::prm::PrmScore;
use crate::world::{Action, GuiState, TaskSpec};

pub struct PrmHandler {
    model: Arc<PrmModel>,
}

impl Handler for PrmHandler {
    fn handle(&mut self, request: Request) -> Response {
        match request {
            Request::Ping => Response::Pong,
            Request::Score { task, state, action } => {
                if let Err(e) = action.validate() {
                    return Response::error(codes::FORMAT, e.to_string());
                }
                let mut ids = std::collections::BTreeSet::new();
                if !state.widgets.iter().all(|w| ids.insert(w.id.as_str())) {
                    return Response::error(codes::BAD_STATE, "duplicate widget ids");
                }
                match self.model.score(&task, &state, &action) {
                    Ok(score) => Response::Scored { score },
                    Err(e) => Response::error(codes::INTERNAL, e.to_string()),
                }
            }
            other => Response::error(codes::UNSUPPORTED, format!("{} is not served by the scorer", other.type_name())),
        }
    }
}

pub fn serve_prm(bind: &str, model: Arc<PrmModel>) -> io::Result<ServerHandle> {
    serve(bind, Arc::new(move || Box::new(PrmHandler { model: model.clone() }) as Box<dyn Handler>))
}

/// Remote scorer. Keeps idle connections for reuse so concurrent callers do
/// not serialize on one socket.
pub struct PrmClient {
    endpoint: Endpoint,
    idle: Mutex<Vec<Connection>>,
}

impl PrmClient {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint, idle: Mutex::new(Vec::new()) }
    }

    pub fn score(&self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, RlError> {
        let conn = self.idle.lock().expect("idle list").pop();
        let mut conn = match conn {
            Some(c) => c,
            None => Connection::connect(&self.endpoint, DEFAULT_IO_TIMEOUT)?,
        };
        let reply = conn.call(Request::Score { task: task.clone(), state: state.clone(), action: action.clone() })?;
        self.idle.lock().expect("idle list").push(conn);
        match reply {
            Response::Scored { score } => Ok(score),
            other => Err(RlError::Scorer(format!("expected Scored, got {other:?}"))),
        }
    }
}

impl StepScorer for PrmClient {
    fn score_step(&self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, RlError> {
        self.score(task, state, action)
    }
}
