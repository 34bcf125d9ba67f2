//! Client side of the wire protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::protocol::{encode, Endpoint, Frame, Request, Response, PROTOCOL_VERSION};
use crate::rollout::{Env, EnvError};
use crate::world::{Action, GuiState, StepOutcome, TaskSpec};

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(1);

pub const DEFAULT_IO_TIMEOUT: Duration = Duration::from_secs(30);

/// One connection with its own session token and sequence counter.
pub struct Connection {
    endpoint: Endpoint,
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    session: String,
    seq: u64,
}

impl Connection {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, EnvError> {
        let conn_err = |e: std::io::Error| EnvError::Connection(format!("{endpoint}: {e}"));
        let addr = (endpoint.host.as_str(), endpoint.port)
            .to_socket_addrs()
            .map_err(conn_err)?
            .next()
            .ok_or_else(|| EnvError::Connection(format!("{endpoint}: no address")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(conn_err)?;
        stream.set_read_timeout(Some(DEFAULT_IO_TIMEOUT)).map_err(conn_err)?;
        stream.set_nodelay(true).map_err(conn_err)?;
        let reader = BufReader::new(stream.try_clone().map_err(conn_err)?);
        let session = format!("s{}-{}", std::process::id(), SESSION_COUNTER.fetch_add(1, Ordering::Relaxed));
        Ok(Self { endpoint: endpoint.clone(), writer: stream, reader, session, seq: 0 })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Sends one request and waits for its response. Transport failures and
    /// echo mismatches are `Connection` errors; error records are `Remote`.
    pub fn call(&mut self, request: Request) -> Result<Response, EnvError> {
        self.seq += 1;
        let frame = Frame { seq: self.seq, session: self.session.clone(), body: request };
        let lost = |e: std::io::Error| EnvError::Connection(format!("{}: {e}", self.endpoint));
        self.writer.write_all(encode(&frame).as_bytes()).map_err(lost)?;
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(lost)?;
        if n == 0 {
            return Err(EnvError::Connection(format!("{}: connection closed", self.endpoint)));
        }
        let reply: Frame<Response> = serde_json::from_str(&line)
            .map_err(|e| EnvError::Connection(format!("{}: undecodable response: {e}", self.endpoint)))?;
        if reply.seq != self.seq || reply.session != self.session {
            return Err(EnvError::Connection(format!(
                "{}: response echoes seq {} session {:?}, expected {} {:?}",
                self.endpoint, reply.seq, reply.session, self.seq, self.session
            )));
        }
        match reply.body {
            Response::Error { code, message } => Err(EnvError::Remote { code, message }),
            other => Ok(other),
        }
    }

    pub fn ping(&mut self) -> Result<(), EnvError> {
        match self.call(Request::Ping)? {
            Response::Pong => Ok(()),
            other => Err(unexpected("Pong", &other)),
        }
    }
}

pub(crate) fn unexpected(wanted: &str, got: &Response) -> EnvError {
    EnvError::Connection(format!("expected {wanted}, got {got:?}"))
}

/// An `Env` backed by one remote connection, without failover.
pub struct RemoteEnv {
    pub conn: Connection,
}

impl RemoteEnv {
    pub fn connect(endpoint: &Endpoint) -> Result<Self, EnvError> {
        Ok(Self { conn: Connection::connect(endpoint, DEFAULT_IO_TIMEOUT)? })
    }
}

pub(crate) fn remote_reset(conn: &mut Connection, task: &TaskSpec, seed: u64, obstacle_prob: f64) -> Result<GuiState, EnvError> {
    let req = Request::Reset { protocol_version: PROTOCOL_VERSION, task: task.clone(), seed, obstacle_prob };
    match conn.call(req)? {
        Response::State { state } => Ok(state),
        other => Err(unexpected("State", &other)),
    }
}

pub(crate) fn remote_step(conn: &mut Connection, action: &Action) -> Result<StepOutcome, EnvError> {
    match conn.call(Request::Step { action: action.clone() })? {
        Response::Stepped { state, terminated } => Ok(StepOutcome { state, terminated }),
        other => Err(unexpected("Stepped", &other)),
    }
}

pub(crate) fn remote_success(conn: &mut Connection) -> Result<bool, EnvError> {
    match conn.call(Request::CheckSuccess)? {
        Response::Success { success } => Ok(success),
        other => Err(unexpected("Success", &other)),
    }
}

pub(crate) fn remote_actions(conn: &mut Connection) -> Result<Vec<Action>, EnvError> {
    match conn.call(Request::EnumerateActions)? {
        Response::Actions { actions } => Ok(actions),
        other => Err(unexpected("Actions", &other)),
    }
}

impl Env for RemoteEnv {
    fn reset(&mut self, task: &TaskSpec, seed: u64, obstacle_prob: f64) -> Result<GuiState, EnvError> {
        remote_reset(&mut self.conn, task, seed, obstacle_prob)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        remote_step(&mut self.conn, action)
    }

    fn check_success(&mut self) -> Result<bool, EnvError> {
        remote_success(&mut self.conn)
    }

    fn enumerate_actions(&mut self) -> Result<Vec<Action>, EnvError> {
        remote_actions(&mut self.conn)
    }
}
