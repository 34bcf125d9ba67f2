//! Line-framed TCP server: one thread and one handler per connection.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::protocol::{codes, decode_request, encode, Frame, Request, Response, PROTOCOL_VERSION};
use crate::world::{Fixture, WorldError, WorldInstance};

/// Per-connection request handler.
pub trait Handler: Send {
    fn handle(&mut self, request: Request) -> Response;
}

pub type HandlerFactory = Arc<dyn Fn() -> Box<dyn Handler> + Send + Sync>;

/// A running server. Dropping it stops the listener and closes connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Closes every open connection but keeps accepting new ones.
    pub fn drop_connections(&self) {
        for c in self.conns.lock().expect("conn list").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }

    /// Stops accepting and closes all connections; later connects are refused.
    pub fn kill(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.drop_connections();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

pub fn serve(bind: &str, factory: HandlerFactory) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));
    let (stop2, conns2) = (stop.clone(), conns.clone());
    let accept = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            if let Ok(c) = stream.try_clone() {
                let mut list = conns2.lock().expect("conn list");
                list.retain(|s| s.peer_addr().is_ok());
                list.push(c);
            }
            let handler = factory();
            let stop3 = stop2.clone();
            std::thread::spawn(move || serve_connection(stream, handler, stop3));
        }
    });
    Ok(ServerHandle { addr, stop, conns, accept: Some(accept) })
}

fn serve_connection(stream: TcpStream, mut handler: Box<dyn Handler>, stop: Arc<AtomicBool>) {
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        if stop.load(Ordering::SeqCst) {
            return;
        }
        if line.trim().is_empty() {
            continue;
        }
        let reply = match decode_request(&line) {
            Ok(Frame { seq, session, body }) => Frame { seq, session, body: handler.handle(body) },
            Err(err) => err,
        };
        if writer.write_all(encode(&reply).as_bytes()).is_err() {
            return;
        }
    }
}

/// Hosts one world per connection.
pub struct EnvHandler {
    fixture: Arc<Fixture>,
    world: Option<WorldInstance>,
}

impl EnvHandler {
    pub fn new(fixture: Arc<Fixture>) -> Self {
        Self { fixture, world: None }
    }
}

fn world_error(e: WorldError) -> Response {
    let code = match e {
        WorldError::SessionDone => codes::SESSION_DONE,
        WorldError::MalformedAction(_) => codes::FORMAT,
        WorldError::MissingParam { .. } | WorldError::InvalidTask(_) => codes::BAD_TASK,
        WorldError::Config { .. } => codes::INTERNAL,
    };
    Response::error(code, e.to_string())
}

impl Handler for EnvHandler {
    fn handle(&mut self, request: Request) -> Response {
        match request {
            Request::Ping => Response::Pong,
            Request::Reset { protocol_version, task, seed, obstacle_prob } => {
                if protocol_version != PROTOCOL_VERSION {
                    return Response::error(
                        codes::BAD_VERSION,
                        format!("protocol {protocol_version}, server speaks {PROTOCOL_VERSION}"),
                    );
                }
                match WorldInstance::new(self.fixture.clone(), task, seed, obstacle_prob) {
                    Ok(w) => {
                        let state = w.state.clone();
                        self.world = Some(w);
                        Response::State { state }
                    }
                    Err(e) => world_error(e),
                }
            }
            Request::Score { .. } => Response::error(codes::UNSUPPORTED, "this endpoint hosts environments"),
            other => {
                let Some(world) = self.world.as_mut() else {
                    return Response::error(codes::NO_SESSION, format!("{} before Reset", other.type_name()));
                };
                match other {
                    Request::Step { action } => match world.step(&action) {
                        Ok(out) => Response::Stepped { state: out.state, terminated: out.terminated },
                        Err(e) => world_error(e),
                    },
                    Request::CheckSuccess => Response::Success { success: world.check_success() },
                    Request::EnumerateActions => Response::Actions { actions: world.enumerate_actions() },
                    _ => unreachable!("handled above"),
                }
            }
        }
    }
}

/// Serves environments for `fixture` on `bind`.
pub fn serve_env(bind: &str, fixture: Arc<Fixture>) -> io::Result<ServerHandle> {
    serve(bind, Arc::new(move || Box::new(EnvHandler::new(fixture.clone())) as Box<dyn Handler>))
}
