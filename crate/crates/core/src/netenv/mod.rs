//! Remote environments: a line-delimited JSON protocol, a per-connection
//! server, and a client pool with backup failover and parallel rollouts.

mod client;
mod pool;
mod protocol;
mod server;

pub use client::{Connection, RemoteEnv, DEFAULT_IO_TIMEOUT};
pub use pool::{parallel_rollouts, Health, PoolConfig, PooledSession, SessionPool, DEFAULT_ACTIVE, DEFAULT_BACKUPS};
pub use protocol::{codes, decode_request, encode, Endpoint, EndpointError, Frame, Request, Response, PROTOCOL_VERSION};
pub use server::{serve, serve_env, EnvHandler, Handler, HandlerFactory, ServerHandle};
