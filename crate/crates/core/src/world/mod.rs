//! MiniGUI: a deterministic, seedable simulated phone with five app fixtures,
//! the agent action space, programmatic success checks and a BFS oracle.

mod action_text;
mod fixture;
mod oracle;
mod sim;
mod types;

pub use action_text::parse_action;
pub use fixture::{Fixture, FixtureConfig, DEFAULT_FIXTURE_TEXT, DEFAULT_FIXTURE_VERSION, DEFAULT_TASK_BANK};
pub use oracle::{min_steps_from, min_steps_to_success, successors, DistanceOracle, Reachability, DEFAULT_NODE_BUDGET};
pub use sim::{apply, enumerate_actions, is_dead_end, is_success, render, to_state, StepOutcome, WorldInstance};
pub use types::*;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("task template {template} is missing placeholder '{param}'")]
    MissingParam { template: &'static str, param: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("episode already finished; reset before stepping")]
    SessionDone,
    #[error("fixture config line {line}: {message}")]
    Config { line: usize, message: String },
}
