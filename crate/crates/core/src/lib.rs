//! Process reward models for simulated GUI agents.

pub mod world;
pub mod neural;
pub mod rollout;
pub mod stats;
pub mod datagen;
pub mod prm;
pub mod policy;
pub mod ppo;
pub mod offline;
pub mod grpo;
pub mod verify;
pub mod netenv;
pub mod harness;
