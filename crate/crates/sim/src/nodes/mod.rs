//! Relay, client and guard nodes driven over the simulated network.

mod client;
pub mod config;
mod engine;
pub mod events;
mod guard;
mod wire;

pub use config::{
    Adversary, ChurnPlan, ConfigError, GroupChoice, NodeConfig, ScriptedSend, SimConfig, StopAt, Target, Workload,
};
pub use engine::{simulate, SimError, SimOutput, Simulation};
pub use events::{Event, Outcome, Report, RoundLabel, Stats};
