//! Experiment runner and acceptance checks for the DC-net simulator.

pub mod adversary;
pub mod criteria;
pub mod experiment;
pub mod output;
pub mod studies;

pub use adversary::{AdversarySpec, SpecError};
pub use experiment::{Experiment, HarnessError, Load, RunResult, SweepRow};
