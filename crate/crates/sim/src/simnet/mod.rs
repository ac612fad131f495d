//! Deterministic network simulator.
//!
//! Time is an integer number of microseconds. Every source of randomness is
//! a seeded ChaCha stream, so a run is a pure function of its inputs.

mod churn;
mod network;
mod queue;
mod topology;

pub use churn::{
    anonymity_set_series, merge_windows, replay_churn, synthetic_cafe_trace, synthetic_membership_trace,
    AvailabilityReport, ChurnError, ChurnEvent, ChurnKind, ChurnTrace, SetSeries, Strategy,
};
pub use network::{ByteCounters, LinkStats, NetError, Network};
pub use queue::EventQueue;
pub use topology::{LinkClass, LinkSpec, NodeId, NodeSpec, Preset, Role, Topology, TopologyError};

/// Simulated time in microseconds.
pub type Time = u64;

pub const MS: Time = 1_000;
pub const SECOND: Time = 1_000_000;

pub fn ms(t: Time) -> f64 {
    t as f64 / MS as f64
}

/// Round trips of `count` direct pings of `size` bytes from each client to
/// the relay and back, one at a time, with no protocol in between.
pub fn simulate_pings(topology: &Topology, count: usize, size: usize, seed: u64) -> Result<Vec<Time>, NetError> {
    let mut net = Network::new(topology.clone(), seed)?;
    let relay = topology.relay().ok_or(NetError::NoRelay)?;
    let clients = topology.clients();
    let mut now = 0;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let c = clients[i % clients.len()];
        let there = net.transmit(now, c, relay, size)?;
        let back = net.transmit(there, relay, c, size)?;
        out.push(back - now);
        now = back;
    }
    Ok(out)
}
