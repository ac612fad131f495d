//! Discrete-event simulation of clients, relay and guards.
//!
//! [`simnet`] is the transport: links, topologies, churn traces. [`nodes`]
//! runs the protocol state machines on top of it.

pub mod nodes;
pub mod simnet;
