//! Core of a client/relay/guard anonymous-communication protocol built on
//! dining-cryptographers networks.
//!
//! Modules follow the protocol's layering:
//!
//! * [`crypto`]: group abstraction and primitives.
//! * [`setup`]: authentication, guard-chain shuffle, schedule, shared secrets.
//! * [`dcnet`]: per-round ciphertexts, relay combination, downstream assembly.
//! * [`equivocation`]: downstream history, key-blinding tags, key recovery.
//! * [`disruption`]: HMAC trap, bit-reveal blame, pair resolution.
//! * [`roles`]: client, guard and relay state for one epoch, with scripted faults.
//! * [`session`]: lock-step in-process driver.
//! * [`wire`]: framing shared by all node links.

pub mod crypto;
pub mod dcnet;
pub mod disruption;
pub mod equivocation;
mod ids;
pub mod roles;
pub mod session;
pub mod setup;
pub mod wire;

pub use ids::{ClientId, EntityId, GuardId};
