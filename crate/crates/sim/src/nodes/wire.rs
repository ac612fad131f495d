use lldc_core::dcnet::Announce;
use lldc_core::roles::RoundKind;

use super::events::Event;
use crate::simnet::{EventQueue, Network, NodeId, Time};

pub(crate) const MSG_UPSTREAM: u8 = 1;
pub(crate) const MSG_GUARD_CIPHER: u8 = 2;
pub(crate) const MSG_DOWNSTREAM: u8 = 3;
pub(crate) const MSG_CREDIT: u8 = 4;

#[derive(Debug, Clone)]
pub(crate) enum Msg {
    /// New epoch keys are ready; carries the kinds of the first rounds.
    EpochStart {
        epoch: u32,
        initial: Vec<Option<RoundKind>>,
        size: usize,
    },
    /// An encoded [`lldc_core::wire::Frame`].
    Frame(Vec<u8>),
}

impl Msg {
    fn wire_len(&self) -> usize {
        match self {
            Msg::EpochStart { size, .. } => *size,
            Msg::Frame(b) => b.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AppEv {
    PingDue(usize),
    PingTimeout(u64),
    CbrTick(usize),
    Scripted(usize),
}

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    Deliver { to: NodeId, msg: Msg, bytes: usize },
    RoundTimeout { epoch: u32, round: u64 },
    Release { epoch: u32 },
    SetupDone { epoch: u32 },
    BlameDone { epoch: u32 },
    App(AppEv),
    Churn(usize),
}

/// Transport, clock, event queue and log shared by every node.
pub(crate) struct Wire {
    pub net: Network,
    pub queue: EventQueue<Ev>,
    pub now: Time,
    pub log: Vec<Event>,
}

impl Wire {
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Msg) {
        let bytes = msg.wire_len();
        let at = self
            .net
            .transmit(self.now, from, to, bytes)
            .expect("star topology links every node to the relay");
        self.queue.push(at, Ev::Deliver { to, msg, bytes });
    }

    pub fn at(&mut self, t: Time, ev: Ev) {
        self.queue.push(t.max(self.now), ev);
    }

    pub fn log(&mut self, e: Event) {
        self.log.push(e);
    }
}

pub(crate) fn announce_of(k: Option<RoundKind>) -> Announce {
    match k {
        None => Announce::Idle,
        Some(RoundKind::Slot(s)) => Announce::Slot(s as u32),
        Some(RoundKind::Reservation) => Announce::Reservation,
    }
}

pub(crate) fn kind_of(a: Announce) -> Option<RoundKind> {
    match a {
        Announce::Idle => None,
        Announce::Slot(s) => Some(RoundKind::Slot(s as usize)),
        Announce::Reservation => Some(RoundKind::Reservation),
    }
}
