use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use super::topology::{LinkClass, NodeId, Topology, TopologyError};
use super::{Time, SECOND};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no link between node {0} and node {1}")]
    NoLink(NodeId, NodeId),
    #[error("topology has no relay")]
    NoRelay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ByteCounters {
    pub lan: u64,
    pub wan: u64,
}

impl ByteCounters {
    pub fn total(&self) -> u64 {
        self.lan + self.wan
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Direction {
    /// End of the last serialization on this direction.
    busy_until: Time,
    /// Latest arrival handed out; later sends never overtake it.
    last_arrival: Time,
}

/// Point-to-point links with serialization delay, propagation latency,
/// bounded jitter and in-order delivery per direction.
pub struct Network {
    topo: Topology,
    rng: ChaCha20Rng,
    dirs: BTreeMap<(NodeId, NodeId), Direction>,
    stats: BTreeMap<(NodeId, NodeId), LinkStats>,
    counters: ByteCounters,
    sent_bytes: u64,
    delivered_bytes: u64,
}

impl Network {
    pub fn new(topo: Topology, seed: u64) -> Result<Self, NetError> {
        topo.validate()?;
        Ok(Self {
            topo,
            rng: ChaCha20Rng::seed_from_u64(seed),
            dirs: BTreeMap::new(),
            stats: BTreeMap::new(),
            counters: ByteCounters::default(),
            sent_bytes: 0,
            delivered_bytes: 0,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Sends `bytes` from `from` to `to` at `now`; returns the arrival time.
    pub fn transmit(&mut self, now: Time, from: NodeId, to: NodeId, bytes: usize) -> Result<Time, NetError> {
        let li = self.topo.link_between(from, to).ok_or(NetError::NoLink(from, to))?;
        let link = &self.topo.links[li];
        let ser = (bytes as u128 * 8 * SECOND as u128).div_ceil(link.bandwidth_bps as u128) as Time;
        let jitter = if link.jitter > 0 {
            self.rng.gen_range(0..=link.jitter)
        } else {
            0
        };
        let (latency, class) = (link.latency, link.class);
        let d = self.dirs.entry((from, to)).or_default();
        let start = now.max(d.busy_until);
        d.busy_until = start + ser;
        let arrival = (start + ser + latency + jitter).max(d.last_arrival);
        d.last_arrival = arrival;
        let s = self.stats.entry((from, to)).or_default();
        s.messages += 1;
        s.bytes += bytes as u64;
        match class {
            LinkClass::Lan => self.counters.lan += bytes as u64,
            LinkClass::Wan => self.counters.wan += bytes as u64,
        }
        self.sent_bytes += bytes as u64;
        Ok(arrival)
    }

    /// Counts bytes on a link without timing them, for traffic whose delay
    /// is accounted for elsewhere.
    pub fn account(&mut self, from: NodeId, to: NodeId, bytes: usize) -> Result<(), NetError> {
        let li = self.topo.link_between(from, to).ok_or(NetError::NoLink(from, to))?;
        let s = self.stats.entry((from, to)).or_default();
        s.messages += 1;
        s.bytes += bytes as u64;
        match self.topo.links[li].class {
            LinkClass::Lan => self.counters.lan += bytes as u64,
            LinkClass::Wan => self.counters.wan += bytes as u64,
        }
        self.sent_bytes += bytes as u64;
        self.delivered_bytes += bytes as u64;
        Ok(())
    }

    /// One-way delay of an empty message, without queueing or jitter.
    pub fn latency(&self, a: NodeId, b: NodeId) -> Option<Time> {
        self.topo.link_between(a, b).map(|i| self.topo.links[i].latency)
    }

    /// Upper bound on the one-way delay of an empty message.
    pub fn latency_bound(&self, a: NodeId, b: NodeId) -> Option<Time> {
        self.topo
            .link_between(a, b)
            .map(|i| self.topo.links[i].latency + self.topo.links[i].jitter)
    }

    /// Records that a message handed out by [`Network::transmit`] was consumed.
    pub fn deliver(&mut self, bytes: usize) {
        self.delivered_bytes += bytes as u64;
    }

    pub fn counters(&self) -> ByteCounters {
        self.counters
    }

    pub fn in_flight_bytes(&self) -> u64 {
        self.sent_bytes - self.delivered_bytes
    }

    pub fn sent_bytes(&self) -> u64 {
        self.sent_bytes
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.delivered_bytes
    }

    pub fn link_stats(&self) -> &BTreeMap<(NodeId, NodeId), LinkStats> {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::super::{simulate_pings, Preset, MS};
    use super::*;

    #[test]
    fn ping_baseline_is_twice_latency() {
        let t = Topology::preset(Preset::LanDefault, 2, 1);
        let rtts = simulate_pings(&t, 10, 64, 1).unwrap();
        for r in rtts {
            // 64 B at 100 Mbps is 5.12 us each way, rounded up
            assert_eq!(r, 20 * MS + 2 * 6);
        }
        let t = Topology::preset(Preset::Vpn, 2, 1);
        assert!(simulate_pings(&t, 4, 64, 1).unwrap().iter().all(|r| *r >= 200 * MS));
    }

    #[test]
    fn fifo_under_jitter() {
        let t = Topology::preset(Preset::LanDefault, 1, 1).with_jitter(5 * MS);
        let mut net = Network::new(t, 9).unwrap();
        let mut last = 0;
        for i in 0..200 {
            let a = net.transmit(i * 10, 1, 0, 100).unwrap();
            assert!(a >= last);
            last = a;
        }
    }

    #[test]
    fn serialization_queues_back_to_back_sends() {
        let t = Topology::preset(Preset::LanDefault, 1, 1);
        let mut net = Network::new(t, 0).unwrap();
        // 10 Mbps guard link: 12500 B take 10 ms
        let g = 2;
        let a = net.transmit(0, g, 0, 12_500).unwrap();
        let b = net.transmit(0, g, 0, 12_500).unwrap();
        assert_eq!(a, 110 * MS);
        assert_eq!(b, 120 * MS);
        assert_eq!(net.counters(), ByteCounters { lan: 0, wan: 25_000 });
    }

    #[test]
    fn bytes_are_conserved() {
        let t = Topology::preset(Preset::Vpn, 3, 2);
        let mut net = Network::new(t, 0).unwrap();
        for i in 1..=5 {
            net.transmit(0, i, 0, 100 * i).unwrap();
        }
        assert_eq!(net.counters().total(), net.sent_bytes());
        assert_eq!(net.in_flight_bytes(), 1500);
        net.deliver(1500);
        assert_eq!(net.in_flight_bytes(), 0);
        assert!(matches!(net.transmit(0, 1, 2, 1), Err(NetError::NoLink(1, 2))));
    }
}
