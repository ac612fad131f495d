use std::collections::{BTreeMap, BTreeSet};

use lldc_core::crypto::{pke_overhead, Group, KeyPair};
use lldc_core::dcnet::{
    assemble_downstream, DownChunk, DownFlags, DownQueues, DownstreamMessage, Reassembler, RoundCiphertext,
};
use lldc_core::disruption::{BlameParty, PartySet, Verdict};
use lldc_core::roles::{Delivered, EpochRoles, FaultScript, ProtocolOptions, RelayRole, RoundKind};
use lldc_core::setup::{generate_identities, run_local_setup, Roster};
use lldc_core::wire::Frame;
use lldc_core::{ClientId, EntityId, GuardId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::client::ClientNode;
use super::config::{reservation_bit, Adversary, ConfigError, SimConfig, Target, Workload};
use super::events::{Event, Outcome, Report, RoundLabel};
use super::guard::GuardNode;
use super::wire::{announce_of, AppEv, Ev, Msg, Wire, MSG_CREDIT, MSG_GUARD_CIPHER, MSG_UPSTREAM};
use crate::simnet::{ChurnKind, EventQueue, NetError, Network, NodeId, Strategy, Time, MS, SECOND};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Result of one run: the event log and the report derived from it.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub report: Report,
}

impl SimOutput {
    /// One JSON object per line.
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }
}

struct SetupJob {
    epoch: u32,
    halting: bool,
    members: Vec<usize>,
    guards: Vec<usize>,
}

/// Keys and roles of a finished setup, waiting to be installed.
struct Bundle<G: Group> {
    epoch: u32,
    roles: EpochRoles<G>,
    pseudonyms: Vec<G::Element>,
    base: G::Element,
    start_size: usize,
}

struct RoundSlot<G: Group> {
    kind: Option<RoundKind>,
    opened: Time,
    not_before: Time,
    clients: Vec<Option<RoundCiphertext<G>>>,
}

struct RelayEpoch<G: Group> {
    epoch: u32,
    role: RelayRole<G>,
    /// Client index by secret-matrix row.
    members: Vec<usize>,
    /// Guard index by position.
    guards: Vec<usize>,
    pseudonyms: Vec<G::Element>,
    base: G::Element,
    rounds: BTreeMap<u64, RoundSlot<G>>,
    guard_ciphers: BTreeMap<u64, Vec<Option<RoundCiphertext<G>>>>,
    next_announce: u64,
    next_complete: u64,
    open_slots: BTreeSet<usize>,
    cursor: usize,
    since_reservation: u64,
    draining: bool,
}

struct PendingBlame {
    epoch: u32,
    verdict: Verdict,
}

struct Relay<G: Group> {
    node: NodeId,
    ep: Option<RelayEpoch<G>>,
    setup: Option<SetupJob>,
    ready: Option<Bundle<G>>,
    blame: Option<PendingBlame>,
    halted_since: Option<Time>,
    next_epoch: u32,
    down: DownQueues,
    exit: Reassembler,
    rng: ChaCha20Rng,
}

struct PingState {
    count: usize,
    size: usize,
    think: Time,
    timeout: Time,
    sent: usize,
    finished: usize,
    next_seq: u64,
    outstanding: BTreeMap<u64, (usize, Time)>,
}

const PING_MAGIC: &[u8; 4] = b"PING";

pub struct Simulation<G: Group> {
    cfg: SimConfig,
    opts: ProtocolOptions,
    wire: Wire,
    roster: Roster<G>,
    client_keys: Vec<(ClientId, KeyPair<G>)>,
    guard_keys: Vec<(GuardId, KeyPair<G>)>,
    relay_key: KeyPair<G>,
    relay: Relay<G>,
    clients: Vec<ClientNode<G>>,
    guards: Vec<GuardNode<G>>,
    present: BTreeSet<usize>,
    excluded: BTreeSet<EntityId>,
    devices: BTreeMap<String, usize>,
    setup_rng: ChaCha20Rng,
    app_rng: ChaCha20Rng,
    ping: Option<PingState>,
    rounds_done: u64,
    done: bool,
}

impl<G: Group> Simulation<G> {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let topo = cfg.topology.clone();
        let relay_node = topo.relay().ok_or(NetError::NoRelay)?;
        let client_nodes = topo.clients();
        let guard_nodes = topo.guards();
        let (n, m) = (client_nodes.len(), guard_nodes.len());
        let mut id_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let (roster, client_keys, guard_keys, relay_key) = generate_identities::<G, _>(n, m, &mut id_rng);
        let net = Network::new(topo, cfg.seed.wrapping_add(1))?;
        let clients = client_nodes
            .iter()
            .enumerate()
            .map(|(i, node)| ClientNode::new(i, *node, relay_node, id_rng.gen(), cfg.node.cell_len))
            .collect();
        let guards = guard_nodes
            .iter()
            .enumerate()
            .map(|(j, node)| GuardNode::new(j, *node, relay_node))
            .collect();
        let mut devices = BTreeMap::new();
        if let Some(plan) = &cfg.churn {
            for e in &plan.trace.events {
                let next = devices.len();
                devices.entry(e.device.clone()).or_insert(next);
            }
        }
        let present: BTreeSet<usize> = match (&cfg.initial_present, &cfg.churn) {
            (Some(p), _) => p.iter().copied().filter(|i| *i < n).collect(),
            (None, Some(_)) => BTreeSet::new(),
            (None, None) => (0..n).collect(),
        };
        let mut sim = Self {
            opts: cfg.node.protocol(),
            wire: Wire {
                net,
                queue: EventQueue::new(),
                now: 0,
                log: Vec::new(),
            },
            roster,
            client_keys,
            guard_keys,
            relay_key,
            relay: Relay {
                node: relay_node,
                ep: None,
                setup: None,
                ready: None,
                blame: None,
                halted_since: None,
                next_epoch: 0,
                down: DownQueues::new(),
                exit: Reassembler::new(),
                rng: ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
            },
            clients,
            guards,
            present,
            excluded: BTreeSet::new(),
            devices,
            setup_rng: ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(3)),
            app_rng: ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(4)),
            ping: None,
            rounds_done: 0,
            done: false,
            cfg,
        };
        for c in &mut sim.clients {
            c.connected = sim.present.contains(&c.idx);
        }
        if let Some(plan) = &sim.cfg.churn {
            for (i, e) in plan.trace.events.iter().enumerate() {
                sim.wire.at(e.time_ms * MS, Ev::Churn(i));
            }
        }
        sim.init_workload();
        if !sim.present.is_empty() {
            sim.start_setup(false, "initial");
        }
        Ok(sim)
    }

    pub fn run(mut self) -> SimOutput {
        while let Some((t, ev)) = self.wire.queue.pop() {
            if let Some(limit) = self.cfg.stop.time {
                if t > limit {
                    self.wire.now = limit;
                    break;
                }
            }
            self.wire.now = t;
            self.handle(ev);
            if self.done {
                break;
            }
        }
        let c = self.wire.net.counters();
        self.wire.log(Event::Finished {
            time: self.wire.now,
            rounds: self.rounds_done,
            lan_bytes: c.lan,
            wan_bytes: c.wan,
        });
        let report = Report::from_events(&self.wire.log);
        SimOutput {
            events: self.wire.log,
            report,
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { to, msg, bytes } => {
                self.wire.net.deliver(bytes);
                self.deliver(to, msg);
            }
            Ev::RoundTimeout { epoch, round } => self.on_timeout(epoch, round),
            Ev::Release { epoch } => {
                if self.relay.ep.as_ref().is_some_and(|e| e.epoch == epoch) {
                    self.try_complete();
                }
            }
            Ev::SetupDone { epoch } => self.on_setup_done(epoch),
            Ev::BlameDone { epoch } => self.on_blame_done(epoch),
            Ev::App(a) => self.on_app(a),
            Ev::Churn(i) => self.on_churn(i),
        }
    }

    fn deliver(&mut self, to: NodeId, msg: Msg) {
        if to == self.relay.node {
            if let Msg::Frame(bytes) = msg {
                self.relay_on_frame(&bytes);
            }
            return;
        }
        if let Some(ci) = self.clients.iter().position(|c| c.node == to) {
            if !self.clients[ci].connected {
                return;
            }
            match msg {
                Msg::EpochStart { epoch, initial, .. } => {
                    self.clients[ci].on_epoch_start(&mut self.wire, epoch, &initial)
                }
                Msg::Frame(bytes) => {
                    let got = self.clients[ci].on_downstream(&mut self.wire, &bytes);
                    for m in got {
                        self.on_app_message(ci, &m);
                    }
                }
            }
            return;
        }
        if let Some(gi) = self.guards.iter().position(|g| g.node == to) {
            match msg {
                Msg::EpochStart { epoch, .. } => {
                    let depth = self.cfg.node.depth();
                    self.guards[gi].on_epoch_start(&mut self.wire, epoch, depth)
                }
                Msg::Frame(bytes) => {
                    if let Ok(f) = Frame::decode(&bytes) {
                        if f.msg_type == MSG_CREDIT {
                            self.guards[gi].stream(&mut self.wire, f.epoch, f.round);
                        }
                    }
                }
            }
        }
    }

    // ---- relay ----

    fn relay_on_frame(&mut self, bytes: &[u8]) {
        let Ok(f) = Frame::decode(bytes) else { return };
        let Some(ep) = self.relay.ep.as_mut().filter(|e| e.epoch == f.epoch) else { return };
        let Ok(ct) = RoundCiphertext::<G>::decode(&f.body) else { return };
        if ct.round != f.round || f.round < ep.next_complete {
            return;
        }
        match (f.msg_type, ct.sender) {
            (MSG_UPSTREAM, EntityId::Client(c)) => {
                let Some(row) = ep.members.iter().position(|i| *i == c.0 as usize) else { return };
                if let Some(slot) = ep.rounds.get_mut(&f.round) {
                    slot.clients[row].get_or_insert(ct);
                }
            }
            (MSG_GUARD_CIPHER, EntityId::Guard(g)) => {
                let Some(pos) = ep.guards.iter().position(|j| *j == g.0 as usize) else { return };
                let m = ep.guards.len();
                ep.guard_ciphers.entry(f.round).or_insert_with(|| vec![None; m])[pos].get_or_insert(ct);
            }
            _ => return,
        }
        self.try_complete();
    }

    fn rtt_bound(&self, members: &[usize], guards: &[usize]) -> Time {
        let r = self.relay.node;
        let net = &self.wire.net;
        let c = members.iter().filter_map(|i| net.latency_bound(self.clients[*i].node, r));
        let g = guards.iter().filter_map(|j| net.latency_bound(self.guards[*j].node, r));
        2 * c.chain(g).max().unwrap_or(0) + 10 * MS
    }

    fn round_timeout(&self) -> Time {
        let ep = self.relay.ep.as_ref().expect("active epoch");
        self.cfg.node.timeout_factor * self.rtt_bound(&ep.members, &ep.guards)
    }

    /// Decides the kind of the next round and records it as opened now.
    fn announce_next(&mut self) -> Option<RoundKind> {
        let now = self.wire.now;
        let sleep = self.cfg.node.sleep;
        let period = self.cfg.node.load_period;
        let ep = self.relay.ep.as_mut().expect("active epoch");
        let r = ep.next_announce;
        ep.next_announce += 1;
        let mut not_before = now;
        let n = ep.members.len();
        let kind = if ep.draining {
            None
        } else if period > 0 && ep.since_reservation >= period {
            ep.since_reservation = 0;
            Some(RoundKind::Reservation)
        } else {
            let open: Vec<usize> = (0..n)
                .filter(|s| ep.open_slots.contains(s) || ep.role.has_pending(*s))
                .collect();
            if open.is_empty() {
                ep.since_reservation = 0;
                not_before = now + sleep;
                Some(RoundKind::Reservation)
            } else {
                // the counter runs over open slots only
                let s = open.iter().copied().find(|s| *s >= ep.cursor).unwrap_or(open[0]);
                ep.cursor = s + 1;
                ep.since_reservation += 1;
                Some(RoundKind::Slot(s))
            }
        };
        ep.rounds.insert(
            r,
            RoundSlot {
                kind,
                opened: now,
                not_before,
                clients: vec![None; n],
            },
        );
        let epoch = ep.epoch;
        if not_before > now {
            self.wire.at(not_before, Ev::Release { epoch });
        }
        let timeout = self.round_timeout();
        self.wire.at(not_before + timeout, Ev::RoundTimeout { epoch, round: r });
        kind
    }

    fn try_complete(&mut self) {
        loop {
            if self.done || self.relay.blame.is_some() {
                return;
            }
            let now = self.wire.now;
            let Some(ep) = self.relay.ep.as_mut() else { return };
            let r = ep.next_complete;
            if r >= ep.next_announce {
                if ep.draining {
                    if let Some(b) = self.relay.ready.take() {
                        self.start_epoch(b);
                    }
                }
                return;
            }
            let slot = ep.rounds.get(&r).expect("announced rounds are tracked");
            let Some(kind) = slot.kind else {
                ep.rounds.remove(&r);
                ep.next_complete += 1;
                continue;
            };
            if slot.not_before > now || slot.clients.iter().any(Option::is_none) {
                return;
            }
            let m = ep.guards.len();
            if ep.guard_ciphers.get(&r).is_none_or(|g| g.iter().any(Option::is_none)) || m == 0 {
                return;
            }
            let slot = ep.rounds.remove(&r).expect("present");
            let guards: Vec<_> = ep.guard_ciphers.remove(&r).expect("present").into_iter().flatten().collect();
            let clients: Vec<_> = slot.clients.into_iter().flatten().collect();
            ep.next_complete += 1;
            let Ok(result) = ep.role.open_round(r, kind, &clients, &guards) else {
                continue;
            };
            self.finish_round(r, kind, slot.opened, result);
        }
    }

    fn finish_round(&mut self, r: u64, kind: RoundKind, opened: Time, result: lldc_core::roles::RoundResult) {
        let now = self.wire.now;
        let mut payload = 0;
        let outcome = match &result.delivered {
            Delivered::Idle => Outcome::Idle,
            Delivered::Failed => Outcome::Failed,
            Delivered::Cell(c) => {
                payload = c.payload.len();
                if let RoundKind::Slot(s) = kind {
                    // the relay is also the exit: complete messages are echoed back
                    if let Ok(msgs) = self.relay.exit.push(c.conn_id, &c.payload) {
                        for msg in msgs {
                            self.relay.down.push(c.conn_id, s, &msg);
                        }
                    }
                }
                Outcome::Cell
            }
            Delivered::Reservation(bits) => {
                let ep = self.relay.ep.as_mut().expect("active");
                ep.open_slots = (0..ep.members.len()).filter(|s| reservation_bit(bits, *s)).collect();
                Outcome::Reservation
            }
        };
        let announced = self.announce_next();
        let w = self.cfg.node.window;
        let depth = self.cfg.node.depth();
        let cap = self.cfg.node.downstream_cap;
        let relay_node = self.relay.node;
        let ep = self.relay.ep.as_mut().expect("active");
        let mut z = DownstreamMessage::minimal(r);
        z.flags = DownFlags {
            retransmit: result.retransmit,
            setup_request: self.relay.setup.is_some(),
            load_request: announced == Some(RoundKind::Reservation),
        };
        z.announce_round = r + w;
        z.announce = announce_of(announced);
        let z = assemble_downstream::<G, _>(z, &mut self.relay.down, &ep.pseudonyms, &ep.base, cap, &mut self.relay.rng);
        let body = z.encode();
        ep.role.absorb_downstream(&body);
        let epoch = ep.epoch;
        let frame = Frame::new(super::wire::MSG_DOWNSTREAM, epoch, r, body).encode();
        let victims: BTreeSet<usize> = self
            .cfg
            .adversaries
            .iter()
            .filter_map(|a| match a {
                Adversary::EquivocateZ {
                    epoch: e,
                    round,
                    client,
                } if *e == epoch && *round == r => Some(*client),
                _ => None,
            })
            .collect();
        for i in ep.members.clone() {
            if !self.clients[i].connected {
                continue;
            }
            let bytes = if victims.contains(&i) {
                let mut other = z.clone();
                other.chunks.push(DownChunk {
                    conn_id: u32::MAX,
                    ciphertext: vec![0xee; 16],
                });
                Frame::new(super::wire::MSG_DOWNSTREAM, epoch, r, other.encode()).encode()
            } else {
                frame.clone()
            };
            self.wire.send(relay_node, self.clients[i].node, Msg::Frame(bytes));
        }
        for j in ep.guards.clone() {
            let credit = Frame::new(MSG_CREDIT, epoch, r + 1 + depth, Vec::new()).encode();
            self.wire.send(relay_node, self.guards[j].node, Msg::Frame(credit));
        }
        let (label, slot) = match kind {
            RoundKind::Slot(s) => (RoundLabel::Slot, Some(s)),
            RoundKind::Reservation => (RoundLabel::Reservation, None),
        };
        self.wire.log(Event::Round {
            time: now,
            epoch,
            round: r,
            kind: label,
            slot,
            opened,
            outcome,
            payload_bytes: payload,
            retransmit: result.retransmit,
            retransmission: result.is_retransmission,
        });
        self.rounds_done += 1;
        if self.cfg.stop.rounds.is_some_and(|lim| self.rounds_done >= lim) {
            self.done = true;
        }
        if let Some(job) = result.blame {
            self.run_blame(epoch, job);
        }
    }

    fn run_blame(&mut self, epoch: u32, job: lldc_core::roles::BlameJob) {
        let Some(ep) = self.relay.ep.as_mut().filter(|e| e.epoch == epoch) else { return };
        let members = ep.members.clone();
        let mut by_idx: BTreeMap<usize, &mut dyn BlameParty<G>> = BTreeMap::new();
        for c in self.clients.iter_mut() {
            if let Some(e) = c.ep.as_mut().filter(|e| e.epoch == epoch) {
                by_idx.insert(c.idx, &mut e.role);
            }
        }
        if members.iter().any(|i| !by_idx.contains_key(i)) {
            return;
        }
        let clients = members.iter().map(|i| by_idx.remove(i).expect("checked")).collect();
        let guard_idx = ep.guards.clone();
        let mut g_by: BTreeMap<usize, &mut dyn BlameParty<G>> = BTreeMap::new();
        for g in self.guards.iter_mut() {
            let idx = g.idx;
            if let Some(role) = g.role_mut(epoch) {
                g_by.insert(idx, role);
            }
        }
        if guard_idx.iter().any(|j| !g_by.contains_key(j)) {
            return;
        }
        let guards = guard_idx.iter().map(|j| g_by.remove(j).expect("checked")).collect();
        let mut parties = PartySet { clients, guards };
        let Some(transcript) = ep.role.blame(&job, &mut parties) else { return };
        let exchanges = transcript.exchanges();
        let duration = exchanges as Time * self.rtt_bound(&members, &guard_idx);
        self.halt("blame");
        self.wire.log(Event::Blame {
            time: self.wire.now,
            epoch,
            round: job.round,
            verdict: transcript.verdict,
            exchanges,
            duration,
            notes: transcript.events.clone(),
        });
        self.relay.blame = Some(PendingBlame {
            epoch,
            verdict: transcript.verdict,
        });
        self.wire.at(self.wire.now + duration, Ev::BlameDone { epoch });
    }

    fn on_blame_done(&mut self, epoch: u32) {
        let Some(b) = self.relay.blame.take_if(|b| b.epoch == epoch) else { return };
        match b.verdict {
            Verdict::Excluded(e) => {
                self.excluded.insert(e);
                if let EntityId::Client(c) = e {
                    self.clients[c.0 as usize].disconnect();
                }
                self.start_setup(true, "exclusion");
            }
            // a fresh setup also resynchronises diverged histories
            Verdict::Untraceable => self.start_setup(true, "resync"),
            Verdict::NoFault => {
                self.resume();
                let timeout = self.round_timeout();
                let ep = self.relay.ep.as_ref().expect("epoch survives blame");
                let pending: Vec<u64> = (ep.next_complete..ep.next_announce).collect();
                for r in pending {
                    self.wire.at(self.wire.now + timeout, Ev::RoundTimeout { epoch, round: r });
                }
                self.try_complete();
            }
        }
    }

    fn on_timeout(&mut self, epoch: u32, round: u64) {
        if self.relay.blame.is_some() {
            return;
        }
        let Some(ep) = self.relay.ep.as_ref().filter(|e| e.epoch == epoch) else { return };
        if round < ep.next_complete {
            return;
        }
        let Some(slot) = ep.rounds.get(&round) else { return };
        if slot.kind.is_none() {
            return;
        }
        let mut missing: Vec<EntityId> = slot
            .clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(row, _)| EntityId::Client(ClientId(ep.members[row] as u32)))
            .collect();
        let have = ep.guard_ciphers.get(&round);
        for (pos, j) in ep.guards.iter().enumerate() {
            if have.is_none_or(|g| g[pos].is_none()) {
                missing.push(EntityId::Guard(GuardId(*j as u32)));
            }
        }
        if missing.is_empty() {
            return;
        }
        self.wire.log(Event::Timeout {
            time: self.wire.now,
            epoch,
            round,
            missing: missing.clone(),
        });
        for e in missing {
            self.excluded.insert(e);
            if let EntityId::Client(c) = e {
                self.clients[c.0 as usize].disconnect();
            }
        }
        self.start_setup(true, "timeout");
    }

    fn halt(&mut self, reason: &str) {
        if self.relay.halted_since.is_none() {
            self.relay.halted_since = Some(self.wire.now);
            self.wire.log(Event::Halted {
                time: self.wire.now,
                reason: reason.to_string(),
            });
        }
    }

    fn resume(&mut self) {
        if self.relay.halted_since.take().is_some() {
            self.wire.log(Event::Resumed { time: self.wire.now });
        }
    }

    // ---- setup and epochs ----

    fn start_setup(&mut self, halting: bool, reason: &str) {
        let halting = halting || self.relay.setup.as_ref().is_some_and(|s| s.halting);
        if halting && (self.relay.ep.is_some() || self.relay.ready.is_some()) {
            self.relay.ep = None;
            self.relay.ready = None;
            self.relay.blame = None;
            self.halt(reason);
        }
        let members: Vec<usize> = self
            .present
            .iter()
            .copied()
            .filter(|i| !self.excluded.contains(&EntityId::Client(ClientId(*i as u32))))
            .collect();
        let guards: Vec<usize> = (0..self.guards.len())
            .filter(|j| !self.excluded.contains(&EntityId::Guard(GuardId(*j as u32))))
            .collect();
        if members.is_empty() || guards.is_empty() {
            self.relay.setup = None;
            if self.relay.ep.is_some() {
                self.relay.ep = None;
                self.relay.ready = None;
                self.relay.blame = None;
                self.halt("no participants");
            }
            return;
        }
        let epoch = self.relay.next_epoch;
        self.relay.next_epoch += 1;
        let d = self.setup_duration(&members, &guards);
        self.wire.log(Event::SetupStarted {
            time: self.wire.now,
            epoch,
            halting,
            reason: reason.to_string(),
            clients: members.len(),
            guards: guards.len(),
        });
        self.relay.setup = Some(SetupJob {
            epoch,
            halting,
            members,
            guards,
        });
        self.wire.at(self.wire.now + d, Ev::SetupDone { epoch });
    }

    /// Modelled wall time of a setup: authentication, the guard chain one
    /// guard after another, then the signature round. Bytes are charged to
    /// the links without occupying them.
    fn setup_duration(&mut self, members: &[usize], guards: &[usize]) -> Time {
        let r = self.relay.node;
        let n = members.len();
        let exp = self.cfg.node.exp_cost;
        let el = G::ELEMENT_LEN;
        let sig = 2 * G::SCALAR_LEN;
        let hdr = lldc_core::wire::HEADER_LEN;
        let topo = self.wire.net.topology().clone();
        let ser = |a: NodeId, bytes: usize| -> Time {
            let l = &topo.links[topo.link_between(a, r).expect("star")];
            (bytes as u128 * 8 * SECOND as u128).div_ceil(l.bandwidth_bps as u128) as Time
        };
        let lat = |a: NodeId| self.wire.net.latency_bound(a, r).unwrap_or(0);
        let auth = hdr + 2 * el + sig;
        let c_one = members
            .iter()
            .map(|i| lat(self.clients[*i].node) + ser(self.clients[*i].node, auth))
            .max()
            .unwrap_or(0);
        let mut d = 2 * c_one + exp * n as Time;
        let shuffle = hdr + (n + 1) * el;
        let transcript = hdr + guards.len() * 2 * shuffle;
        for j in guards {
            let g = self.guards[*j].node;
            d += 2 * (lat(g) + ser(g, shuffle)) + exp * (2 * n as Time + 1);
        }
        d += guards
            .iter()
            .map(|j| {
                let g = self.guards[*j].node;
                2 * lat(g) + ser(g, transcript)
            })
            .max()
            .unwrap_or(0)
            + exp * 2 * n as Time;
        d += exp * n as Time;
        for i in members {
            let c = self.clients[*i].node;
            let _ = self.wire.net.account(r, c, hdr + 8);
            let _ = self.wire.net.account(c, r, auth);
        }
        for j in guards {
            let g = self.guards[*j].node;
            let _ = self.wire.net.account(r, g, shuffle);
            let _ = self.wire.net.account(g, r, shuffle);
            let _ = self.wire.net.account(r, g, transcript);
            let _ = self.wire.net.account(g, r, hdr + sig);
        }
        d
    }

    fn on_setup_done(&mut self, epoch: u32) {
        let Some(job) = self.relay.setup.take_if(|s| s.epoch == epoch) else { return };
        let roster = self.epoch_roster();
        let ck: Vec<_> = self
            .client_keys
            .iter()
            .filter(|(id, _)| job.members.contains(&(id.0 as usize)))
            .cloned()
            .collect();
        let gk: Vec<_> = self
            .guard_keys
            .iter()
            .filter(|(id, _)| job.guards.contains(&(id.0 as usize)))
            .cloned()
            .collect();
        let local = match run_local_setup(&roster, &ck, &gk, epoch, None, &mut self.setup_rng) {
            Ok(l) => l,
            Err(e) => {
                self.wire.log(Event::SetupFailed {
                    time: self.wire.now,
                    epoch,
                    error: e.to_string(),
                });
                self.halt("setup failed");
                return;
            }
        };
        let n = local.n();
        let m = local.m();
        let start_size = lldc_core::wire::HEADER_LEN
            + (n + 1) * G::ELEMENT_LEN
            + m * 2 * G::SCALAR_LEN
            + n * (32 + pke_overhead::<G>());
        let roles = EpochRoles::build(&local, &roster, &ck, &gk, self.relay_key, self.opts, self.setup_rng.gen());
        let bundle = Bundle {
            epoch,
            roles,
            pseudonyms: local.outcome.schedule.slots.clone(),
            base: local.outcome.schedule.base,
            start_size,
        };
        match self.relay.ep.as_mut() {
            // background: finish the rounds already announced, then switch
            Some(ep) if !job.halting => {
                ep.draining = true;
                self.relay.ready = Some(bundle);
                self.try_complete();
            }
            _ => self.start_epoch(bundle),
        }
    }

    fn epoch_roster(&self) -> Roster<G> {
        let mut r = self.roster.clone();
        for e in &self.excluded {
            r = match e {
                EntityId::Client(c) => r.without_client(*c),
                EntityId::Guard(g) => r.without_guard(*g),
                EntityId::Relay => r,
            };
        }
        r
    }

    fn start_epoch(&mut self, b: Bundle<G>) {
        self.relay.ep = None;
        self.relay.blame = None;
        self.resume();
        let epoch = b.epoch;
        // secret-matrix rows and guard positions, as the relay sees them
        let members: Vec<usize> = b.roles.relay.ctx.client_ids.iter().map(|c| c.0 as usize).collect();
        let guards_idx: Vec<usize> = b.roles.relay.ctx.guard_ids.iter().map(|g| g.0 as usize).collect();
        for c in self.clients.iter_mut() {
            if c.leaving && !members.contains(&c.idx) {
                c.disconnect();
            }
        }
        let EpochRoles {
            clients,
            guards,
            relay,
        } = b.roles;
        for mut role in clients {
            let i = role.id.0 as usize;
            for a in &self.cfg.adversaries {
                if let Adversary::Party {
                    target: Target::Client(t),
                    epoch: e,
                    when,
                    fault,
                    cover,
                } = a
                {
                    if *t == i && *e == epoch {
                        role.add_fault(FaultScript {
                            when: *when,
                            fault: fault.clone(),
                            cover: *cover,
                        });
                    }
                }
            }
            self.clients[i].incoming = Some((epoch, role));
        }
        for mut role in guards {
            let j = role.id.0 as usize;
            for a in &self.cfg.adversaries {
                if let Adversary::Party {
                    target: Target::Guard(t),
                    epoch: e,
                    when,
                    fault,
                    cover,
                } = a
                {
                    if *t == j && *e == epoch {
                        role.add_fault(FaultScript {
                            when: *when,
                            fault: fault.clone(),
                            cover: *cover,
                        });
                    }
                }
            }
            self.guards[j].incoming = Some((epoch, role));
        }
        let n = members.len();
        self.relay.ep = Some(RelayEpoch {
            epoch,
            role: relay,
            members: members.clone(),
            guards: guards_idx.clone(),
            pseudonyms: b.pseudonyms,
            base: b.base,
            rounds: BTreeMap::new(),
            guard_ciphers: BTreeMap::new(),
            next_announce: 0,
            next_complete: 0,
            open_slots: (0..n).collect(),
            cursor: 0,
            since_reservation: 0,
            draining: false,
        });
        // pending echoes were addressed to the old pseudonyms
        self.relay.down.clear();
        let initial: Vec<Option<RoundKind>> = (0..self.cfg.node.window).map(|_| self.announce_next()).collect();
        self.wire.log(Event::EpochStarted {
            time: self.wire.now,
            epoch,
            clients: members.iter().map(|i| *i as u32).collect(),
            guards: guards_idx.iter().map(|j| *j as u32).collect(),
        });
        let relay_node = self.relay.node;
        for i in &members {
            if self.clients[*i].connected {
                let msg = Msg::EpochStart {
                    epoch,
                    initial: initial.clone(),
                    size: b.start_size,
                };
                self.wire.send(relay_node, self.clients[*i].node, msg);
            }
        }
        for j in &guards_idx {
            let msg = Msg::EpochStart {
                epoch,
                initial: Vec::new(),
                size: lldc_core::wire::HEADER_LEN + 8,
            };
            self.wire.send(relay_node, self.guards[*j].node, msg);
        }
    }

    // ---- churn ----

    fn on_churn(&mut self, i: usize) {
        let Some(plan) = self.cfg.churn.as_ref() else { return };
        let e = plan.trace.events[i].clone();
        let strategy = plan.strategy;
        let c = self.devices[&e.device];
        self.wire.log(Event::Churn {
            time: self.wire.now,
            device: e.device.clone(),
            client: c,
            kind: e.kind,
        });
        match e.kind {
            ChurnKind::Assoc => {
                self.present.insert(c);
                let node = &mut self.clients[c];
                if !node.connected {
                    node.connected = true;
                    node.ep = None;
                }
                node.leaving = false;
            }
            ChurnKind::Disassoc => {
                self.present.remove(&c);
                if strategy == Strategy::Graceful {
                    self.clients[c].leaving = true;
                } else {
                    self.clients[c].disconnect();
                }
            }
        }
        self.start_setup(strategy.halts_on(e.kind), "churn");
    }

    // ---- workload ----

    fn active_clients(&mut self, fraction: f64) -> Vec<usize> {
        let n = self.clients.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut all: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(all.as_mut_slice(), &mut self.app_rng);
        all.truncate(k);
        all.sort_unstable();
        all
    }

    fn init_workload(&mut self) {
        match self.cfg.workload.clone() {
            Workload::Idle => {}
            Workload::Ping {
                count,
                size,
                active_fraction,
                think,
                timeout,
            } => {
                self.ping = Some(PingState {
                    count,
                    size: size.max(PING_MAGIC.len() + 12),
                    think,
                    timeout,
                    sent: 0,
                    finished: 0,
                    next_seq: 0,
                    outstanding: BTreeMap::new(),
                });
                if count == 0 {
                    self.done = true;
                }
                for c in self.active_clients(active_fraction) {
                    let t = self.app_rng.gen_range(0..=think);
                    self.wire.at(t, Ev::App(AppEv::PingDue(c)));
                }
            }
            Workload::Cbr { active_fraction, .. } => {
                for c in self.active_clients(active_fraction) {
                    let t = self.app_rng.gen_range(0..=10 * MS);
                    self.wire.at(t, Ev::App(AppEv::CbrTick(c)));
                }
            }
        }
        for (i, s) in self.cfg.sends.iter().enumerate() {
            self.wire.at(s.at, Ev::App(AppEv::Scripted(i)));
        }
    }

    fn on_app(&mut self, a: AppEv) {
        let now = self.wire.now;
        match a {
            AppEv::PingDue(c) => {
                let Some(p) = self.ping.as_mut() else { return };
                if p.sent >= p.count {
                    return;
                }
                p.sent += 1;
                let seq = p.next_seq;
                p.next_seq += 1;
                let mut msg = PING_MAGIC.to_vec();
                msg.extend_from_slice(&seq.to_le_bytes());
                msg.extend_from_slice(&(c as u32).to_le_bytes());
                msg.resize(p.size, 0);
                p.outstanding.insert(seq, (c, now));
                let timeout = p.timeout;
                self.clients[c].enqueue(&msg);
                self.wire.log(Event::PingSent {
                    time: now,
                    client: c,
                    seq,
                });
                self.wire.at(now + timeout, Ev::App(AppEv::PingTimeout(seq)));
            }
            AppEv::PingTimeout(seq) => {
                let Some(p) = self.ping.as_mut() else { return };
                if let Some((c, _)) = p.outstanding.remove(&seq) {
                    self.wire.log(Event::PingLost {
                        time: now,
                        client: c,
                        seq,
                    });
                    self.ping_finished(c);
                }
            }
            AppEv::CbrTick(c) => {
                let Workload::Cbr { rate_bps, msg_size, .. } = self.cfg.workload else { return };
                let msg = vec![0x5a; msg_size];
                if self.clients[c].connected {
                    self.clients[c].enqueue(&msg);
                    self.wire.log(Event::Sent {
                        time: now,
                        client: c,
                        bytes: msg_size,
                    });
                }
                let gap = (msg_size as u128 * 8 * SECOND as u128 / rate_bps.max(1) as u128) as Time;
                self.wire.at(now + gap.max(1), Ev::App(AppEv::CbrTick(c)));
            }
            AppEv::Scripted(i) => {
                let s = self.cfg.sends[i].clone();
                self.clients[s.client].enqueue(&s.data);
                self.wire.log(Event::Sent {
                    time: now,
                    client: s.client,
                    bytes: s.data.len(),
                });
            }
        }
    }

    fn on_app_message(&mut self, c: usize, msg: &[u8]) {
        let now = self.wire.now;
        if msg.len() >= PING_MAGIC.len() + 12 && msg.starts_with(PING_MAGIC) {
            let seq = u64::from_le_bytes(msg[4..12].try_into().expect("8 bytes"));
            if let Some(p) = self.ping.as_mut() {
                if let Some((owner, sent)) = p.outstanding.remove(&seq) {
                    if owner == c {
                        self.wire.log(Event::PingEcho {
                            time: now,
                            client: c,
                            seq,
                            rtt: now - sent,
                        });
                        self.ping_finished(c);
                        return;
                    }
                    p.outstanding.insert(seq, (owner, sent));
                }
            }
            return;
        }
        self.wire.log(Event::Received {
            time: now,
            client: c,
            bytes: msg.len(),
            data: String::from_utf8_lossy(&msg[..msg.len().min(64)]).into_owned(),
        });
    }

    fn ping_finished(&mut self, c: usize) {
        let Some(p) = self.ping.as_mut() else { return };
        p.finished += 1;
        if p.finished >= p.count {
            self.done = true;
            return;
        }
        let think = p.think;
        let t = self.wire.now + self.app_rng.gen_range(0..=think);
        self.wire.at(t, Ev::App(AppEv::PingDue(c)));
    }
}

/// Runs a configuration with the group it names.
pub fn simulate(cfg: SimConfig) -> Result<SimOutput, SimError> {
    use lldc_core::crypto::{Ristretto, TestGroup};
    match cfg.node.group {
        super::config::GroupChoice::Ristretto => Ok(Simulation::<Ristretto>::new(cfg)?.run()),
        super::config::GroupChoice::Test => Ok(Simulation::<TestGroup>::new(cfg)?.run()),
    }
}
