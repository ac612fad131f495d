//! Lock-step, in-process run of one epoch: every party is local and every
//! round completes before the next starts. Used by tests and the blame demo;
//! the simulator adds time and pipelining on top of the same roles.

use std::collections::{BTreeSet, VecDeque};

use rand::rngs::StdRng;
use rand::SeedableRng;
use thiserror::Error;

use crate::crypto::{Group, KeyPair};
use crate::dcnet::{DcError, DownFlags, DownstreamMessage};
use crate::disruption::{BlameTranscript, Verdict};
use crate::roles::{Delivered, EpochRoles, ProtocolOptions, RoundKind};
use crate::setup::{generate_identities, run_local_setup, LocalEpoch, Roster, SetupError};
use crate::{ClientId, EntityId, GuardId};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Round(#[from] DcError),
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub round: u64,
    pub slot: usize,
    /// Row of the slot owner.
    pub owner: usize,
    pub delivered: Delivered,
    pub retransmit: bool,
    pub blame: Option<BlameTranscript>,
}

pub struct LocalSession<G: Group> {
    pub roster: Roster<G>,
    pub client_keys: Vec<(ClientId, KeyPair<G>)>,
    pub guard_keys: Vec<(GuardId, KeyPair<G>)>,
    pub relay_key: KeyPair<G>,
    pub epoch: LocalEpoch<G>,
    pub roles: EpochRoles<G>,
    pub opts: ProtocolOptions,
    round: u64,
    /// Pending (conn, payload) per client row.
    outbox: Vec<VecDeque<(u32, Vec<u8>)>>,
    retransmit: Vec<Option<u64>>,
    /// (round, row): the relay sends that client a different downstream message.
    equivocate: Option<(u64, usize)>,
    pub delivered: Vec<(u64, u32, Vec<u8>)>,
    pub excluded: BTreeSet<EntityId>,
}

impl<G: Group> LocalSession<G> {
    pub fn new(n: usize, m: usize, opts: ProtocolOptions, seed: u64) -> Result<Self, SessionError> {
        let mut rng = StdRng::seed_from_u64(seed);
        let (roster, client_keys, guard_keys, relay_key) = generate_identities::<G, _>(n, m, &mut rng);
        let epoch = run_local_setup(&roster, &client_keys, &guard_keys, 0, None, &mut rng)?;
        let roles = EpochRoles::build(&epoch, &roster, &client_keys, &guard_keys, relay_key, opts, seed ^ 0x5eed);
        Ok(Self {
            outbox: vec![VecDeque::new(); epoch.n()],
            retransmit: vec![None; epoch.n()],
            roster,
            client_keys,
            guard_keys,
            relay_key,
            epoch,
            roles,
            opts,
            round: 0,
            equivocate: None,
            delivered: Vec::new(),
            excluded: BTreeSet::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.epoch.n()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn slot_of_round(&self, round: u64) -> usize {
        (round % self.n() as u64) as usize
    }

    pub fn owner_of_round(&self, round: u64) -> usize {
        self.epoch.owner_of_slot(self.slot_of_round(round))
    }

    pub fn send(&mut self, row: usize, conn_id: u32, payload: &[u8]) {
        self.outbox[row].push_back((conn_id, payload.to_vec()));
    }

    pub fn equivocate_at(&mut self, round: u64, row: usize) {
        self.equivocate = Some((round, row));
    }

    /// Encoded cell the owner will send in `round` (without consuming it).
    fn owner_cell(&mut self, row: usize) -> Result<Vec<u8>, DcError> {
        let c = &self.roles.clients[row];
        if let Some(r) = self.retransmit[row].take() {
            if let Some(cell) = c.sent_cell(r) {
                return Ok(cell.to_vec());
            }
        }
        match self.outbox[row].pop_front() {
            Some((conn, p)) => c.seal_cell(conn, Some(&p)),
            None => c.seal_cell(0, None),
        }
    }

    pub fn step(&mut self) -> Result<StepReport, SessionError> {
        let t = self.round;
        let slot = self.slot_of_round(t);
        let owner = self.owner_of_round(t);
        let kind = RoundKind::Slot(slot);
        let cell = self.owner_cell(owner)?;
        let mut clients = Vec::new();
        let mut missing_clients = Vec::new();
        for (i, c) in self.roles.clients.iter_mut().enumerate() {
            let x = (i == owner).then_some(cell.as_slice());
            match c.contribute(t, kind, x)? {
                Some(ct) => clients.push(ct),
                None => missing_clients.push(i),
            }
        }
        let mut guards = Vec::new();
        let mut missing_guards = Vec::new();
        for (j, g) in self.roles.guards.iter_mut().enumerate() {
            match g.contribute(t, kind) {
                Some(ct) => guards.push(ct),
                None => missing_guards.push(j),
            }
        }
        if !missing_clients.is_empty() || !missing_guards.is_empty() {
            return Err(DcError::RoundTimeout {
                round: t,
                missing_clients,
                missing_guards,
            }
            .into());
        }
        let result = self.roles.relay.open_round(t, kind, &clients, &guards)?;
        match &result.delivered {
            Delivered::Cell(c) if !c.payload.is_empty() => {
                self.delivered.push((t, c.conn_id, c.payload.clone()));
            }
            _ => {}
        }
        let mut down = DownstreamMessage::minimal(t);
        down.flags = DownFlags {
            retransmit: result.retransmit,
            ..DownFlags::default()
        };
        let z = down.encode();
        self.roles.relay.absorb_downstream(&z);
        for (i, c) in self.roles.clients.iter_mut().enumerate() {
            if self.equivocate == Some((t, i)) {
                let mut other = z.clone();
                *other.last_mut().expect("nonempty") ^= 1;
                c.absorb_downstream(&other);
            } else {
                c.absorb_downstream(&z);
            }
        }
        if result.retransmit && self.retransmit[owner].is_none() {
            self.retransmit[owner] = Some(t);
        }
        let blame = match &result.blame {
            Some(job) => self.roles.blame(job),
            None => None,
        };
        if let Some(Verdict::Excluded(e)) = blame.as_ref().map(|b| b.verdict) {
            self.excluded.insert(e);
        }
        self.round += 1;
        Ok(StepReport {
            round: t,
            slot,
            owner,
            delivered: result.delivered,
            retransmit: result.retransmit,
            blame,
        })
    }

    /// Steps until a blame transcript appears or `limit` rounds pass.
    pub fn run_until_blame(&mut self, limit: u64) -> Result<Option<BlameTranscript>, SessionError> {
        for _ in 0..limit {
            if let Some(b) = self.step()?.blame {
                return Ok(Some(b));
            }
        }
        Ok(None)
    }
}

/// Who carries the scripted fault in [`run_fault_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Culprit {
    Client(usize),
    Guard(usize),
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub culprit: EntityId,
    pub verdict: Verdict,
    pub transcript: Option<BlameTranscript>,
    /// Entities a round timeout pointed at.
    pub timed_out: Vec<EntityId>,
}

impl<G: Group> LocalSession<G> {
    pub fn entity_of(&self, c: Culprit) -> EntityId {
        match c {
            Culprit::Client(i) => self.roles.clients[i].entity(),
            Culprit::Guard(j) => self.roles.guards[j].entity(),
        }
    }

    /// Round at which scenarios inject their fault: the first round of the
    /// second pass over the schedule, so histories are non-trivial.
    pub fn scenario_round(&self) -> u64 {
        self.n() as u64 + 1
    }

    /// Steps to `round` and queues a message for its owner.
    pub fn prepare_owner_message(&mut self, round: u64, payload: &[u8]) -> Result<usize, SessionError> {
        while self.round < round {
            self.step()?;
        }
        let owner = self.owner_of_round(round);
        self.send(owner, 7, payload);
        Ok(owner)
    }
}

/// Plays one fault script by one entity and reports the relay's verdict.
/// A withheld contribution ends in a round timeout naming the culprit.
#[allow(clippy::too_many_arguments)]
pub fn run_fault_scenario<G: Group>(
    n: usize,
    m: usize,
    opts: ProtocolOptions,
    culprit: Culprit,
    fault: crate::roles::Fault,
    cover: crate::roles::Cover,
    seed: u64,
) -> Result<ScenarioOutcome, SessionError> {
    let mut s = LocalSession::<G>::new(n, m, opts, seed)?;
    let t = s.scenario_round();
    s.prepare_owner_message(t, b"scenario payload: the quick brown fox")?;
    let script = crate::roles::FaultScript::at(t, fault, cover);
    match culprit {
        Culprit::Client(i) => s.roles.clients[i].add_fault(script),
        Culprit::Guard(j) => s.roles.guards[j].add_fault(script),
    }
    let who = s.entity_of(culprit);
    for _ in 0..(4 * n as u64 + 4) {
        match s.step() {
            Ok(r) => {
                if let Some(b) = r.blame {
                    return Ok(ScenarioOutcome {
                        culprit: who,
                        verdict: b.verdict,
                        transcript: Some(b),
                        timed_out: Vec::new(),
                    });
                }
            }
            Err(SessionError::Round(DcError::RoundTimeout {
                missing_clients,
                missing_guards,
                ..
            })) => {
                let timed_out: Vec<EntityId> = missing_clients
                    .iter()
                    .map(|i| s.roles.clients[*i].entity())
                    .chain(missing_guards.iter().map(|j| s.roles.guards[*j].entity()))
                    .collect();
                let verdict = match timed_out.as_slice() {
                    [one] => Verdict::Excluded(*one),
                    _ => Verdict::Untraceable,
                };
                return Ok(ScenarioOutcome {
                    culprit: who,
                    verdict,
                    transcript: None,
                    timed_out,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ScenarioOutcome {
        culprit: who,
        verdict: Verdict::NoFault,
        transcript: None,
        timed_out: Vec::new(),
    })
}
