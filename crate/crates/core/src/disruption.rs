//! Disruption and tag-corruption blame.
//!
//! A failed cell tag makes the owner retransmit. Once a retransmission passes,
//! the relay knows what the owner actually contributed and compares it with
//! the disrupted output in the DC-net plaintext domain (after premasking and
//! key blinding). A 0→1 flip at position `k` is traced through signed pad-bit
//! reveals down to one (client, guard) pair, whose shared secret is then
//! opened with a proof of correct derivation.
//!
//! When the output was not altered but the tag still failed, a tag was
//! corrupted: parties reveal the hashes of their pads so the relay can
//! recompute every tag.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{
    bit_at, dleq_verify, kdf, keystream, pad_bit, prg_pad, sign, verify, Digest32, DleqProof, Group,
    KeyPair, SharedSecret, Signature,
};
use crate::dcnet::UpstreamCell;
use crate::equivocation::{
    client_tag_from_hashes, guard_tag_from_hashes, relay_recover_key, BlindingKey, DownstreamHistory,
};
use crate::setup::SlotSecret;
use crate::wire::FrameError;
use crate::{ClientId, EntityId, GuardId};

/// Attempts the owner gets to retransmit before the round is untraceable.
pub const MAX_RETRANSMISSIONS: u32 = 3;
/// Queries per party before a bad or missing answer convicts.
pub const REVEAL_ATTEMPTS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlameError {
    #[error("no pad mismatch and no self-inconsistency at the disrupted bit")]
    BlameInconsistent,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrapOutcome {
    /// All-zero cell: nothing sent, nothing to check.
    Idle,
    Valid(UpstreamCell),
    Failed,
}

/// Checks a decoded (unblinded, unmasked) round output against the slot's
/// trap secret.
pub fn verify_trap(cell_bytes: &[u8], slot: &SlotSecret) -> TrapOutcome {
    match UpstreamCell::decode(cell_bytes) {
        Ok(None) => TrapOutcome::Idle,
        Ok(Some(c)) if c.verify(&slot.key) => TrapOutcome::Valid(c),
        _ => TrapOutcome::Failed,
    }
}

/// Pre-agreed per-round mask over the whole serialized cell.
pub fn premask_stream(slot: &SlotSecret, round: u64, len: usize) -> Vec<u8> {
    let mut key = slot.key.to_vec();
    key.extend_from_slice(b"mask");
    key.extend_from_slice(&round.to_le_bytes());
    keystream(b"lldc/premask", &key, len)
}

/// XORs the mask in; applying it twice is the identity.
pub fn apply_premask(x: &[u8], slot: &SlotSecret, round: u64) -> Vec<u8> {
    let m = premask_stream(slot, round, x.len());
    x.iter().zip(&m).map(|(a, b)| a ^ b).collect()
}

/// Smallest `k` with `x[k] = 0` and `x̄[k] = 1`.
pub fn find_flipped_zero(x: &[u8], x_bar: &[u8]) -> Result<Option<usize>, FrameError> {
    if x.len() != x_bar.len() {
        return Err(FrameError::LengthMismatch {
            expected: x.len(),
            got: x_bar.len(),
        });
    }
    for (i, (a, b)) in x.iter().zip(x_bar).enumerate() {
        let up = !a & b;
        if up != 0 {
            return Ok(Some(i * 8 + up.leading_zeros() as usize));
        }
    }
    Ok(None)
}

fn entity_bytes(e: &EntityId) -> [u8; 5] {
    let (kind, id) = match e {
        EntityId::Client(c) => (0u8, c.0),
        EntityId::Guard(g) => (1u8, g.0),
        EntityId::Relay => (2u8, 0),
    };
    let mut out = [kind, 0, 0, 0, 0];
    out[1..].copy_from_slice(&id.to_le_bytes());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Bits(usize),
    Hashes,
}

/// Relay-signed demand to reveal material for round `round`.
#[derive(Debug, Clone, Copy)]
pub struct BlameRequest<G: Group> {
    pub round: u64,
    pub kind: RequestKind,
    pub signature: Signature<G>,
}

impl<G: Group> BlameRequest<G> {
    pub fn signed_bytes(round: u64, kind: RequestKind) -> Vec<u8> {
        let mut m = b"lldc/blame-request".to_vec();
        m.extend_from_slice(&round.to_le_bytes());
        match kind {
            RequestKind::Bits(k) => {
                m.push(0);
                m.extend_from_slice(&(k as u64).to_le_bytes());
            }
            RequestKind::Hashes => m.push(1),
        }
        m
    }

    pub fn new(relay: &KeyPair<G>, round: u64, kind: RequestKind) -> Self {
        Self {
            round,
            kind,
            signature: sign::<G>(&relay.private, &Self::signed_bytes(round, kind)),
        }
    }

    pub fn verifies(&self, relay_public: &G::Element) -> bool {
        verify::<G>(relay_public, &Self::signed_bytes(self.round, self.kind), &self.signature)
    }
}

/// Pad bits at one position: `m` bits from a client (one per guard), `n`
/// from a guard (one per client).
#[derive(Debug, Clone)]
pub struct BitReveal<G: Group> {
    pub entity: EntityId,
    pub round: u64,
    pub position: usize,
    pub bits: Vec<bool>,
    pub signature: Signature<G>,
}

impl<G: Group> BitReveal<G> {
    pub fn signed_bytes(entity: &EntityId, round: u64, position: usize, bits: &[bool]) -> Vec<u8> {
        let mut m = b"lldc/reveal-bits".to_vec();
        m.extend_from_slice(&entity_bytes(entity));
        m.extend_from_slice(&round.to_le_bytes());
        m.extend_from_slice(&(position as u64).to_le_bytes());
        m.extend(bits.iter().map(|b| *b as u8));
        m
    }

    pub fn new(signer: &KeyPair<G>, entity: EntityId, round: u64, position: usize, bits: Vec<bool>) -> Self {
        let signature = sign::<G>(&signer.private, &Self::signed_bytes(&entity, round, position, &bits));
        Self {
            entity,
            round,
            position,
            bits,
            signature,
        }
    }

    pub fn verifies(&self, public: &G::Element) -> bool {
        verify::<G>(
            public,
            &Self::signed_bytes(&self.entity, self.round, self.position, &self.bits),
            &self.signature,
        )
    }

    pub fn xor(&self) -> bool {
        self.bits.iter().fold(false, |a, b| a ^ b)
    }
}

/// Hashes of the pads behind a tag; never the pads themselves.
#[derive(Debug, Clone)]
pub struct HashReveal<G: Group> {
    pub entity: EntityId,
    pub round: u64,
    pub hashes: Vec<Digest32>,
    pub signature: Signature<G>,
}

impl<G: Group> HashReveal<G> {
    pub fn signed_bytes(entity: &EntityId, round: u64, hashes: &[Digest32]) -> Vec<u8> {
        let mut m = b"lldc/reveal-hash".to_vec();
        m.extend_from_slice(&entity_bytes(entity));
        m.extend_from_slice(&round.to_le_bytes());
        for h in hashes {
            m.extend_from_slice(h);
        }
        m
    }

    pub fn new(signer: &KeyPair<G>, entity: EntityId, round: u64, hashes: Vec<Digest32>) -> Self {
        let signature = sign::<G>(&signer.private, &Self::signed_bytes(&entity, round, &hashes));
        Self {
            entity,
            round,
            hashes,
            signature,
        }
    }

    pub fn verifies(&self, public: &G::Element) -> bool {
        verify::<G>(public, &Self::signed_bytes(&self.entity, self.round, &self.hashes), &self.signature)
    }
}

/// The Diffie-Hellman element behind a shared secret, with a proof that it
/// matches the revealing party's key.
#[derive(Debug, Clone)]
pub struct SecretReveal<G: Group> {
    pub entity: EntityId,
    pub counterpart: EntityId,
    pub round: u64,
    pub dh: G::Element,
    pub proof: DleqProof<G>,
    pub signature: Signature<G>,
}

impl<G: Group> SecretReveal<G> {
    pub fn signed_bytes(
        entity: &EntityId,
        counterpart: &EntityId,
        round: u64,
        dh: &G::Element,
        proof: &DleqProof<G>,
    ) -> Vec<u8> {
        let mut m = b"lldc/reveal-secret".to_vec();
        m.extend_from_slice(&entity_bytes(entity));
        m.extend_from_slice(&entity_bytes(counterpart));
        m.extend_from_slice(&round.to_le_bytes());
        m.extend(G::element_to_bytes(dh));
        m.extend(G::scalar_to_bytes(&proof.challenge));
        m.extend(G::scalar_to_bytes(&proof.response));
        m
    }

    pub fn new(
        signer: &KeyPair<G>,
        entity: EntityId,
        counterpart: EntityId,
        round: u64,
        dh: G::Element,
        proof: DleqProof<G>,
    ) -> Self {
        let signature = sign::<G>(
            &signer.private,
            &Self::signed_bytes(&entity, &counterpart, round, &dh, &proof),
        );
        Self {
            entity,
            counterpart,
            round,
            dh,
            proof,
            signature,
        }
    }

    pub fn verifies(&self, public: &G::Element) -> bool {
        verify::<G>(
            public,
            &Self::signed_bytes(&self.entity, &self.counterpart, self.round, &self.dh, &self.proof),
            &self.signature,
        )
    }

    pub fn secret(&self) -> SharedSecret {
        SharedSecret { seed: kdf::<G>(&self.dh) }
    }
}

#[derive(Debug, Clone)]
pub enum PairEvidence<G: Group> {
    Bits { client: BitReveal<G>, guard: BitReveal<G> },
    Hashes { client: HashReveal<G>, guard: HashReveal<G> },
}

/// Shown to both members of an isolated pair.
#[derive(Debug, Clone)]
pub struct PairChallenge<G: Group> {
    pub round: u64,
    /// Row of the client, index of the guard.
    pub client: usize,
    pub guard: usize,
    pub evidence: PairEvidence<G>,
}

impl<G: Group> PairChallenge<G> {
    /// What an honest party checks before opening its secret: both reveals
    /// are signed by their claimed authors and really disagree.
    pub fn is_genuine(&self, client_key: &G::Element, guard_key: &G::Element) -> bool {
        match &self.evidence {
            PairEvidence::Bits { client, guard } => {
                client.verifies(client_key)
                    && guard.verifies(guard_key)
                    && client.round == self.round
                    && guard.round == self.round
                    && client.bits.get(self.guard) != guard.bits.get(self.client)
            }
            PairEvidence::Hashes { client, guard } => {
                client.verifies(client_key)
                    && guard.verifies(guard_key)
                    && client.round == self.round
                    && guard.round == self.round
                    && client.hashes.get(self.guard) != guard.hashes.get(self.client)
            }
        }
    }
}

/// A client or guard as seen by the relay during blame. `None` means no
/// answer before the deadline.
pub trait BlameParty<G: Group> {
    fn entity(&self) -> EntityId;
    fn reveal_bits(&mut self, req: &BlameRequest<G>) -> Option<BitReveal<G>>;
    fn reveal_hashes(&mut self, req: &BlameRequest<G>) -> Option<HashReveal<G>>;
    fn reveal_secret(&mut self, challenge: &PairChallenge<G>) -> Option<SecretReveal<G>>;
}

pub struct PartySet<'a, G: Group> {
    pub clients: Vec<&'a mut dyn BlameParty<G>>,
    pub guards: Vec<&'a mut dyn BlameParty<G>>,
}

/// Public material the relay judges against.
#[derive(Debug, Clone)]
pub struct BlameContext<G: Group> {
    pub relay: KeyPair<G>,
    /// By secret-matrix row.
    pub client_ids: Vec<ClientId>,
    pub client_keys: Vec<G::Element>,
    pub client_ephemerals: Vec<G::Element>,
    pub guard_ids: Vec<GuardId>,
    pub guard_keys: Vec<G::Element>,
    pub cell_len: usize,
    pub equivocation: bool,
    pub premask: bool,
}

impl<G: Group> BlameContext<G> {
    fn n(&self) -> usize {
        self.client_ids.len()
    }

    fn m(&self) -> usize {
        self.guard_ids.len()
    }

    fn client_entity(&self, i: usize) -> EntityId {
        EntityId::Client(self.client_ids[i])
    }

    fn guard_entity(&self, j: usize) -> EntityId {
        EntityId::Guard(self.guard_ids[j])
    }
}

/// Everything the relay kept about one round.
#[derive(Debug, Clone)]
pub struct RoundAudit<G: Group> {
    pub round: u64,
    pub slot: usize,
    pub slot_secret: SlotSecret,
    /// By row.
    pub client_ciphers: Vec<Vec<u8>>,
    /// Individual guard ciphers, kept for blame only.
    pub guard_ciphers: Vec<Vec<u8>>,
    pub kappas: Vec<G::Element>,
    pub sigmas: Vec<G::Scalar>,
    /// Relay history used for this round.
    pub history: DownstreamHistory,
    /// Raw XOR of all contributions.
    pub output: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "entity", rename_all = "snake_case")]
pub enum Verdict {
    Excluded(EntityId),
    Untraceable,
    NoFault,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Excluded(e) => write!(f, "excluded {e}"),
            Verdict::Untraceable => f.write_str("untraceable"),
            Verdict::NoFault => f.write_str("no fault"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RevealRecord {
    pub entity: EntityId,
    pub bits: String,
    pub signature: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HashRecord {
    pub entity: EntityId,
    pub hashes: Vec<String>,
    pub signature: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecretRecord {
    pub entity: EntityId,
    pub dh: String,
    pub proof_valid: bool,
}

/// Audit record of one blame run.
#[derive(Debug, Clone, Serialize)]
pub struct BlameTranscript {
    pub trigger_round: u64,
    /// Expected DC-net plaintext, from the verified retransmission.
    pub original: Option<String>,
    pub disrupted: String,
    pub position: Option<usize>,
    pub reveals: Vec<RevealRecord>,
    pub hash_reveals: Vec<HashRecord>,
    pub pair: Option<(EntityId, EntityId)>,
    pub secrets: Vec<SecretRecord>,
    pub events: Vec<String>,
    pub verdict: Verdict,
}

impl BlameTranscript {
    fn new(audit_round: u64, disrupted: &[u8]) -> Self {
        Self {
            trigger_round: audit_round,
            original: None,
            disrupted: hex::encode(disrupted),
            position: None,
            reveals: Vec::new(),
            hash_reveals: Vec::new(),
            pair: None,
            secrets: Vec::new(),
            events: Vec::new(),
            verdict: Verdict::NoFault,
        }
    }

    fn finish(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }

    /// Number of request/response exchanges, used to charge simulated time.
    pub fn exchanges(&self) -> usize {
        let mut e = 0;
        if !self.reveals.is_empty() || self.position.is_some() {
            e += 1;
        }
        if !self.hash_reveals.is_empty() {
            e += 1;
        }
        e + self.pair.iter().count() + self.events.iter().filter(|s| s.contains("re-queried")).count()
    }
}

/// Asks each party in turn, re-querying once on a bad answer; the first
/// party that never answers properly is convicted.
fn collect<G: Group, T>(
    parties: &mut PartySet<'_, G>,
    ctx: &BlameContext<G>,
    t: &mut BlameTranscript,
    mut ask: impl FnMut(&mut dyn BlameParty<G>) -> Option<T>,
    valid: impl Fn(&T, &G::Element, EntityId, usize) -> bool,
) -> Result<(Vec<T>, Vec<T>), Verdict> {
    let mut out_c = Vec::with_capacity(ctx.n());
    for (i, p) in parties.clients.iter_mut().enumerate() {
        let who = ctx.client_entity(i);
        out_c.push(ask_party(&mut **p, who, &ctx.client_keys[i], ctx.m(), t, &mut ask, &valid)?);
    }
    let mut out_g = Vec::with_capacity(ctx.m());
    for (j, p) in parties.guards.iter_mut().enumerate() {
        let who = ctx.guard_entity(j);
        out_g.push(ask_party(&mut **p, who, &ctx.guard_keys[j], ctx.n(), t, &mut ask, &valid)?);
    }
    Ok((out_c, out_g))
}

fn ask_party<G: Group, T>(
    p: &mut dyn BlameParty<G>,
    who: EntityId,
    key: &G::Element,
    width: usize,
    t: &mut BlameTranscript,
    ask: &mut impl FnMut(&mut dyn BlameParty<G>) -> Option<T>,
    valid: &impl Fn(&T, &G::Element, EntityId, usize) -> bool,
) -> Result<T, Verdict> {
    for attempt in 0..REVEAL_ATTEMPTS {
        match ask(p) {
            Some(r) if valid(&r, key, who, width) => return Ok(r),
            Some(_) => t.events.push(format!("{who} sent an invalid reveal (attempt {})", attempt + 1)),
            None => t.events.push(format!("{who} did not answer (attempt {})", attempt + 1)),
        }
        if attempt + 1 < REVEAL_ATTEMPTS {
            t.events.push(format!("{who} re-queried"));
        }
    }
    Err(Verdict::Excluded(who))
}

/// Signed bit reveals from every party at position `k`.
#[allow(clippy::type_complexity)]
pub fn collect_reveals<G: Group>(
    ctx: &BlameContext<G>,
    round: u64,
    k: usize,
    parties: &mut PartySet<'_, G>,
    t: &mut BlameTranscript,
) -> Result<(Vec<BitReveal<G>>, Vec<BitReveal<G>>), Verdict> {
    let req = BlameRequest::new(&ctx.relay, round, RequestKind::Bits(k));
    let res = collect(
        parties,
        ctx,
        t,
        |p| p.reveal_bits(&req),
        |r: &BitReveal<G>, key, who, width| {
            r.entity == who && r.round == round && r.position == k && r.bits.len() == width && r.verifies(key)
        },
    );
    if let Ok((c, g)) = &res {
        for r in c.iter().chain(g) {
            t.reveals.push(RevealRecord {
                entity: r.entity,
                bits: r.bits.iter().map(|b| if *b { '1' } else { '0' }).collect(),
                signature: hex::encode(r.signature.to_bytes()),
            });
        }
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Isolation {
    Excluded(EntityId),
    /// (client row, guard index)
    Pair(usize, usize),
}

/// Self-consistency of each reveal against the recorded cipher bit (clients
/// first, then guards), then the first disagreeing (client, guard) pair.
pub fn isolate_mismatch<G: Group>(
    ctx: &BlameContext<G>,
    audit: &RoundAudit<G>,
    clients: &[BitReveal<G>],
    guards: &[BitReveal<G>],
    k: usize,
) -> Result<Isolation, BlameError> {
    for (i, r) in clients.iter().enumerate() {
        // the owner contributed 0 at k, so every client's bit is its pad XOR
        if r.xor() != bit_at(&audit.client_ciphers[i], k) {
            return Ok(Isolation::Excluded(ctx.client_entity(i)));
        }
    }
    for (j, r) in guards.iter().enumerate() {
        if r.xor() != bit_at(&audit.guard_ciphers[j], k) {
            return Ok(Isolation::Excluded(ctx.guard_entity(j)));
        }
    }
    for (i, c) in clients.iter().enumerate() {
        for (j, g) in guards.iter().enumerate() {
            if c.bits[j] != g.bits[i] {
                return Ok(Isolation::Pair(i, j));
            }
        }
    }
    Err(BlameError::BlameInconsistent)
}

#[allow(clippy::too_many_arguments)]
fn check_secret<G: Group>(
    r: &SecretReveal<G>,
    who: EntityId,
    other: EntityId,
    round: u64,
    public: &G::Element,
    signer: &G::Element,
    base: &G::Element,
) -> bool {
    r.entity == who
        && r.counterpart == other
        && r.round == round
        && r.verifies(signer)
        && dleq_verify::<G>(public, base, &r.dh, &r.proof)
}

/// Opens the pair's shared secret and convicts whoever's reveal contradicts
/// the recomputed pad.
pub fn resolve_pair<G: Group>(
    ctx: &BlameContext<G>,
    challenge: &PairChallenge<G>,
    parties: &mut PartySet<'_, G>,
    pad_len: usize,
    t: &mut BlameTranscript,
) -> EntityId {
    let (i, j) = (challenge.client, challenge.guard);
    let (ce, ge) = (ctx.client_entity(i), ctx.guard_entity(j));
    t.pair = Some((ce, ge));
    let client_ok = parties.clients[i].reveal_secret(challenge).filter(|r| {
        check_secret(
            r,
            ce,
            ge,
            challenge.round,
            &ctx.client_ephemerals[i],
            &ctx.client_keys[i],
            &ctx.guard_keys[j],
        )
    });
    let guard_ok = parties.guards[j].reveal_secret(challenge).filter(|r| {
        check_secret(
            r,
            ge,
            ce,
            challenge.round,
            &ctx.guard_keys[j],
            &ctx.guard_keys[j],
            &ctx.client_ephemerals[i],
        )
    });
    for (who, r) in [(ce, &client_ok), (ge, &guard_ok)] {
        match r {
            Some(r) => t.secrets.push(SecretRecord {
                entity: who,
                dh: hex::encode(G::element_to_bytes(&r.dh)),
                proof_valid: true,
            }),
            None => t.events.push(format!("{who} refused or sent an invalid secret proof")),
        }
    }
    let secret = match (&client_ok, &guard_ok) {
        (None, _) => return ce,
        (_, None) => return ge,
        (Some(c), Some(_)) => c.secret(),
    };
    match &challenge.evidence {
        PairEvidence::Bits { client, guard } => {
            let truth = pad_bit(&secret, challenge.round, client.position);
            if client.bits[j] != truth {
                ce
            } else {
                debug_assert_ne!(guard.bits[i], truth);
                ge
            }
        }
        PairEvidence::Hashes { client, guard } => {
            let truth = prg_pad(&secret, challenge.round, pad_len).digest();
            if client.hashes[j] != truth {
                ce
            } else {
                debug_assert_ne!(guard.hashes[i], truth);
                ge
            }
        }
    }
}

/// Tag-corruption blame: recompute every tag from revealed pad hashes, then
/// compare the hashes pairwise.
pub fn equivocation_blame<G: Group>(
    ctx: &BlameContext<G>,
    audit: &RoundAudit<G>,
    owner_key: Option<&BlindingKey>,
    parties: &mut PartySet<'_, G>,
    t: &mut BlameTranscript,
) -> Verdict {
    let round = audit.round;
    let req = BlameRequest::new(&ctx.relay, round, RequestKind::Hashes);
    let (clients, guards) = match collect(
        parties,
        ctx,
        t,
        |p| p.reveal_hashes(&req),
        |r: &HashReveal<G>, key, who, width| {
            r.entity == who && r.round == round && r.hashes.len() == width && r.verifies(key)
        },
    ) {
        Ok(v) => v,
        Err(v) => return v,
    };
    for r in clients.iter().chain(&guards) {
        t.hash_reveals.push(HashRecord {
            entity: r.entity,
            hashes: r.hashes.iter().map(hex::encode).collect(),
            signature: hex::encode(r.signature.to_bytes()),
        });
    }
    for (j, r) in guards.iter().enumerate() {
        if guard_tag_from_hashes::<G>(&r.hashes) != audit.sigmas[j] {
            t.events.push(format!("{} tag does not match its hashes", r.entity));
            return Verdict::Excluded(ctx.guard_entity(j));
        }
    }
    let owner_factor = owner_key.and_then(|k| k.element::<G>().ok());
    let mut owner_seen = false;
    for (i, r) in clients.iter().enumerate() {
        let plain = client_tag_from_hashes::<G>(&r.hashes, &audit.history, None)
            .expect("no owner key, no embedding");
        if plain == audit.kappas[i] {
            continue;
        }
        // the owner's tag also carries F1(k); it is skipped, not verified
        if !owner_seen && owner_factor.is_some_and(|f| G::op(&f, &plain) == audit.kappas[i]) {
            owner_seen = true;
            continue;
        }
        t.events.push(format!("{} tag does not match its hashes", r.entity));
        return Verdict::Excluded(ctx.client_entity(i));
    }
    for (i, c) in clients.iter().enumerate() {
        for (j, g) in guards.iter().enumerate() {
            if c.hashes[j] != g.hashes[i] {
                let challenge = PairChallenge {
                    round,
                    client: i,
                    guard: j,
                    evidence: PairEvidence::Hashes {
                        client: c.clone(),
                        guard: g.clone(),
                    },
                };
                return Verdict::Excluded(resolve_pair(ctx, &challenge, parties, ctx.cell_len, t));
            }
        }
    }
    Verdict::NoFault
}

/// The owner's contribution to the XOR for `round`, given its cell.
pub fn dc_plaintext(
    cell: &[u8],
    slot: &SlotSecret,
    round: u64,
    premask: bool,
    key: Option<&BlindingKey>,
) -> Vec<u8> {
    let mut x = if premask {
        apply_premask(cell, slot, round)
    } else {
        cell.to_vec()
    };
    if let Some(k) = key {
        let s = k.stream(x.len());
        for (a, b) in x.iter_mut().zip(&s) {
            *a ^= b;
        }
    }
    x
}

/// Relay decision tree after a failed trap on `audit.round`.
///
/// `ground_truth` is the owner's cell as recovered from the first
/// retransmission that passed the trap, or `None` if none did.
pub fn run_blame<G: Group>(
    ctx: &BlameContext<G>,
    audit: &RoundAudit<G>,
    ground_truth: Option<&[u8]>,
    parties: &mut PartySet<'_, G>,
) -> BlameTranscript {
    let mut t = BlameTranscript::new(audit.round, &audit.output);
    let Some(cell) = ground_truth else {
        t.events.push("no retransmission passed the trap".into());
        return t.finish(Verdict::Untraceable);
    };
    let masked = dc_plaintext(cell, &audit.slot_secret, audit.round, ctx.premask, None);
    let stream: Vec<u8> = masked.iter().zip(&audit.output).map(|(a, b)| a ^ b).collect();

    // unaltered output: the XOR of expected and observed is a valid key stream
    let unaltered_key = if ctx.equivocation {
        BlindingKey::from_stream::<G>(&stream)
    } else {
        None
    };
    let unaltered = unaltered_key.is_some() || (!ctx.equivocation && stream.iter().all(|b| *b == 0));
    if unaltered {
        t.original = Some(hex::encode(&audit.output));
        t.events.push("output matches the retransmitted cell".into());
        if !ctx.equivocation {
            return t.finish(Verdict::NoFault);
        }
        let v = equivocation_blame(ctx, audit, unaltered_key.as_ref(), parties, &mut t);
        return t.finish(v);
    }

    let key = if ctx.equivocation {
        relay_recover_key::<G>(&audit.history, &audit.sigmas, &audit.kappas).ok()
    } else {
        None
    };
    let expected = dc_plaintext(cell, &audit.slot_secret, audit.round, ctx.premask, key.as_ref());
    t.original = Some(hex::encode(&expected));
    let k = match find_flipped_zero(&expected, &audit.output) {
        Ok(Some(k)) => k,
        Ok(None) => {
            t.events.push("only 1-to-0 flips".into());
            return t.finish(Verdict::Untraceable);
        }
        Err(e) => {
            t.events.push(e.to_string());
            return t.finish(Verdict::Untraceable);
        }
    };
    t.position = Some(k);
    let (clients, guards) = match collect_reveals(ctx, audit.round, k, parties, &mut t) {
        Ok(v) => v,
        Err(v) => return t.finish(v),
    };
    match isolate_mismatch(ctx, audit, &clients, &guards, k) {
        Ok(Isolation::Excluded(e)) => {
            t.events.push(format!("{e} reveal is inconsistent with its cipher"));
            t.finish(Verdict::Excluded(e))
        }
        Ok(Isolation::Pair(i, j)) => {
            let challenge = PairChallenge {
                round: audit.round,
                client: i,
                guard: j,
                evidence: PairEvidence::Bits {
                    client: clients[i].clone(),
                    guard: guards[j].clone(),
                },
            };
            let e = resolve_pair(ctx, &challenge, parties, ctx.cell_len, &mut t);
            t.finish(Verdict::Excluded(e))
        }
        Err(BlameError::BlameInconsistent) if ctx.equivocation => {
            t.events.push("bit reveals consistent, checking tags".into());
            let v = equivocation_blame(ctx, audit, None, parties, &mut t);
            t.finish(v)
        }
        Err(e) => {
            t.events.push(e.to_string());
            t.finish(Verdict::Untraceable)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<u8> {
        // MSB-first, padded to a byte
        let mut out = vec![0u8; s.len().div_ceil(8)];
        for (i, c) in s.chars().enumerate() {
            if c == '1' {
                out[i / 8] |= 1 << (7 - i % 8);
            }
        }
        out
    }

    #[test]
    fn flipped_zero_examples() {
        assert_eq!(find_flipped_zero(&bits("0000"), &bits("0100")), Ok(Some(1)));
        assert_eq!(find_flipped_zero(&bits("1111"), &bits("1011")), Ok(None));
        assert_eq!(find_flipped_zero(&bits("1010"), &bits("0011")), Ok(Some(3)));
        assert!(find_flipped_zero(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn flipped_zero_matches_enumeration() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                let want = (0..8).find(|k| a & (0x80 >> k) == 0 && b & (0x80 >> k) != 0);
                assert_eq!(find_flipped_zero(&[a], &[b]).unwrap(), want);
            }
        }
    }

    #[test]
    fn premask_is_involution() {
        let s = SlotSecret { slot: 0, key: [7; 32] };
        let x: Vec<u8> = (0..100).collect();
        let m = apply_premask(&x, &s, 9);
        assert_ne!(m, x);
        assert_eq!(apply_premask(&m, &s, 9), x);
        assert_ne!(apply_premask(&x, &s, 10), m);
    }

    #[test]
    fn trap_outcomes() {
        let s = SlotSecret { slot: 0, key: [1; 32] };
        let cell = UpstreamCell::seal(&s.key, 4, b"data").encode(64).unwrap();
        assert!(matches!(verify_trap(&cell, &s), TrapOutcome::Valid(_)));
        for bit in [0, 40, 300, 500] {
            let mut bad = cell.clone();
            crate::crypto::flip_bit(&mut bad, bit);
            assert_eq!(verify_trap(&bad, &s), TrapOutcome::Failed);
        }
        assert_eq!(verify_trap(&[0; 64], &s), TrapOutcome::Idle);
    }
}
