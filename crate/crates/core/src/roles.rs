//! Per-epoch state of each participant: what it contributes each round and
//! how it answers blame queries. Both the in-process session and the
//! simulator drive these.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::crypto::{
    bit_at, dleq_prove, flip_bit, pad_bit, prg_pad, sign, Digest32, DleqProof, Group, KeyPair,
    SharedSecret,
};
use crate::dcnet::{client_cipher, guard_cipher, round_pads, DcError, RoundCiphertext, UpstreamCell};
use crate::disruption::{
    apply_premask, run_blame, verify_trap, BitReveal, BlameContext, BlameParty, BlameRequest,
    BlameTranscript, HashReveal, PairChallenge, PartySet, RequestKind, RoundAudit, SecretReveal,
    TrapOutcome, MAX_RETRANSMISSIONS,
};
use crate::equivocation::{
    client_tag_from_hashes, guard_tag_from_hashes, owner_blind, pad_hashes, relay_recover_key, unblind,
    DownstreamHistory, EquivocationTag, HistoryLog,
};
use crate::setup::{LocalEpoch, Roster, SlotSecret};
use crate::{ClientId, EntityId, GuardId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub cell_len: usize,
    pub equivocation: bool,
    pub premask: bool,
    /// Rounds in flight; round `t` uses the history after round `t - window`.
    pub window: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            cell_len: crate::dcnet::DEFAULT_CELL_LEN,
            equivocation: true,
            premask: false,
            window: 1,
        }
    }
}

impl ProtocolOptions {
    /// Number of downstream messages absorbed before round `t` is sent.
    pub fn history_count(&self, round: u64) -> u64 {
        (round + 1).saturating_sub(self.window.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundKind {
    /// Owned by the client holding the slot.
    Slot(usize),
    /// Every client sets its own bit; no owner, tag or blinding.
    Reservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum When {
    At(u64),
    Always,
}

impl When {
    fn matches(&self, round: u64) -> bool {
        match self {
            When::At(t) => *t == round,
            When::Always => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// XOR ones into the cipher at these bit positions.
    FlipBits(Vec<usize>),
    RandomCipher,
    /// Client tag times the generator.
    BadKappa,
    /// Guard tag plus one.
    BadSigma,
    /// Tag computed from a forged hash for the first counterpart, and that
    /// forged hash revealed later.
    ForgedPadHash,
    Withhold,
}

/// How a faulty party behaves once blamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cover {
    Honest,
    /// Alters one revealed pad bit so its reveal matches its cipher.
    Lie,
    /// Lies, then refuses to open the pair secret.
    Refuse,
    /// Lies, then opens a fake secret with a fake proof.
    ForgeProof,
    Silent,
    ForgeSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultScript {
    pub when: When,
    pub fault: Fault,
    pub cover: Cover,
}

impl FaultScript {
    pub fn at(round: u64, fault: Fault, cover: Cover) -> Self {
        Self {
            when: When::At(round),
            fault,
            cover,
        }
    }
}

fn forged(h: &Digest32) -> Digest32 {
    let mut f = *h;
    f[0] ^= 1;
    f
}

fn garbage_signature<G: Group>(entity: &EntityId) -> crate::crypto::Signature<G> {
    let junk = KeyPair::<G>::from_private(G::scalar_from_u64(7)).expect("nonzero");
    sign::<G>(&junk.private, entity.to_string().as_bytes())
}

/// Fault bookkeeping shared by clients and guards.
#[derive(Debug, Clone, Default)]
struct Faults {
    scripts: Vec<FaultScript>,
    /// Cipher actually sent in each faulty round.
    sent: BTreeMap<u64, Vec<u8>>,
}

impl Faults {
    fn active(&self, round: u64) -> Option<&FaultScript> {
        self.scripts.iter().find(|s| s.when.matches(round))
    }

    fn cover(&self, round: u64) -> Cover {
        self.active(round).map_or(Cover::Honest, |s| s.cover)
    }

    fn forged_hash(&self, round: u64) -> bool {
        self.active(round).is_some_and(|s| s.fault == Fault::ForgedPadHash)
    }

    fn corrupt(&mut self, round: u64, bits: &mut [u8], rng: &mut StdRng) -> bool {
        let Some(s) = self.active(round) else {
            return true;
        };
        match &s.fault {
            Fault::FlipBits(ps) => {
                for p in ps {
                    flip_bit(bits, *p);
                }
            }
            Fault::RandomCipher => rng.fill_bytes(bits),
            Fault::Withhold => return false,
            _ => {}
        }
        self.sent.insert(round, bits.to_vec());
        true
    }

    /// Bits an honest party would reveal, altered per the cover so their
    /// XOR matches what was actually sent (the relay assumes a 0 plaintext bit).
    fn cover_bits(&self, round: u64, k: usize, mut bits: Vec<bool>) -> Vec<bool> {
        let lies = matches!(self.cover(round), Cover::Lie | Cover::Refuse | Cover::ForgeProof);
        if let (true, Some(sent)) = (lies, self.sent.get(&round)) {
            let x = bits.iter().fold(false, |a, b| a ^ b);
            if x != bit_at(sent, k) && !bits.is_empty() {
                bits[0] = !bits[0];
            }
        }
        bits
    }
}

#[derive(Debug, Clone)]
pub struct ClientRole<G: Group> {
    pub id: ClientId,
    /// Row in the secret matrix.
    pub row: usize,
    pub slot: usize,
    pub slot_secret: SlotSecret,
    long_term: KeyPair<G>,
    ephemeral: KeyPair<G>,
    secrets: Vec<SharedSecret>,
    guard_keys: Vec<G::Element>,
    relay_key: G::Element,
    opts: ProtocolOptions,
    history: HistoryLog,
    faults: Faults,
    /// Encoded cells sent in owned rounds, kept for retransmission.
    owned: BTreeMap<u64, Vec<u8>>,
    rng: StdRng,
}

impl<G: Group> ClientRole<G> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: ClientId,
        row: usize,
        long_term: KeyPair<G>,
        epoch: &crate::setup::ClientEpoch<G>,
        guard_keys: Vec<G::Element>,
        relay_key: G::Element,
        opts: ProtocolOptions,
        seed: u64,
    ) -> Self {
        Self {
            id,
            row,
            slot: epoch.slot,
            slot_secret: epoch.slot_secret.clone(),
            long_term,
            ephemeral: epoch.ephemeral,
            secrets: epoch.secrets.clone(),
            guard_keys,
            relay_key,
            opts,
            history: HistoryLog::new(),
            faults: Faults::default(),
            owned: BTreeMap::new(),
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn entity(&self) -> EntityId {
        EntityId::Client(self.id)
    }

    pub fn options(&self) -> &ProtocolOptions {
        &self.opts
    }

    pub fn add_fault(&mut self, f: FaultScript) {
        self.faults.scripts.push(f);
    }

    pub fn clear_faults(&mut self) {
        self.faults = Faults::default();
    }

    pub fn absorb_downstream(&mut self, z: &[u8]) {
        self.history.absorb(z);
    }

    pub fn history_for(&self, round: u64) -> DownstreamHistory {
        self.history.after(self.opts.history_count(round))
    }

    /// Encoded cell for an owned round; `None` payload means idle.
    pub fn seal_cell(&self, conn_id: u32, payload: Option<&[u8]>) -> Result<Vec<u8>, DcError> {
        match payload {
            Some(p) => UpstreamCell::seal(&self.slot_secret.key, conn_id, p).encode(self.opts.cell_len),
            // with premasking even an idle cell carries a tag
            None if self.opts.premask => {
                UpstreamCell::seal(&self.slot_secret.key, 0, &[]).encode(self.opts.cell_len)
            }
            None => Ok(vec![0; self.opts.cell_len]),
        }
    }

    /// Cell sent in an earlier owned round.
    pub fn sent_cell(&self, round: u64) -> Option<&[u8]> {
        self.owned.get(&round).map(Vec::as_slice)
    }

    pub fn forget_before(&mut self, round: u64) {
        self.owned = self.owned.split_off(&round);
    }

    /// This client's ciphertext for `round`. `plaintext` is the encoded cell
    /// when the client owns a slot round, or the reservation bits. `None`
    /// means the party withholds.
    pub fn contribute(
        &mut self,
        round: u64,
        kind: RoundKind,
        plaintext: Option<&[u8]>,
    ) -> Result<Option<RoundCiphertext<G>>, DcError> {
        let len = self.opts.cell_len;
        let pads = round_pads(&self.secrets, round, len);
        let (x, key) = match (kind, plaintext) {
            (RoundKind::Slot(s), Some(cell)) if s == self.slot => {
                self.owned.insert(round, cell.to_vec());
                let masked = if self.opts.premask {
                    apply_premask(cell, &self.slot_secret, round)
                } else {
                    cell.to_vec()
                };
                if self.opts.equivocation {
                    let b = owner_blind::<G, _>(&masked, &mut self.rng);
                    (Some(b.x_prime), Some(b.key))
                } else {
                    (Some(masked), None)
                }
            }
            (RoundKind::Reservation, Some(bits)) => (Some(bits.to_vec()), None),
            _ => (None, None),
        };
        let mut bits = crate::dcnet::xor_pads(&pads, len);
        if let Some(x) = &x {
            if x.len() > len {
                return Err(DcError::CellOverflow { need: x.len(), cap: len });
            }
            crate::crypto::xor_into(&mut bits[..x.len()], x);
        }
        if !self.faults.corrupt(round, &mut bits, &mut self.rng) {
            return Ok(None);
        }
        let tag = if self.opts.equivocation && matches!(kind, RoundKind::Slot(_)) {
            let mut hashes = pad_hashes(&pads);
            if self.faults.forged_hash(round) {
                hashes[0] = forged(&hashes[0]);
            }
            let mut kappa = client_tag_from_hashes::<G>(&hashes, &self.history_for(round), key.as_ref())
                .map_err(|_| DcError::Frame(crate::wire::FrameError::Malformed("blinding key")))?;
            if self.faults.active(round).is_some_and(|s| s.fault == Fault::BadKappa) {
                kappa = G::op(&kappa, &G::generator());
            }
            Some(EquivocationTag::Client(kappa))
        } else {
            None
        };
        Ok(Some(RoundCiphertext {
            round,
            sender: self.entity(),
            bits,
            tag,
        }))
    }

    /// Decrypts downstream chunks for the connections `owns` accepts.
    pub fn open_downstream(
        &self,
        msg: &crate::dcnet::DownstreamMessage,
        owns: impl Fn(u32) -> bool,
    ) -> Vec<(u32, Vec<u8>)> {
        crate::dcnet::open_downstream::<G>(msg, &self.ephemeral.private, owns)
    }

    /// XOR of this client's pads for `round`.
    pub fn pads_xor(&self, round: u64) -> Vec<u8> {
        client_cipher(&self.secrets, round, self.opts.cell_len, None).expect("no plaintext")
    }
}

impl<G: Group> BlameParty<G> for ClientRole<G> {
    fn entity(&self) -> EntityId {
        EntityId::Client(self.id)
    }

    fn reveal_bits(&mut self, req: &BlameRequest<G>) -> Option<BitReveal<G>> {
        let RequestKind::Bits(k) = req.kind else { return None };
        if !req.verifies(&self.relay_key) || k >= self.opts.cell_len * 8 {
            return None;
        }
        let t = req.round;
        let bits: Vec<bool> = self.secrets.iter().map(|s| pad_bit(s, t, k)).collect();
        match self.faults.cover(t) {
            Cover::Silent => None,
            Cover::ForgeSignature => Some(BitReveal {
                signature: garbage_signature::<G>(&self.entity()),
                ..BitReveal::new(&self.long_term, self.entity(), t, k, bits)
            }),
            _ => {
                let bits = self.faults.cover_bits(t, k, bits);
                Some(BitReveal::new(&self.long_term, self.entity(), t, k, bits))
            }
        }
    }

    fn reveal_hashes(&mut self, req: &BlameRequest<G>) -> Option<HashReveal<G>> {
        if req.kind != RequestKind::Hashes || !req.verifies(&self.relay_key) {
            return None;
        }
        let t = req.round;
        let mut hashes = pad_hashes(&round_pads(&self.secrets, t, self.opts.cell_len));
        if self.faults.forged_hash(t) {
            hashes[0] = forged(&hashes[0]);
        }
        match self.faults.cover(t) {
            Cover::Silent => None,
            Cover::ForgeSignature => Some(HashReveal {
                signature: garbage_signature::<G>(&self.entity()),
                ..HashReveal::new(&self.long_term, self.entity(), t, hashes)
            }),
            _ => Some(HashReveal::new(&self.long_term, self.entity(), t, hashes)),
        }
    }

    fn reveal_secret(&mut self, c: &PairChallenge<G>) -> Option<SecretReveal<G>> {
        let j = c.guard;
        let guard_key = *self.guard_keys.get(j)?;
        if c.client != self.row || !c.is_genuine(&self.long_term.public, &guard_key) {
            return None;
        }
        let counterpart = match &c.evidence {
            crate::disruption::PairEvidence::Bits { guard, .. } => guard.entity,
            crate::disruption::PairEvidence::Hashes { guard, .. } => guard.entity,
        };
        let (dh, proof) = match self.faults.cover(c.round) {
            Cover::Refuse | Cover::Silent => return None,
            Cover::ForgeProof => fake_proof::<G>(&mut self.rng),
            _ => dleq_prove::<G, _>(&self.ephemeral.private, &guard_key, &mut self.rng),
        };
        Some(SecretReveal::new(&self.long_term, self.entity(), counterpart, c.round, dh, proof))
    }
}

fn fake_proof<G: Group>(rng: &mut StdRng) -> (G::Element, DleqProof<G>) {
    (
        G::base_pow(&G::scalar_random(rng)),
        DleqProof {
            challenge: G::scalar_random(rng),
            response: G::scalar_random(rng),
        },
    )
}

#[derive(Debug, Clone)]
pub struct GuardRole<G: Group> {
    pub id: GuardId,
    pub index: usize,
    long_term: KeyPair<G>,
    /// By client row.
    secrets: Vec<SharedSecret>,
    client_keys: Vec<G::Element>,
    client_ephemerals: Vec<G::Element>,
    client_ids: Vec<ClientId>,
    relay_key: G::Element,
    opts: ProtocolOptions,
    faults: Faults,
    rng: StdRng,
}

impl<G: Group> GuardRole<G> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: GuardId,
        index: usize,
        long_term: KeyPair<G>,
        secrets: Vec<SharedSecret>,
        client_ids: Vec<ClientId>,
        client_keys: Vec<G::Element>,
        client_ephemerals: Vec<G::Element>,
        relay_key: G::Element,
        opts: ProtocolOptions,
        seed: u64,
    ) -> Self {
        Self {
            id,
            index,
            long_term,
            secrets,
            client_keys,
            client_ephemerals,
            client_ids,
            relay_key,
            opts,
            faults: Faults::default(),
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn entity(&self) -> EntityId {
        EntityId::Guard(self.id)
    }

    pub fn add_fault(&mut self, f: FaultScript) {
        self.faults.scripts.push(f);
    }

    pub fn n_clients(&self) -> usize {
        self.secrets.len()
    }

    /// Guard ciphers do not depend on any message, so a guard can compute
    /// them ahead of the round.
    pub fn contribute(&mut self, round: u64, kind: RoundKind) -> Option<RoundCiphertext<G>> {
        let len = self.opts.cell_len;
        let pads = round_pads(&self.secrets, round, len);
        let mut bits = crate::dcnet::xor_pads(&pads, len);
        if !self.faults.corrupt(round, &mut bits, &mut self.rng) {
            return None;
        }
        let tag = if self.opts.equivocation && matches!(kind, RoundKind::Slot(_)) {
            let mut hashes = pad_hashes(&pads);
            if self.faults.forged_hash(round) {
                hashes[0] = forged(&hashes[0]);
            }
            let mut sigma = guard_tag_from_hashes::<G>(&hashes);
            if self.faults.active(round).is_some_and(|s| s.fault == Fault::BadSigma) {
                sigma = G::scalar_add(&sigma, &G::scalar_one());
            }
            Some(EquivocationTag::Guard(sigma))
        } else {
            None
        };
        Some(RoundCiphertext {
            round,
            sender: self.entity(),
            bits,
            tag,
        })
    }

    pub fn cipher(&self, round: u64) -> Vec<u8> {
        guard_cipher(&self.secrets, round, self.opts.cell_len)
    }
}

impl<G: Group> BlameParty<G> for GuardRole<G> {
    fn entity(&self) -> EntityId {
        EntityId::Guard(self.id)
    }

    fn reveal_bits(&mut self, req: &BlameRequest<G>) -> Option<BitReveal<G>> {
        let RequestKind::Bits(k) = req.kind else { return None };
        if !req.verifies(&self.relay_key) || k >= self.opts.cell_len * 8 {
            return None;
        }
        let t = req.round;
        let bits: Vec<bool> = self.secrets.iter().map(|s| pad_bit(s, t, k)).collect();
        match self.faults.cover(t) {
            Cover::Silent => None,
            Cover::ForgeSignature => Some(BitReveal {
                signature: garbage_signature::<G>(&self.entity()),
                ..BitReveal::new(&self.long_term, self.entity(), t, k, bits)
            }),
            _ => {
                let bits = self.faults.cover_bits(t, k, bits);
                Some(BitReveal::new(&self.long_term, self.entity(), t, k, bits))
            }
        }
    }

    fn reveal_hashes(&mut self, req: &BlameRequest<G>) -> Option<HashReveal<G>> {
        if req.kind != RequestKind::Hashes || !req.verifies(&self.relay_key) {
            return None;
        }
        let t = req.round;
        let mut hashes: Vec<Digest32> = self
            .secrets
            .iter()
            .map(|s| prg_pad(s, t, self.opts.cell_len).digest())
            .collect();
        if self.faults.forged_hash(t) {
            hashes[0] = forged(&hashes[0]);
        }
        match self.faults.cover(t) {
            Cover::Silent => None,
            Cover::ForgeSignature => Some(HashReveal {
                signature: garbage_signature::<G>(&self.entity()),
                ..HashReveal::new(&self.long_term, self.entity(), t, hashes)
            }),
            _ => Some(HashReveal::new(&self.long_term, self.entity(), t, hashes)),
        }
    }

    fn reveal_secret(&mut self, c: &PairChallenge<G>) -> Option<SecretReveal<G>> {
        let i = c.client;
        let client_key = *self.client_keys.get(i)?;
        if c.guard != self.index || !c.is_genuine(&client_key, &self.long_term.public) {
            return None;
        }
        let eph = self.client_ephemerals[i];
        let (dh, proof) = match self.faults.cover(c.round) {
            Cover::Refuse | Cover::Silent => return None,
            Cover::ForgeProof => fake_proof::<G>(&mut self.rng),
            _ => dleq_prove::<G, _>(&self.long_term.private, &eph, &mut self.rng),
        };
        let counterpart = EntityId::Client(self.client_ids[i]);
        Some(SecretReveal::new(&self.long_term, self.entity(), counterpart, c.round, dh, proof))
    }
}

/// What the relay learned from one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivered {
    Idle,
    Cell(UpstreamCell),
    Reservation(Vec<u8>),
    /// The slot trap failed; the owner is asked to retransmit.
    Failed,
}

/// Blame that can now run: the disrupted round and, if a retransmission
/// verified, the owner's cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlameJob {
    pub round: u64,
    pub ground_truth: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: u64,
    pub delivered: Delivered,
    /// Set the retransmit flag on this round's downstream message.
    pub retransmit: bool,
    /// The delivered cell is a retransmission of an earlier round.
    pub is_retransmission: bool,
    pub blame: Option<BlameJob>,
}

#[derive(Debug, Clone)]
struct PendingTrap {
    round: u64,
    attempts: u32,
    /// First round of the slot prepared after the owner saw the flag.
    eligible_from: u64,
}

#[derive(Debug, Clone, Default)]
struct Pending(BTreeMap<usize, PendingTrap>);

impl Pending {
    fn remove_eligible(&mut self, slot: usize, round: u64) -> Option<PendingTrap> {
        match self.0.get(&slot) {
            Some(p) if round >= p.eligible_from => self.0.remove(&slot),
            _ => None,
        }
    }
}

impl std::ops::Deref for Pending {
    type Target = BTreeMap<usize, PendingTrap>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl std::ops::DerefMut for Pending {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.0
    }
}

#[derive(Debug, Clone)]
pub struct RelayRole<G: Group> {
    pub ctx: BlameContext<G>,
    pub opts: ProtocolOptions,
    slot_secrets: Vec<SlotSecret>,
    history: HistoryLog,
    pending: Pending,
    audits: BTreeMap<u64, RoundAudit<G>>,
}

impl<G: Group> RelayRole<G> {
    pub fn new(
        relay: KeyPair<G>,
        roster: &Roster<G>,
        epoch: &crate::setup::SetupOutcome<G>,
        opts: ProtocolOptions,
    ) -> Self {
        let ctx = BlameContext {
            relay,
            client_ids: epoch.clients.clone(),
            client_keys: epoch
                .clients
                .iter()
                .map(|c| *roster.client_key(*c).expect("accepted clients are on the roster"))
                .collect(),
            client_ephemerals: epoch.ephemerals.clone(),
            guard_ids: roster.guard_ids(),
            guard_keys: roster.guards.iter().map(|(_, k)| *k).collect(),
            cell_len: opts.cell_len,
            equivocation: opts.equivocation,
            premask: opts.premask,
        };
        Self {
            ctx,
            opts,
            slot_secrets: epoch.slot_secrets.clone(),
            history: HistoryLog::new(),
            pending: Pending::default(),
            audits: BTreeMap::new(),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slot_secrets.len()
    }

    pub fn absorb_downstream(&mut self, z: &[u8]) {
        self.history.absorb(z);
    }

    pub fn history_for(&self, round: u64) -> DownstreamHistory {
        self.history.after(self.opts.history_count(round))
    }

    pub fn has_pending(&self, slot: usize) -> bool {
        self.pending.contains_key(&slot)
    }

    /// Combines a round's contributions (clients by row, guards by index) and
    /// checks the trap.
    pub fn open_round(
        &mut self,
        round: u64,
        kind: RoundKind,
        clients: &[RoundCiphertext<G>],
        guards: &[RoundCiphertext<G>],
    ) -> Result<RoundResult, DcError> {
        let len = self.opts.cell_len;
        let y = crate::dcnet::relay_combine(
            round,
            len,
            &guards.iter().map(|c| Some(&c.bits)).collect::<Vec<_>>(),
            &clients.iter().map(|c| Some(&c.bits)).collect::<Vec<_>>(),
        )?;
        let mut result = RoundResult {
            round,
            delivered: Delivered::Idle,
            retransmit: false,
            is_retransmission: false,
            blame: None,
        };
        let slot = match kind {
            RoundKind::Reservation => {
                result.delivered = Delivered::Reservation(y);
                return Ok(result);
            }
            RoundKind::Slot(s) => s,
        };
        let history = self.history_for(round);
        let kappas: Vec<G::Element> = clients
            .iter()
            .map(|c| c.tag.as_ref().and_then(|t| t.as_client().copied()).unwrap_or_else(G::identity))
            .collect();
        let sigmas: Vec<G::Scalar> = guards
            .iter()
            .map(|c| c.tag.as_ref().and_then(|t| t.as_guard().copied()).unwrap_or_else(G::scalar_zero))
            .collect();
        let secret = &self.slot_secrets[slot];
        let mut x = if self.opts.equivocation {
            match relay_recover_key::<G>(&history, &sigmas, &kappas) {
                Ok(k) => Some(unblind(&y, &k)),
                Err(_) => None,
            }
        } else {
            Some(y.clone())
        };
        if self.opts.premask {
            x = x.map(|x| apply_premask(&x, secret, round));
        }
        let outcome = x.map_or(TrapOutcome::Failed, |x| verify_trap(&x, secret));
        match outcome {
            TrapOutcome::Valid(cell) => {
                if let Some(p) = self.pending.remove_eligible(slot, round) {
                    result.is_retransmission = true;
                    result.blame = Some(BlameJob {
                        round: p.round,
                        ground_truth: Some(cell.encode(len)?),
                    });
                }
                result.delivered = Delivered::Cell(cell);
            }
            TrapOutcome::Idle => {
                // an idle cell carries no tag and cannot serve as ground truth
                if let Some(p) = self.pending.get_mut(&slot).filter(|p| round >= p.eligible_from) {
                    p.attempts += 1;
                    if p.attempts >= MAX_RETRANSMISSIONS {
                        let p = self.pending.remove(&slot).expect("present");
                        result.blame = Some(BlameJob {
                            round: p.round,
                            ground_truth: None,
                        });
                    } else {
                        result.retransmit = true;
                    }
                }
            }
            TrapOutcome::Failed => {
                result.delivered = Delivered::Failed;
                match self.pending.get_mut(&slot) {
                    None => {
                        self.audits.insert(
                            round,
                            RoundAudit {
                                round,
                                slot,
                                slot_secret: secret.clone(),
                                client_ciphers: clients.iter().map(|c| c.bits.clone()).collect(),
                                guard_ciphers: guards.iter().map(|c| c.bits.clone()).collect(),
                                kappas,
                                sigmas,
                                history,
                                output: y,
                            },
                        );
                        self.pending.insert(
                            slot,
                            PendingTrap {
                                round,
                                attempts: 0,
                                eligible_from: round + self.opts.window.max(1),
                            },
                        );
                        result.retransmit = true;
                    }
                    // already prepared before the owner could react
                    Some(p) if round < p.eligible_from => {}
                    Some(p) => {
                        p.attempts += 1;
                        if p.attempts >= MAX_RETRANSMISSIONS {
                            let p = self.pending.remove(&slot).expect("present");
                            result.blame = Some(BlameJob {
                                round: p.round,
                                ground_truth: None,
                            });
                        } else {
                            result.retransmit = true;
                        }
                    }
                }
            }
        }
        Ok(result)
    }

    pub fn audit(&self, round: u64) -> Option<&RoundAudit<G>> {
        self.audits.get(&round)
    }

    pub fn blame(&mut self, job: &BlameJob, parties: &mut PartySet<'_, G>) -> Option<BlameTranscript> {
        let audit = self.audits.remove(&job.round)?;
        Some(run_blame(&self.ctx, &audit, job.ground_truth.as_deref(), parties))
    }
}

/// All roles for one epoch, built from a local setup run.
pub struct EpochRoles<G: Group> {
    pub clients: Vec<ClientRole<G>>,
    pub guards: Vec<GuardRole<G>>,
    pub relay: RelayRole<G>,
}

impl<G: Group> EpochRoles<G> {
    pub fn build(
        epoch: &LocalEpoch<G>,
        roster: &Roster<G>,
        client_keys: &[(ClientId, KeyPair<G>)],
        guard_keys: &[(GuardId, KeyPair<G>)],
        relay: KeyPair<G>,
        opts: ProtocolOptions,
        seed: u64,
    ) -> Self {
        let guard_pubs: Vec<_> = roster.guards.iter().map(|(_, k)| *k).collect();
        let mut seeds = StdRng::seed_from_u64(seed);
        let clients = epoch
            .clients
            .iter()
            .enumerate()
            .map(|(row, ce)| {
                let lt = client_keys
                    .iter()
                    .find(|(id, _)| *id == ce.id)
                    .map(|(_, k)| *k)
                    .expect("key for every accepted client");
                ClientRole::new(ce.id, row, lt, ce, guard_pubs.clone(), relay.public, opts, seeds.gen())
            })
            .collect();
        let relay_role = RelayRole::new(relay, roster, &epoch.outcome, opts);
        let guards = epoch
            .guards
            .iter()
            .enumerate()
            .map(|(j, ge)| {
                let lt = guard_keys
                    .iter()
                    .find(|(id, _)| *id == ge.id)
                    .map(|(_, k)| *k)
                    .expect("key for every guard");
                GuardRole::new(
                    ge.id,
                    j,
                    lt,
                    ge.secrets.clone(),
                    relay_role.ctx.client_ids.clone(),
                    relay_role.ctx.client_keys.clone(),
                    relay_role.ctx.client_ephemerals.clone(),
                    relay.public,
                    opts,
                    seeds.gen(),
                )
            })
            .collect();
        Self {
            clients,
            guards,
            relay: relay_role,
        }
    }

    /// Runs blame for `job` against these roles.
    pub fn blame(&mut self, job: &BlameJob) -> Option<BlameTranscript> {
        let mut parties = PartySet {
            clients: self.clients.iter_mut().map(|c| c as &mut dyn BlameParty<G>).collect(),
            guards: self.guards.iter_mut().map(|g| g as &mut dyn BlameParty<G>).collect(),
        };
        self.relay.blame(job, &mut parties)
    }
}
