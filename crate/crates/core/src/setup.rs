//! Epoch setup: client authentication, the guard-chain blind-and-permute
//! shuffle, transcript checks, schedule acceptance and secret derivation.
//!
//! Each guard multiplies every key (and the running base) by a fresh blinding
//! scalar and permutes the list. A client holding ephemeral key `p` finds its
//! slot as the position where `base^p` appears in the final list.

use std::collections::{BTreeSet, HashSet};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::RngCore;
use thiserror::Error;

use crate::crypto::{
    dh_derive, keygen, pke_encrypt_with_base, sign, verify, CryptoError, Digest32, Group, KeyPair,
    SharedSecret, Signature, LAMBDA_BYTES,
};
use crate::{ClientId, GuardId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SetupError {
    #[error("client key not in roster")]
    UnknownClient,
    #[error("authentication signature does not verify")]
    BadSignature,
    #[error("ephemeral key submitted twice")]
    DuplicateEphemeral,
    #[error("need at least two clients, have {0}")]
    TooFewClients(usize),
    #[error("guard {0} found its shuffle altered")]
    TranscriptTampered(GuardId),
    #[error("no trusted guard signed the schedule")]
    NoTrustedSignature,
    #[error("own pseudonym not in schedule")]
    SlotNotFound,
    #[error("setup failed: {0}")]
    SetupFailed(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RosterError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("roster has no guards")]
    NoGuards,
    #[error("roster has no relay key")]
    MissingRelay,
}

#[derive(Debug, Clone)]
pub struct Roster<G: Group> {
    pub clients: Vec<(ClientId, G::Element)>,
    pub guards: Vec<(GuardId, G::Element)>,
    pub relay: G::Element,
}

impl<G: Group> Roster<G> {
    pub fn new(
        clients: Vec<(ClientId, G::Element)>,
        guards: Vec<(GuardId, G::Element)>,
        relay: G::Element,
    ) -> Result<Self, RosterError> {
        let r = Self {
            clients,
            guards,
            relay,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), RosterError> {
        if self.guards.is_empty() {
            return Err(RosterError::NoGuards);
        }
        let mut seen = HashSet::new();
        for (id, _) in &self.clients {
            if !seen.insert(id.0) {
                return Err(RosterError::DuplicateId(id.to_string()));
            }
        }
        let mut seen = HashSet::new();
        for (id, _) in &self.guards {
            if !seen.insert(id.0) {
                return Err(RosterError::DuplicateId(id.to_string()));
            }
        }
        Ok(())
    }

    pub fn client_by_key(&self, public: &G::Element) -> Option<ClientId> {
        self.clients.iter().find(|(_, k)| k == public).map(|(id, _)| *id)
    }

    pub fn client_key(&self, id: ClientId) -> Option<&G::Element> {
        self.clients.iter().find(|(c, _)| *c == id).map(|(_, k)| k)
    }

    pub fn guard_key(&self, id: GuardId) -> Option<&G::Element> {
        self.guards.iter().find(|(g, _)| *g == id).map(|(_, k)| k)
    }

    pub fn guard_ids(&self) -> Vec<GuardId> {
        self.guards.iter().map(|(id, _)| *id).collect()
    }

    pub fn without_client(&self, id: ClientId) -> Self {
        let mut r = self.clone();
        r.clients.retain(|(c, _)| *c != id);
        r
    }

    pub fn without_guard(&self, id: GuardId) -> Self {
        let mut r = self.clone();
        r.guards.retain(|(g, _)| *g != id);
        r
    }

    /// Line format: `role id base64-public-key`, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RosterError> {
        let mut clients = Vec::new();
        let mut guards = Vec::new();
        let mut relay = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: &str| RosterError::Parse {
                line,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [role, id, key] = fields[..] else {
                return Err(err("expected `role id key`"));
            };
            let id: u32 = id.parse().map_err(|_| err("bad id"))?;
            let bytes = B64.decode(key).map_err(|_| err("bad base64"))?;
            let public = G::element_from_bytes(&bytes).ok_or_else(|| err("not a group element"))?;
            match role {
                "client" => clients.push((ClientId(id), public)),
                "guard" => guards.push((GuardId(id), public)),
                "relay" => relay = Some(public),
                _ => return Err(err("unknown role")),
            }
        }
        Self::new(clients, guards, relay.ok_or(RosterError::MissingRelay)?)
    }

    pub fn to_text(&self) -> String {
        let enc = |e: &G::Element| B64.encode(G::element_to_bytes(e));
        let mut out = format!("relay 0 {}\n", enc(&self.relay));
        for (id, k) in &self.guards {
            out.push_str(&format!("guard {} {}\n", id.0, enc(k)));
        }
        for (id, k) in &self.clients {
            out.push_str(&format!("client {} {}\n", id.0, enc(k)));
        }
        out
    }
}

fn auth_bytes<G: Group>(epoch: u32, ephemeral: &G::Element) -> Vec<u8> {
    let mut m = b"lldc/auth".to_vec();
    m.extend_from_slice(&epoch.to_le_bytes());
    m.extend(G::element_to_bytes(ephemeral));
    m
}

#[derive(Debug, Clone, Copy)]
pub struct AuthMessage<G: Group> {
    pub epoch: u32,
    pub long_term_public: G::Element,
    pub ephemeral_public: G::Element,
    pub signature: Signature<G>,
}

impl<G: Group> AuthMessage<G> {
    pub fn verifies(&self) -> bool {
        verify::<G>(
            &self.long_term_public,
            &auth_bytes::<G>(self.epoch, &self.ephemeral_public),
            &self.signature,
        )
    }
}

/// Fresh ephemeral key for `epoch`, signed with the long-term key.
pub fn client_authenticate<G: Group, R: RngCore + ?Sized>(
    long_term: &KeyPair<G>,
    epoch: u32,
    rng: &mut R,
) -> (KeyPair<G>, AuthMessage<G>) {
    let eph = keygen::<G, R>(rng);
    let signature = sign::<G>(&long_term.private, &auth_bytes::<G>(epoch, &eph.public));
    (
        eph,
        AuthMessage {
            epoch,
            long_term_public: long_term.public,
            ephemeral_public: eph.public,
            signature,
        },
    )
}

#[derive(Debug, Clone)]
pub struct ShuffleLink<G: Group> {
    pub guard_id: GuardId,
    pub input_keys: Vec<G::Element>,
    pub output_keys: Vec<G::Element>,
    pub input_base: G::Element,
    pub output_base: G::Element,
}

impl<G: Group> PartialEq for ShuffleLink<G> {
    fn eq(&self, o: &Self) -> bool {
        self.guard_id == o.guard_id
            && self.input_keys == o.input_keys
            && self.output_keys == o.output_keys
            && self.input_base == o.input_base
            && self.output_base == o.output_base
    }
}

/// What a guard keeps from its own shuffle to check the transcript later.
#[derive(Debug, Clone)]
pub struct GuardShuffleSecret<G: Group> {
    pub blinding: G::Scalar,
    /// `output[p] = input[permutation[p]]^blinding`.
    pub permutation: Vec<usize>,
    pub input_keys: Vec<G::Element>,
    pub input_base: G::Element,
}

pub fn guard_shuffle<G: Group, R: RngCore + ?Sized>(
    guard_id: GuardId,
    input_keys: &[G::Element],
    input_base: &G::Element,
    rng: &mut R,
) -> Result<(ShuffleLink<G>, GuardShuffleSecret<G>), SetupError> {
    let mut blinding = G::scalar_random(rng);
    while G::scalar_is_zero(&blinding) {
        blinding = G::scalar_random(rng);
    }
    let mut permutation: Vec<usize> = (0..input_keys.len()).collect();
    permutation.shuffle(rng);
    guard_shuffle_with(guard_id, input_keys, input_base, blinding, permutation)
}

/// Shuffle with an explicit blinding scalar and permutation.
pub fn guard_shuffle_with<G: Group>(
    guard_id: GuardId,
    input_keys: &[G::Element],
    input_base: &G::Element,
    blinding: G::Scalar,
    permutation: Vec<usize>,
) -> Result<(ShuffleLink<G>, GuardShuffleSecret<G>), SetupError> {
    if input_keys.len() < 2 {
        return Err(SetupError::TooFewClients(input_keys.len()));
    }
    if G::scalar_is_zero(&blinding) {
        return Err(CryptoError::ZeroKey.into());
    }
    let mut check = permutation.clone();
    check.sort_unstable();
    if check != (0..input_keys.len()).collect::<Vec<_>>() {
        return Err(SetupError::SetupFailed("not a permutation".into()));
    }
    let secret = GuardShuffleSecret {
        blinding,
        permutation,
        input_keys: input_keys.to_vec(),
        input_base: *input_base,
    };
    Ok((apply_shuffle(guard_id, &secret), secret))
}

fn apply_shuffle<G: Group>(guard_id: GuardId, s: &GuardShuffleSecret<G>) -> ShuffleLink<G> {
    ShuffleLink {
        guard_id,
        input_keys: s.input_keys.clone(),
        output_keys: s
            .permutation
            .iter()
            .map(|&p| G::pow(&s.input_keys[p], &s.blinding))
            .collect(),
        input_base: s.input_base,
        output_base: G::pow(&s.input_base, &s.blinding),
    }
}

#[derive(Debug, Clone)]
pub struct ShuffleTranscript<G: Group> {
    pub epoch: u32,
    pub links: Vec<ShuffleLink<G>>,
    pub final_schedule: Vec<G::Element>,
    pub final_base: G::Element,
}

impl<G: Group> ShuffleTranscript<G> {
    fn chains(&self) -> bool {
        let Some(last) = self.links.last() else {
            return false;
        };
        self.links.windows(2).all(|w| {
            w[0].output_keys == w[1].input_keys && w[0].output_base == w[1].input_base
        }) && self.links.iter().all(|l| l.input_keys.len() == l.output_keys.len())
            && last.output_keys == self.final_schedule
            && last.output_base == self.final_base
    }

    pub fn schedule(&self) -> Schedule<G> {
        Schedule {
            slots: self.final_schedule.clone(),
            base: self.final_base,
            epoch: self.epoch,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Schedule<G: Group> {
    pub slots: Vec<G::Element>,
    pub base: G::Element,
    pub epoch: u32,
}

impl<G: Group> PartialEq for Schedule<G> {
    fn eq(&self, o: &Self) -> bool {
        self.slots == o.slots && self.base == o.base && self.epoch == o.epoch
    }
}

impl<G: Group> Schedule<G> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Bytes covered by guard signatures.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut m = b"lldc/schedule".to_vec();
        m.extend_from_slice(&self.epoch.to_le_bytes());
        m.extend(G::element_to_bytes(&self.base));
        for k in &self.slots {
            m.extend(G::element_to_bytes(k));
        }
        m
    }
}

/// Signs the final schedule iff this guard's own link is intact and the chain
/// is consistent end to end.
pub fn guard_verify_and_sign<G: Group>(
    transcript: &ShuffleTranscript<G>,
    guard_id: GuardId,
    guard: &KeyPair<G>,
    own: &GuardShuffleSecret<G>,
) -> Result<Signature<G>, SetupError> {
    let tampered = SetupError::TranscriptTampered(guard_id);
    if !transcript.chains() {
        return Err(tampered);
    }
    let mine: Vec<_> = transcript.links.iter().filter(|l| l.guard_id == guard_id).collect();
    let [link] = mine[..] else {
        return Err(tampered);
    };
    if *link != apply_shuffle(guard_id, own) {
        return Err(tampered);
    }
    Ok(sign::<G>(&guard.private, &transcript.schedule().signed_bytes()))
}

/// Returns the slot index of the client's pseudonym.
pub fn client_accept_schedule<G: Group>(
    schedule: &Schedule<G>,
    signatures: &[(GuardId, Signature<G>)],
    roster: &Roster<G>,
    ephemeral: &KeyPair<G>,
    trusted: &BTreeSet<GuardId>,
) -> Result<usize, SetupError> {
    if schedule.len() < 2 {
        return Err(SetupError::TooFewClients(schedule.len()));
    }
    let msg = schedule.signed_bytes();
    let trusted_ok = signatures.iter().any(|(id, sig)| {
        trusted.contains(id) && roster.guard_key(*id).is_some_and(|pk| verify::<G>(pk, &msg, sig))
    });
    if !trusted_ok {
        return Err(SetupError::NoTrustedSignature);
    }
    let pseudonym = ephemeral.public_for_base(&schedule.base);
    let hits: Vec<usize> = (0..schedule.len()).filter(|&i| schedule.slots[i] == pseudonym).collect();
    match hits[..] {
        [i] => Ok(i),
        _ => Err(SetupError::SlotNotFound),
    }
}

/// Client-side row: one secret per guard, in roster order.
pub fn client_secrets<G: Group>(
    ephemeral: &KeyPair<G>,
    guards: &[G::Element],
) -> Result<Vec<SharedSecret>, SetupError> {
    Ok(guards
        .iter()
        .map(|pk| dh_derive::<G>(&ephemeral.private, pk))
        .collect::<Result<_, _>>()?)
}

/// Guard-side column: one secret per authenticated client ephemeral key.
pub fn guard_secrets<G: Group>(
    guard: &KeyPair<G>,
    ephemerals: &[G::Element],
) -> Result<Vec<SharedSecret>, SetupError> {
    Ok(ephemerals
        .iter()
        .map(|pk| dh_derive::<G>(&guard.private, pk))
        .collect::<Result<_, _>>()?)
}

/// `n × m` secrets indexed `[client][guard]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretMatrix {
    pub rows: Vec<Vec<SharedSecret>>,
}

impl SecretMatrix {
    pub fn from_client_rows(rows: Vec<Vec<SharedSecret>>) -> Self {
        Self { rows }
    }

    pub fn from_guard_columns(cols: Vec<Vec<SharedSecret>>) -> Self {
        let n = cols.first().map_or(0, Vec::len);
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        Self { rows }
    }

    pub fn n_clients(&self) -> usize {
        self.rows.len()
    }

    pub fn n_guards(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn get(&self, client: usize, guard: usize) -> &SharedSecret {
        &self.rows[client][guard]
    }

    pub fn client_row(&self, client: usize) -> &[SharedSecret] {
        &self.rows[client]
    }

    pub fn guard_column(&self, guard: usize) -> Vec<SharedSecret> {
        self.rows.iter().map(|r| r[guard]).collect()
    }
}

/// Both sides of the secret matrix, for local runs where every key is known.
pub fn derive_all_secrets<G: Group>(
    ephemerals: &[KeyPair<G>],
    guards: &[KeyPair<G>],
) -> Result<(SecretMatrix, SecretMatrix), SetupError> {
    let guard_pubs: Vec<_> = guards.iter().map(|g| g.public).collect();
    let eph_pubs: Vec<_> = ephemerals.iter().map(|e| e.public).collect();
    let client_side = ephemerals
        .iter()
        .map(|e| client_secrets(e, &guard_pubs))
        .collect::<Result<_, _>>()?;
    let guard_side = guards
        .iter()
        .map(|g| guard_secrets(g, &eph_pubs))
        .collect::<Result<_, _>>()?;
    Ok((
        SecretMatrix::from_client_rows(client_side),
        SecretMatrix::from_guard_columns(guard_side),
    ))
}

/// Per-slot trap secret shared by the relay and the slot owner.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SlotSecret {
    pub slot: usize,
    pub key: Digest32,
}

impl std::fmt::Debug for SlotSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SlotSecret(slot={})", self.slot)
    }
}

impl SlotSecret {
    pub fn from_bytes(slot: usize, bytes: &[u8]) -> Option<Self> {
        Some(Self {
            slot,
            key: bytes.try_into().ok()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Authenticating,
    Shuffling,
    Signing,
    Done,
}

/// Relay-side setup for one epoch, driven step by step by the node layer.
#[derive(Debug, Clone)]
pub struct RelaySetup<G: Group> {
    epoch: u32,
    roster: Roster<G>,
    accepted: Vec<(ClientId, G::Element)>,
    links: Vec<ShuffleLink<G>>,
    signatures: Vec<(GuardId, Signature<G>)>,
    stage: Stage,
}

/// Everything the relay broadcasts and retains once setup completes.
#[derive(Debug, Clone)]
pub struct SetupOutcome<G: Group> {
    pub schedule: Schedule<G>,
    pub transcript: ShuffleTranscript<G>,
    pub signatures: Vec<(GuardId, Signature<G>)>,
    /// Plaintext trap secrets, indexed by slot.
    pub slot_secrets: Vec<SlotSecret>,
    /// `slot_secrets[i]` encrypted to pseudonym `i`.
    pub sealed_slot_secrets: Vec<Vec<u8>>,
    /// Authenticated clients, in shuffle-input order; index = secret-matrix row.
    pub clients: Vec<ClientId>,
    pub ephemerals: Vec<G::Element>,
}

impl<G: Group> RelaySetup<G> {
    pub fn new(roster: Roster<G>, epoch: u32) -> Self {
        Self {
            epoch,
            roster,
            accepted: Vec::new(),
            links: Vec::new(),
            signatures: Vec::new(),
            stage: Stage::Authenticating,
        }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn roster(&self) -> &Roster<G> {
        &self.roster
    }

    pub fn accepted(&self) -> &[(ClientId, G::Element)] {
        &self.accepted
    }

    pub fn accept_auth(&mut self, msg: &AuthMessage<G>) -> Result<ClientId, SetupError> {
        let id = self
            .roster
            .client_by_key(&msg.long_term_public)
            .ok_or(SetupError::UnknownClient)?;
        if msg.epoch != self.epoch || !msg.verifies() {
            return Err(SetupError::BadSignature);
        }
        if G::is_identity(&msg.ephemeral_public) {
            return Err(CryptoError::DegenerateKey.into());
        }
        if self
            .accepted
            .iter()
            .any(|(c, e)| *c == id || *e == msg.ephemeral_public)
        {
            return Err(SetupError::DuplicateEphemeral);
        }
        self.accepted.push((id, msg.ephemeral_public));
        Ok(id)
    }

    /// Closes authentication and returns the first guard's input.
    pub fn begin_shuffle(&mut self) -> Result<(Vec<G::Element>, G::Element), SetupError> {
        if self.accepted.len() < 2 {
            return Err(SetupError::TooFewClients(self.accepted.len()));
        }
        self.stage = Stage::Shuffling;
        Ok((
            self.accepted.iter().map(|(_, e)| *e).collect(),
            G::generator(),
        ))
    }

    /// Guard whose shuffle is awaited, in roster order.
    pub fn next_guard(&self) -> Option<GuardId> {
        match self.stage {
            Stage::Shuffling => self.roster.guards.get(self.links.len()).map(|(id, _)| *id),
            _ => None,
        }
    }

    /// Records a link; returns the next guard's input, or `None` when the
    /// chain is complete.
    pub fn record_link(
        &mut self,
        link: ShuffleLink<G>,
    ) -> Result<Option<(Vec<G::Element>, G::Element)>, SetupError> {
        if self.next_guard() != Some(link.guard_id) {
            return Err(SetupError::SetupFailed(format!("unexpected link from {}", link.guard_id)));
        }
        let (want_keys, want_base) = match self.links.last() {
            Some(l) => (l.output_keys.clone(), l.output_base),
            None => (self.accepted.iter().map(|(_, e)| *e).collect(), G::generator()),
        };
        if link.input_keys != want_keys
            || link.input_base != want_base
            || link.output_keys.len() != want_keys.len()
        {
            return Err(SetupError::SetupFailed(format!("{} shuffled the wrong input", link.guard_id)));
        }
        let next = (link.output_keys.clone(), link.output_base);
        self.links.push(link);
        if self.links.len() == self.roster.guards.len() {
            self.stage = Stage::Signing;
            Ok(None)
        } else {
            Ok(Some(next))
        }
    }

    pub fn transcript(&self) -> Option<ShuffleTranscript<G>> {
        let last = self.links.last()?;
        (self.stage != Stage::Authenticating && self.stage != Stage::Shuffling).then(|| {
            ShuffleTranscript {
                epoch: self.epoch,
                links: self.links.clone(),
                final_schedule: last.output_keys.clone(),
                final_base: last.output_base,
            }
        })
    }

    pub fn record_signature(&mut self, guard: GuardId, sig: Signature<G>) -> Result<(), SetupError> {
        let t = self
            .transcript()
            .ok_or_else(|| SetupError::SetupFailed("signature before transcript".into()))?;
        let pk = self
            .roster
            .guard_key(guard)
            .ok_or_else(|| SetupError::SetupFailed(format!("unknown guard {guard}")))?;
        if !verify::<G>(pk, &t.schedule().signed_bytes(), &sig) {
            return Err(SetupError::SetupFailed(format!("bad schedule signature from {guard}")));
        }
        if !self.signatures.iter().any(|(g, _)| *g == guard) {
            self.signatures.push((guard, sig));
        }
        Ok(())
    }

    pub fn has_all_signatures(&self) -> bool {
        self.stage == Stage::Signing && self.signatures.len() == self.roster.guards.len()
    }

    /// A guard missed its deadline; the epoch is abandoned.
    pub fn guard_timed_out(&mut self, guard: GuardId) -> SetupError {
        self.stage = Stage::Done;
        SetupError::SetupFailed(format!("guard {guard} timed out"))
    }

    /// Draws per-slot trap secrets and seals each to its slot pseudonym.
    pub fn finish<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<SetupOutcome<G>, SetupError> {
        if !self.has_all_signatures() {
            return Err(SetupError::SetupFailed("missing guard signatures".into()));
        }
        let transcript = self.transcript().expect("signing stage has a transcript");
        let schedule = transcript.schedule();
        let mut slot_secrets = Vec::with_capacity(schedule.len());
        let mut sealed = Vec::with_capacity(schedule.len());
        for (slot, pseudonym) in schedule.slots.iter().enumerate() {
            let mut key = [0u8; LAMBDA_BYTES];
            rng.fill_bytes(&mut key);
            sealed.push(pke_encrypt_with_base::<G, R>(&schedule.base, pseudonym, &key, rng));
            slot_secrets.push(SlotSecret { slot, key });
        }
        self.stage = Stage::Done;
        Ok(SetupOutcome {
            schedule,
            transcript,
            signatures: self.signatures.clone(),
            slot_secrets,
            sealed_slot_secrets: sealed,
            clients: self.accepted.iter().map(|(c, _)| *c).collect(),
            ephemerals: self.accepted.iter().map(|(_, e)| *e).collect(),
        })
    }
}

/// Per-client result of a completed setup.
#[derive(Debug, Clone)]
pub struct ClientEpoch<G: Group> {
    pub id: ClientId,
    pub ephemeral: KeyPair<G>,
    pub slot: usize,
    pub slot_secret: SlotSecret,
    /// One secret per guard, in roster order.
    pub secrets: Vec<SharedSecret>,
}

/// Per-guard result of a completed setup.
#[derive(Debug, Clone)]
pub struct GuardEpoch {
    pub id: GuardId,
    /// One secret per client, in shuffle-input order.
    pub secrets: Vec<SharedSecret>,
}

/// Complete setup for one epoch with every key held locally.
#[derive(Debug, Clone)]
pub struct LocalEpoch<G: Group> {
    pub outcome: SetupOutcome<G>,
    /// In shuffle-input order.
    pub clients: Vec<ClientEpoch<G>>,
    pub guards: Vec<GuardEpoch>,
}

impl<G: Group> LocalEpoch<G> {
    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn m(&self) -> usize {
        self.guards.len()
    }

    /// Index (shuffle-input order) of the client owning `slot`.
    pub fn owner_of_slot(&self, slot: usize) -> usize {
        self.clients.iter().position(|c| c.slot == slot).expect("slot bijection")
    }
}

/// Runs every setup step honestly in-process. `offline` simulates a guard that
/// never answers.
pub fn run_local_setup<G: Group, R: RngCore + ?Sized>(
    roster: &Roster<G>,
    client_keys: &[(ClientId, KeyPair<G>)],
    guard_keys: &[(GuardId, KeyPair<G>)],
    epoch: u32,
    offline: Option<GuardId>,
    rng: &mut R,
) -> Result<LocalEpoch<G>, SetupError> {
    let mut relay = RelaySetup::new(roster.clone(), epoch);
    let mut ephemerals = Vec::new();
    for (id, lt) in client_keys {
        // small groups can repeat an ephemeral key; the client simply redraws
        let eph = loop {
            let (eph, msg) = client_authenticate(lt, epoch, rng);
            match relay.accept_auth(&msg) {
                Ok(_) => break eph,
                Err(SetupError::DuplicateEphemeral)
                    if relay.accepted().iter().all(|(c, _)| c != id) => {}
                Err(e) => return Err(e),
            }
        };
        ephemerals.push((*id, eph));
    }
    let guard_key = |id: GuardId| {
        guard_keys
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, k)| *k)
            .ok_or_else(|| SetupError::SetupFailed(format!("no key for {id}")))
    };
    let mut input = Some(relay.begin_shuffle()?);
    let mut secrets = Vec::new();
    while let (Some(gid), Some((keys, base))) = (relay.next_guard(), input.take()) {
        if offline == Some(gid) {
            return Err(relay.guard_timed_out(gid));
        }
        let (link, secret) = guard_shuffle::<G, R>(gid, &keys, &base, rng)?;
        secrets.push((gid, secret));
        input = relay.record_link(link)?;
    }
    let transcript = relay.transcript().expect("chain complete");
    for (gid, secret) in &secrets {
        let sig = guard_verify_and_sign(&transcript, *gid, &guard_key(*gid)?, secret)?;
        relay.record_signature(*gid, sig)?;
    }
    let outcome = relay.finish(rng)?;
    let trusted: BTreeSet<GuardId> = roster.guard_ids().into_iter().collect();
    let guard_pubs: Vec<_> = roster.guards.iter().map(|(_, k)| *k).collect();
    let mut clients = Vec::new();
    for (id, eph) in ephemerals {
        let slot = client_accept_schedule(&outcome.schedule, &outcome.signatures, roster, &eph, &trusted)?;
        let key = crate::crypto::pke_decrypt::<G>(&eph.private, &outcome.sealed_slot_secrets[slot])?;
        clients.push(ClientEpoch {
            id,
            ephemeral: eph,
            slot,
            slot_secret: SlotSecret::from_bytes(slot, &key).ok_or(CryptoError::Malformed)?,
            secrets: client_secrets(&eph, &guard_pubs)?,
        });
    }
    let guards = roster
        .guards
        .iter()
        .map(|(gid, _)| {
            Ok(GuardEpoch {
                id: *gid,
                secrets: guard_secrets(&guard_key(*gid)?, &outcome.ephemerals)?,
            })
        })
        .collect::<Result<_, SetupError>>()?;
    Ok(LocalEpoch {
        outcome,
        clients,
        guards,
    })
}

/// Deterministic long-term keys for `n` clients and `m` guards plus a relay.
#[allow(clippy::type_complexity)]
pub fn generate_identities<G: Group, R: RngCore + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> (Roster<G>, Vec<(ClientId, KeyPair<G>)>, Vec<(GuardId, KeyPair<G>)>, KeyPair<G>) {
    let relay = keygen::<G, R>(rng);
    let mut clients: Vec<(ClientId, KeyPair<G>)> = Vec::with_capacity(n);
    while clients.len() < n {
        let k = keygen::<G, R>(rng);
        // tiny groups collide; roster keys must be distinct
        if clients.iter().all(|(_, c)| c.public != k.public) {
            clients.push((ClientId(clients.len() as u32), k));
        }
    }
    let guards: Vec<_> = (0..m).map(|j| (GuardId(j as u32), keygen::<G, R>(rng))).collect();
    let roster = Roster::new(
        clients.iter().map(|(id, k)| (*id, k.public)).collect(),
        guards.iter().map(|(id, k)| (*id, k.public)).collect(),
        relay.public,
    )
    .expect("generated roster is valid");
    (roster, clients, guards, relay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{pke_decrypt, Ristretto, TestGroup, Zq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    type T = TestGroup;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn distinct_ephemerals(n: usize, r: &mut ChaCha20Rng) -> Vec<KeyPair<T>> {
        let mut out: Vec<KeyPair<T>> = Vec::new();
        while out.len() < n {
            let k = keygen::<T, _>(r);
            if out.iter().all(|e| e.public != k.public) {
                out.push(k);
            }
        }
        out
    }

    #[test]
    fn roster_text_roundtrip() {
        let (roster, ..) = generate_identities::<Ristretto, _>(3, 2, &mut rng(1));
        let parsed = Roster::<Ristretto>::parse(&roster.to_text()).unwrap();
        assert_eq!(parsed.clients, roster.clients);
        assert_eq!(parsed.guards, roster.guards);
        assert_eq!(parsed.relay, roster.relay);
    }

    #[test]
    fn roster_parse_errors_carry_line() {
        let text = "relay 0 QAA=\n# comment\nguard x QAA=\n";
        assert!(matches!(
            Roster::<T>::parse(text),
            Err(RosterError::Parse { line: 3, .. })
        ));
        let (roster, ..) = generate_identities::<T, _>(2, 1, &mut rng(2));
        let dup = format!("{}client 0 {}\n", roster.to_text(), B64.encode(G_BYTES));
        assert!(matches!(Roster::<T>::parse(&dup), Err(RosterError::DuplicateId(_))));
    }

    const G_BYTES: [u8; 2] = [64, 0];

    #[test]
    fn auth_accept_and_reject() {
        let mut r = rng(3);
        let (roster, clients, ..) = generate_identities::<T, _>(3, 1, &mut r);
        let mut relay = RelaySetup::new(roster, 0);
        let (_, msg) = client_authenticate(&clients[0].1, 0, &mut r);
        assert_eq!(relay.accept_auth(&msg), Ok(ClientId(0)));
        assert_eq!(relay.accept_auth(&msg), Err(SetupError::DuplicateEphemeral));

        let stranger = keygen::<T, _>(&mut r);
        let (_, msg) = client_authenticate(&stranger, 0, &mut r);
        let unknown = relay.roster().client_by_key(&stranger.public).is_none();
        if unknown {
            assert_eq!(relay.accept_auth(&msg), Err(SetupError::UnknownClient));
        }

        let (_, mut msg) = client_authenticate(&clients[1].1, 0, &mut r);
        msg.signature.response = T::scalar_add(&msg.signature.response, &Zq(1));
        assert_eq!(relay.accept_auth(&msg), Err(SetupError::BadSignature));
    }

    #[test]
    fn shuffle_preserves_blinded_multiset() {
        let mut r = rng(4);
        let eph = distinct_ephemerals(2, &mut r);
        let keys: Vec<_> = eph.iter().map(|e| e.public).collect();
        let (link, secret) = guard_shuffle::<T, _>(GuardId(0), &keys, &T::generator(), &mut r).unwrap();
        // exhaustive discrete logs of the outputs
        let mut got: Vec<u16> = link.output_keys.iter().map(|k| T::dlog(k).unwrap().0).collect();
        let mut want: Vec<u16> = eph
            .iter()
            .map(|e| T::scalar_mul(&e.private, &secret.blinding).0)
            .collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        assert_eq!(T::dlog(&link.output_base), Some(secret.blinding));
    }

    #[test]
    fn identity_blinding_is_pure_permutation() {
        let mut r = rng(5);
        let keys: Vec<_> = distinct_ephemerals(4, &mut r).iter().map(|e| e.public).collect();
        let (link, _) =
            guard_shuffle_with::<T>(GuardId(0), &keys, &T::generator(), Zq(1), vec![2, 0, 3, 1]).unwrap();
        assert_eq!(link.output_keys, vec![keys[2], keys[0], keys[3], keys[1]]);
        assert_eq!(link.output_base, T::generator());
    }

    #[test]
    fn shuffle_needs_two_keys() {
        let k = keygen::<T, _>(&mut rng(6)).public;
        assert_eq!(
            guard_shuffle::<T, _>(GuardId(0), &[k], &T::generator(), &mut rng(6)).unwrap_err(),
            SetupError::TooFewClients(1)
        );
    }

    fn two_guard_transcript(
        r: &mut ChaCha20Rng,
    ) -> (ShuffleTranscript<T>, Vec<(GuardId, KeyPair<T>, GuardShuffleSecret<T>)>) {
        let keys: Vec<_> = distinct_ephemerals(3, r).iter().map(|e| e.public).collect();
        let (l0, s0) = guard_shuffle::<T, _>(GuardId(0), &keys, &T::generator(), r).unwrap();
        let (l1, s1) = guard_shuffle::<T, _>(GuardId(1), &l0.output_keys, &l0.output_base, r).unwrap();
        let t = ShuffleTranscript {
            epoch: 0,
            final_schedule: l1.output_keys.clone(),
            final_base: l1.output_base,
            links: vec![l0, l1],
        };
        let g0 = keygen::<T, _>(r);
        let g1 = keygen::<T, _>(r);
        (t, vec![(GuardId(0), g0, s0), (GuardId(1), g1, s1)])
    }

    #[test]
    fn untampered_transcript_is_signed() {
        let mut r = rng(7);
        let (t, guards) = two_guard_transcript(&mut r);
        for (id, kp, s) in &guards {
            let sig = guard_verify_and_sign(&t, *id, kp, s).unwrap();
            assert!(verify::<T>(&kp.public, &t.schedule().signed_bytes(), &sig));
        }
    }

    #[test]
    fn swapped_output_is_detected() {
        let mut r = rng(8);
        let (mut t, guards) = two_guard_transcript(&mut r);
        // swap in guard 0's output and guard 1's input so the chain still links
        t.links[0].output_keys.swap(0, 1);
        t.links[1].input_keys.swap(0, 1);
        let (id, kp, s) = &guards[0];
        assert_eq!(
            guard_verify_and_sign(&t, *id, kp, s),
            Err(SetupError::TranscriptTampered(GuardId(0)))
        );
    }

    #[test]
    fn dropped_link_is_detected() {
        let mut r = rng(9);
        let (mut t, guards) = two_guard_transcript(&mut r);
        t.links.remove(0);
        let (id, kp, s) = &guards[0];
        assert_eq!(
            guard_verify_and_sign(&t, *id, kp, s),
            Err(SetupError::TranscriptTampered(GuardId(0)))
        );
    }

    #[test]
    fn local_setup_slots_partition() {
        let mut r = rng(10);
        let (roster, ck, gk, _) = generate_identities::<T, _>(3, 2, &mut r);
        let ep = run_local_setup(&roster, &ck, &gk, 0, None, &mut r).unwrap();
        let mut slots: Vec<_> = ep.clients.iter().map(|c| c.slot).collect();
        slots.sort_unstable();
        assert_eq!(slots, vec![0, 1, 2]);
        assert_eq!(ep.outcome.signatures.len(), 2);
    }

    #[test]
    fn schedule_refusals() {
        let mut r = rng(11);
        let (roster, ck, gk, _) = generate_identities::<T, _>(3, 2, &mut r);
        let ep = run_local_setup(&roster, &ck, &gk, 0, None, &mut r).unwrap();
        let trusted: BTreeSet<_> = [GuardId(0)].into();
        let eph = &ep.clients[0].ephemeral;
        let sched = &ep.outcome.schedule;
        let without_trusted: Vec<_> = ep
            .outcome
            .signatures
            .iter()
            .filter(|(g, _)| *g != GuardId(0))
            .cloned()
            .collect();
        assert_eq!(
            client_accept_schedule(sched, &without_trusted, &roster, eph, &trusted),
            Err(SetupError::NoTrustedSignature)
        );

        let mut omitted = sched.clone();
        omitted.slots.remove(ep.clients[0].slot);
        // the guards would sign whatever they shuffled; re-sign the shortened list
        let sigs: Vec<_> = gk
            .iter()
            .map(|(id, k)| (*id, sign::<T>(&k.private, &omitted.signed_bytes())))
            .collect();
        assert_eq!(
            client_accept_schedule(&omitted, &sigs, &roster, eph, &trusted),
            Err(SetupError::SlotNotFound)
        );

        let mut single = omitted.clone();
        single.slots.truncate(1);
        assert_eq!(
            client_accept_schedule(&single, &sigs, &roster, eph, &trusted),
            Err(SetupError::TooFewClients(1))
        );
    }

    #[test]
    fn slot_secrets_address_one_client() {
        let mut r = rng(12);
        let (roster, ck, gk, _) = generate_identities::<T, _>(3, 2, &mut r);
        let ep = run_local_setup(&roster, &ck, &gk, 0, None, &mut r).unwrap();
        for c in &ep.clients {
            assert_eq!(c.slot_secret, ep.outcome.slot_secrets[c.slot]);
            for (slot, sealed) in ep.outcome.sealed_slot_secrets.iter().enumerate() {
                if slot != c.slot {
                    assert!(pke_decrypt::<T>(&c.ephemeral.private, sealed).is_err());
                }
            }
        }
    }

    #[test]
    fn offline_guard_fails_setup() {
        let mut r = rng(13);
        let (roster, ck, gk, _) = generate_identities::<T, _>(3, 2, &mut r);
        assert!(matches!(
            run_local_setup(&roster, &ck, &gk, 0, Some(GuardId(1)), &mut r),
            Err(SetupError::SetupFailed(_))
        ));
    }

    #[test]
    fn secret_matrices_agree() {
        let mut r = rng(14);
        for (n, m) in [(2, 1), (3, 3)] {
            let eph = distinct_ephemerals(n, &mut r);
            let guards: Vec<_> = (0..m).map(|_| keygen::<T, _>(&mut r)).collect();
            let (c, g) = derive_all_secrets(&eph, &guards).unwrap();
            assert_eq!(c.n_clients(), n);
            assert_eq!(c.n_guards(), m);
            assert_eq!(c, g);
        }
    }

    #[test]
    fn fresh_epoch_changes_every_secret() {
        let mut r = rng(15);
        let (roster, ck, gk, _) = generate_identities::<Ristretto, _>(3, 3, &mut r);
        let a = run_local_setup(&roster, &ck, &gk, 0, None, &mut r).unwrap();
        let b = run_local_setup(&roster, &ck, &gk, 1, None, &mut r).unwrap();
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            for (sa, sb) in ca.secrets.iter().zip(&cb.secrets) {
                assert_ne!(sa, sb);
            }
        }
    }
}
