//! XOR core of an anonymize round: pads, guard and client ciphers, relay
//! combination, the relay-side guard cipher buffer, upstream cells and the
//! downstream broadcast.

use std::collections::{BTreeMap, VecDeque};

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{
    hmac_tag, hmac_verify, pke_decrypt, pke_encrypt_with_base, prg_pad, xor_into, Digest32, Group,
    Pad, SharedSecret, HASH_LEN,
};
use crate::equivocation::EquivocationTag;
use crate::wire::{Decoder, Encoder, FrameError};
use crate::EntityId;

/// `[conn_id:4][hmac:32][len:2]`
pub const CELL_HEADER: usize = 4 + HASH_LEN + 2;
/// Reassembly cap per connection.
pub const REASSEMBLY_CAP: usize = 64 << 10;
pub const DEFAULT_CELL_LEN: usize = 1024;
pub const DEFAULT_DOWNSTREAM_CAP: usize = 16 << 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DcError {
    #[error("cell needs {need} bytes, capacity is {cap}")]
    CellOverflow { need: usize, cap: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("round {round} timed out waiting for clients {missing_clients:?} and guards {missing_guards:?}")]
    RoundTimeout {
        round: u64,
        missing_clients: Vec<usize>,
        missing_guards: Vec<usize>,
    },
    #[error("connection {0} exceeded its reassembly buffer")]
    ReassemblyOverflow(u32),
}

/// Application cell carried in an owned slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpstreamCell {
    pub conn_id: u32,
    pub hmac: Digest32,
    pub payload: Vec<u8>,
}

fn cell_auth_bytes(conn_id: u32, payload: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(6 + payload.len());
    m.extend_from_slice(&conn_id.to_le_bytes());
    m.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    m.extend_from_slice(payload);
    m
}

impl UpstreamCell {
    /// The tag covers the connection id, length and payload, not the round,
    /// so a retransmitted cell is byte-identical.
    pub fn seal(slot_key: &[u8], conn_id: u32, payload: &[u8]) -> Self {
        Self {
            conn_id,
            hmac: hmac_tag(slot_key, &cell_auth_bytes(conn_id, payload)),
            payload: payload.to_vec(),
        }
    }

    pub fn verify(&self, slot_key: &[u8]) -> bool {
        hmac_verify(slot_key, &cell_auth_bytes(self.conn_id, &self.payload), &self.hmac)
    }

    pub fn payload_capacity(cell_len: usize) -> usize {
        cell_len.saturating_sub(CELL_HEADER)
    }

    pub fn encode(&self, cell_len: usize) -> Result<Vec<u8>, DcError> {
        let need = CELL_HEADER + self.payload.len();
        if need > cell_len || self.payload.len() > u16::MAX as usize {
            return Err(DcError::CellOverflow { need, cap: cell_len });
        }
        let mut out = Vec::with_capacity(cell_len);
        out.extend_from_slice(&self.conn_id.to_le_bytes());
        out.extend_from_slice(&self.hmac);
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.resize(cell_len, 0);
        Ok(out)
    }

    /// `Ok(None)` for the all-zero idle cell. Nonzero padding is rejected so
    /// that every bit of a cell is covered by either the tag or this check.
    pub fn decode(bytes: &[u8]) -> Result<Option<Self>, FrameError> {
        if bytes.iter().all(|b| *b == 0) {
            return Ok(None);
        }
        let mut d = Decoder::new(bytes);
        let conn_id = d.u32()?;
        let hmac: Digest32 = d.raw(HASH_LEN)?.try_into().unwrap();
        let len = d.u16()? as usize;
        let payload = d.raw(len)?.to_vec();
        if d.raw(d.remaining())?.iter().any(|b| *b != 0) {
            return Err(FrameError::Malformed("nonzero cell padding"));
        }
        Ok(Some(Self {
            conn_id,
            hmac,
            payload,
        }))
    }
}

pub fn zero_cell(cell_len: usize) -> Vec<u8> {
    vec![0; cell_len]
}

pub fn round_pads(secrets: &[SharedSecret], round: u64, len: usize) -> Vec<Pad> {
    secrets.iter().map(|s| prg_pad(s, round, len)).collect()
}

pub fn xor_pads(pads: &[Pad], len: usize) -> Vec<u8> {
    let mut acc = vec![0u8; len];
    for p in pads {
        xor_into(&mut acc, &p.bytes);
    }
    acc
}

/// XOR of this guard's pads with every client; computable for any round.
pub fn guard_cipher(secrets: &[SharedSecret], round: u64, len: usize) -> Vec<u8> {
    xor_pads(&round_pads(secrets, round, len), len)
}

/// XOR of this client's pads with every guard, plus `plaintext` when the
/// client owns the round. Short plaintexts are zero-padded.
pub fn client_cipher(
    secrets: &[SharedSecret],
    round: u64,
    len: usize,
    plaintext: Option<&[u8]>,
) -> Result<Vec<u8>, DcError> {
    let mut out = guard_cipher(secrets, round, len);
    if let Some(x) = plaintext {
        if x.len() > len {
            return Err(DcError::CellOverflow {
                need: x.len(),
                cap: len,
            });
        }
        xor_into(&mut out[..x.len()], x);
    }
    Ok(out)
}

/// XOR of every contribution. A missing contributor stalls the round.
pub fn relay_combine<B: AsRef<[u8]>>(
    round: u64,
    len: usize,
    guards: &[Option<B>],
    clients: &[Option<B>],
) -> Result<Vec<u8>, DcError> {
    let missing = |v: &[Option<B>]| -> Vec<usize> {
        v.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i).collect()
    };
    let (missing_guards, missing_clients) = (missing(guards), missing(clients));
    if !missing_guards.is_empty() || !missing_clients.is_empty() {
        return Err(DcError::RoundTimeout {
            round,
            missing_clients,
            missing_guards,
        });
    }
    let mut y = vec![0u8; len];
    for c in guards.iter().chain(clients).flatten() {
        let c = c.as_ref();
        if c.len() != len {
            return Err(FrameError::LengthMismatch {
                expected: len,
                got: c.len(),
            }
            .into());
        }
        xor_into(&mut y, c);
    }
    Ok(y)
}

/// One entity's contribution to a round, as carried on the wire.
#[derive(Debug, Clone)]
pub struct RoundCiphertext<G: Group> {
    pub round: u64,
    pub sender: EntityId,
    pub bits: Vec<u8>,
    pub tag: Option<EquivocationTag<G>>,
}

impl<G: Group> PartialEq for RoundCiphertext<G> {
    fn eq(&self, o: &Self) -> bool {
        self.round == o.round && self.sender == o.sender && self.bits == o.bits && self.tag == o.tag
    }
}

impl<G: Group> RoundCiphertext<G> {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.round);
        match self.sender {
            EntityId::Client(c) => e.u8(0).u32(c.0),
            EntityId::Guard(g) => e.u8(1).u32(g.0),
            EntityId::Relay => e.u8(2).u32(0),
        };
        e.bytes(&self.bits);
        match &self.tag {
            None => e.u8(0),
            Some(t) => e.u8(1).bytes(&t.to_bytes()),
        };
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let mut d = Decoder::new(bytes);
        let round = d.u64()?;
        let kind = d.u8()?;
        let id = d.u32()?;
        let sender = match kind {
            0 => EntityId::Client(crate::ClientId(id)),
            1 => EntityId::Guard(crate::GuardId(id)),
            2 => EntityId::Relay,
            _ => return Err(FrameError::Malformed("sender kind")),
        };
        let bits = d.bytes()?.to_vec();
        let tag = match d.u8()? {
            0 => None,
            1 => Some(
                EquivocationTag::from_bytes(d.bytes()?).ok_or(FrameError::Malformed("equivocation tag"))?,
            ),
            _ => return Err(FrameError::Malformed("tag flag")),
        };
        d.finish()?;
        Ok(Self {
            round,
            sender,
            bits,
            tag,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BufferError {
    #[error("round {0} is outside the buffer window")]
    OutOfWindow(u64),
    #[error("guard {0} already contributed to round {1}")]
    Duplicate(usize, u64),
    #[error("cipher length {0} does not match the round length")]
    Length(usize),
}

#[derive(Debug, Clone)]
struct Accumulator {
    bits: Vec<u8>,
    contributed: Vec<bool>,
}

/// Relay buffer of pre-streamed guard ciphers: one accumulator per future
/// round, never one cipher per guard.
#[derive(Debug, Clone)]
pub struct GuardBuffer {
    guards: usize,
    len: usize,
    depth: u64,
    next: u64,
    rounds: BTreeMap<u64, Accumulator>,
}

impl GuardBuffer {
    pub fn new(guards: usize, len: usize, depth: u64, first_round: u64) -> Self {
        Self {
            guards,
            len,
            depth: depth.max(1),
            next: first_round,
            rounds: BTreeMap::new(),
        }
    }

    /// Rounds `[next, next + depth)` may be streamed in.
    pub fn window(&self) -> std::ops::Range<u64> {
        self.next..self.next + self.depth
    }

    pub fn accepts(&self, round: u64) -> bool {
        self.window().contains(&round)
    }

    pub fn add(&mut self, guard: usize, round: u64, cipher: &[u8]) -> Result<(), BufferError> {
        if !self.accepts(round) || guard >= self.guards {
            return Err(BufferError::OutOfWindow(round));
        }
        if cipher.len() != self.len {
            return Err(BufferError::Length(cipher.len()));
        }
        let (len, guards) = (self.len, self.guards);
        let acc = self.rounds.entry(round).or_insert_with(|| Accumulator {
            bits: vec![0; len],
            contributed: vec![false; guards],
        });
        if acc.contributed[guard] {
            return Err(BufferError::Duplicate(guard, round));
        }
        acc.contributed[guard] = true;
        xor_into(&mut acc.bits, cipher);
        Ok(())
    }

    pub fn is_complete(&self, round: u64) -> bool {
        self.rounds
            .get(&round)
            .is_some_and(|a| a.contributed.iter().all(|c| *c))
    }

    pub fn missing(&self, round: u64) -> Vec<usize> {
        match self.rounds.get(&round) {
            Some(a) => (0..self.guards).filter(|g| !a.contributed[*g]).collect(),
            None => (0..self.guards).collect(),
        }
    }

    /// Removes the accumulator for `round` once every guard contributed and
    /// slides the window past it.
    pub fn take(&mut self, round: u64) -> Option<Vec<u8>> {
        if !self.is_complete(round) {
            return None;
        }
        let acc = self.rounds.remove(&round)?;
        self.next = self.next.max(round + 1);
        self.rounds.retain(|r, _| *r >= self.next);
        Some(acc.bits)
    }

    /// Moves the window without consuming (used across a re-schedule).
    pub fn advance_to(&mut self, round: u64) {
        self.next = self.next.max(round);
        self.rounds.retain(|r, _| *r >= round);
    }

    pub fn buffered_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn stored_bytes(&self) -> usize {
        self.rounds.len() * self.len
    }
}

/// `u32` length prefix, so a stream of messages can be split into cells.
pub fn frame_message(msg: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + msg.len());
    out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
    out.extend_from_slice(msg);
    out
}

/// Per-connection reassembly of length-prefixed messages split over cells
/// or downstream chunks.
#[derive(Debug, Clone, Default)]
pub struct Reassembler {
    buffers: BTreeMap<u32, Vec<u8>>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, conn_id: u32, bytes: &[u8]) -> Result<Vec<Vec<u8>>, DcError> {
        let buf = self.buffers.entry(conn_id).or_default();
        if buf.len() + bytes.len() > REASSEMBLY_CAP {
            self.buffers.remove(&conn_id);
            return Err(DcError::ReassemblyOverflow(conn_id));
        }
        buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        loop {
            if buf.len() < 4 {
                break;
            }
            let n = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
            if n > REASSEMBLY_CAP {
                self.buffers.remove(&conn_id);
                return Err(DcError::ReassemblyOverflow(conn_id));
            }
            if buf.len() < 4 + n {
                break;
            }
            out.push(buf[4..4 + n].to_vec());
            buf.drain(..4 + n);
        }
        Ok(out)
    }

    pub fn pending(&self, conn_id: u32) -> usize {
        self.buffers.get(&conn_id).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DownFlags {
    pub retransmit: bool,
    pub setup_request: bool,
    pub load_request: bool,
}

impl DownFlags {
    fn to_byte(self) -> u8 {
        self.retransmit as u8 | (self.setup_request as u8) << 1 | (self.load_request as u8) << 2
    }

    fn from_byte(b: u8) -> Result<Self, FrameError> {
        if b & !0x07 != 0 {
            return Err(FrameError::Malformed("downstream flags"));
        }
        Ok(Self {
            retransmit: b & 1 != 0,
            setup_request: b & 2 != 0,
            load_request: b & 4 != 0,
        })
    }
}

/// What the relay schedules for `announce_round`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Announce {
    /// Nothing scheduled.
    Idle,
    /// Regular round owned by this slot.
    Slot(u32),
    /// Every client sets the bit of its slot to keep it open.
    Reservation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownChunk {
    pub conn_id: u32,
    pub ciphertext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownstreamMessage {
    /// Upstream round this message answers.
    pub round: u64,
    pub flags: DownFlags,
    pub announce_round: u64,
    pub announce: Announce,
    pub chunks: Vec<DownChunk>,
}

impl DownstreamMessage {
    pub fn minimal(round: u64) -> Self {
        Self {
            round,
            flags: DownFlags::default(),
            announce_round: round,
            announce: Announce::Idle,
            chunks: Vec::new(),
        }
    }

    /// Fixed part of the encoding.
    pub const HEADER_LEN: usize = 8 + 1 + 8 + 1 + 4 + 2;
    const CHUNK_HEADER: usize = 4 + 4;

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.round).u8(self.flags.to_byte()).u64(self.announce_round);
        match self.announce {
            Announce::Idle => e.u8(0).u32(0),
            Announce::Slot(s) => e.u8(1).u32(s),
            Announce::Reservation => e.u8(2).u32(0),
        };
        e.u16(self.chunks.len() as u16);
        for c in &self.chunks {
            e.u32(c.conn_id).bytes(&c.ciphertext);
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let mut d = Decoder::new(bytes);
        let round = d.u64()?;
        let flags = DownFlags::from_byte(d.u8()?)?;
        let announce_round = d.u64()?;
        let kind = d.u8()?;
        let slot = d.u32()?;
        let announce = match kind {
            0 => Announce::Idle,
            1 => Announce::Slot(slot),
            2 => Announce::Reservation,
            _ => return Err(FrameError::Malformed("announce kind")),
        };
        let count = d.u16()?;
        let mut chunks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let conn_id = d.u32()?;
            chunks.push(DownChunk {
                conn_id,
                ciphertext: d.bytes()?.to_vec(),
            });
        }
        d.finish()?;
        Ok(Self {
            round,
            flags,
            announce_round,
            announce,
            chunks,
        })
    }

    pub fn payload_bytes(&self) -> usize {
        self.chunks.iter().map(|c| c.ciphertext.len()).sum()
    }
}

/// Relay-side downstream queues, one byte stream per connection, each
/// addressed to the slot that opened it.
#[derive(Debug, Clone, Default)]
pub struct DownQueues {
    conns: BTreeMap<u32, (usize, VecDeque<u8>)>,
    cursor: u32,
}

impl DownQueues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues one message for `conn_id`, owned by `slot`.
    pub fn push(&mut self, conn_id: u32, slot: usize, msg: &[u8]) {
        let entry = self.conns.entry(conn_id).or_insert((slot, VecDeque::new()));
        entry.0 = slot;
        entry.1.extend(frame_message(msg));
    }

    pub fn is_empty(&self) -> bool {
        self.conns.values().all(|(_, q)| q.is_empty())
    }

    pub fn pending_bytes(&self) -> usize {
        self.conns.values().map(|(_, q)| q.len()).sum()
    }

    pub fn clear(&mut self) {
        self.conns.clear();
    }
}

/// Fills a downstream message up to `cap` encoded bytes, encrypting each
/// chunk to the pseudonym of the slot owning its connection. Connections are
/// served round-robin; leftovers stay queued for later rounds.
pub fn assemble_downstream<G: Group, R: RngCore + ?Sized>(
    mut msg: DownstreamMessage,
    queues: &mut DownQueues,
    pseudonyms: &[G::Element],
    base: &G::Element,
    cap: usize,
    rng: &mut R,
) -> DownstreamMessage {
    let overhead = DownstreamMessage::CHUNK_HEADER + crate::crypto::pke_overhead::<G>();
    let mut budget = cap.saturating_sub(DownstreamMessage::HEADER_LEN);
    let ids: Vec<u32> = {
        let after: Vec<u32> = queues.conns.range(queues.cursor..).map(|(k, _)| *k).collect();
        let before: Vec<u32> = queues.conns.range(..queues.cursor).map(|(k, _)| *k).collect();
        after.into_iter().chain(before).collect()
    };
    for id in ids {
        if budget <= overhead {
            break;
        }
        let (slot, q) = queues.conns.get_mut(&id).expect("listed id");
        if q.is_empty() || *slot >= pseudonyms.len() {
            continue;
        }
        let take = q.len().min(budget - overhead);
        let plain: Vec<u8> = q.drain(..take).collect();
        msg.chunks.push(DownChunk {
            conn_id: id,
            ciphertext: pke_encrypt_with_base::<G, R>(base, &pseudonyms[*slot], &plain, rng),
        });
        budget -= overhead + take;
        queues.cursor = id.wrapping_add(1);
    }
    queues.conns.retain(|_, (_, q)| !q.is_empty());
    msg
}

/// Decrypts the chunks addressed to connections this client owns.
pub fn open_downstream<G: Group>(
    msg: &DownstreamMessage,
    pseudonym_private: &G::Scalar,
    owns: impl Fn(u32) -> bool,
) -> Vec<(u32, Vec<u8>)> {
    msg.chunks
        .iter()
        .filter(|c| owns(c.conn_id))
        .filter_map(|c| {
            pke_decrypt::<G>(pseudonym_private, &c.ciphertext)
                .ok()
                .map(|p| (c.conn_id, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Ristretto, TestGroup};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn secret(b: u8) -> SharedSecret {
        SharedSecret { seed: [b; 32] }
    }

    fn matrix(n: usize, m: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<SharedSecret>> {
        (0..n)
            .map(|_| (0..m).map(|_| SharedSecret { seed: rng.gen() }).collect())
            .collect()
    }

    fn column(rows: &[Vec<SharedSecret>], j: usize) -> Vec<SharedSecret> {
        rows.iter().map(|r| r[j]).collect()
    }

    #[test]
    fn cell_layout() {
        let c = UpstreamCell::seal(b"k", 0x0a0b0c0d, b"hi");
        let bytes = c.encode(64).unwrap();
        assert_eq!(bytes.len(), 64);
        assert_eq!(&bytes[..4], &[0x0d, 0x0c, 0x0b, 0x0a]);
        assert_eq!(&bytes[4..36], &c.hmac);
        assert_eq!(&bytes[36..38], &[2, 0]);
        assert_eq!(&bytes[38..40], b"hi");
        assert!(bytes[40..].iter().all(|b| *b == 0));
        assert_eq!(UpstreamCell::decode(&bytes).unwrap(), Some(c));
        assert_eq!(UpstreamCell::decode(&zero_cell(64)).unwrap(), None);
    }

    #[test]
    fn cell_overflow() {
        let c = UpstreamCell::seal(b"k", 1, &[0u8; 30]);
        assert_eq!(
            c.encode(60),
            Err(DcError::CellOverflow { need: 68, cap: 60 })
        );
        assert!(matches!(
            client_cipher(&[secret(1)], 0, 8, Some(&[0u8; 9])),
            Err(DcError::CellOverflow { .. })
        ));
    }

    #[test]
    fn padding_bits_are_checked() {
        let mut bytes = UpstreamCell::seal(b"k", 1, b"x").encode(64).unwrap();
        bytes[63] ^= 1;
        assert!(UpstreamCell::decode(&bytes).is_err());
    }

    #[test]
    fn single_client_guard_cipher_is_its_pad() {
        let s = secret(3);
        assert_eq!(guard_cipher(&[s], 7, 100), prg_pad(&s, 7, 100).bytes);
        assert_eq!(client_cipher(&[s], 7, 100, None).unwrap(), prg_pad(&s, 7, 100).bytes);
    }

    #[test]
    fn equal_secrets_cancel() {
        assert_eq!(guard_cipher(&[secret(4), secret(4)], 2, 64), vec![0; 64]);
    }

    #[test]
    fn three_pads_match_independent_recomputation() {
        let ss = [secret(1), secret(2), secret(3)];
        let mut want = vec![0u8; 96];
        for s in &ss {
            for (k, b) in prg_pad(s, 11, 96).bytes.iter().enumerate() {
                want[k] ^= b;
            }
        }
        assert_eq!(guard_cipher(&ss, 11, 96), want);
    }

    #[test]
    fn owner_payload_recovered() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rows = matrix(3, 2, &mut rng);
        let x = vec![0xa5u8; 200];
        let len = 256;
        let guards: Vec<_> = (0..2).map(|j| Some(guard_cipher(&column(&rows, j), 5, len))).collect();
        let clients: Vec<_> = (0..3)
            .map(|i| Some(client_cipher(&rows[i], 5, len, (i == 1).then_some(&x[..])).unwrap()))
            .collect();
        let y = relay_combine(5, len, &guards, &clients).unwrap();
        assert_eq!(&y[..200], &x[..]);
        assert!(y[200..].iter().all(|b| *b == 0));
    }

    #[test]
    fn idle_round_decodes_to_zero_cell() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let rows = matrix(2, 1, &mut rng);
        let zero = zero_cell(128);
        let g = vec![Some(guard_cipher(&column(&rows, 0), 0, 128))];
        let c: Vec<_> = (0..2)
            .map(|i| Some(client_cipher(&rows[i], 0, 128, (i == 0).then_some(&zero[..])).unwrap()))
            .collect();
        let y = relay_combine(0, 128, &g, &c).unwrap();
        assert_eq!(UpstreamCell::decode(&y).unwrap(), None);
    }

    #[test]
    fn withheld_cipher_times_out() {
        let g = vec![Some(vec![0u8; 4])];
        let c = vec![Some(vec![0u8; 4]), None];
        assert_eq!(
            relay_combine(9, 4, &g, &c),
            Err(DcError::RoundTimeout {
                round: 9,
                missing_clients: vec![1],
                missing_guards: vec![]
            })
        );
        let bad = vec![Some(vec![0u8; 3])];
        assert!(matches!(
            relay_combine(9, 4, &g, &bad),
            Err(DcError::Frame(FrameError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn buffer_keeps_one_accumulator_per_round() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rows = matrix(2, 3, &mut rng);
        let mut buf = GuardBuffer::new(3, 32, 4, 0);
        for t in 0..4 {
            for j in 0..3 {
                buf.add(j, t, &guard_cipher(&column(&rows, j), t, 32)).unwrap();
            }
        }
        assert_eq!(buf.stored_bytes(), 4 * 32);
        assert!(!buf.accepts(4));
        assert_eq!(buf.add(0, 4, &[0; 32]), Err(BufferError::OutOfWindow(4)));
        for t in 0..4 {
            let just_in_time: Vec<_> = (0..3)
                .map(|j| Some(guard_cipher(&column(&rows, j), t, 32)))
                .collect();
            let direct = relay_combine::<Vec<u8>>(t, 32, &just_in_time, &[]).unwrap();
            assert_eq!(buf.take(t).unwrap(), direct);
        }
        assert!(buf.accepts(7));
    }

    #[test]
    fn buffer_rejects_duplicates() {
        let mut buf = GuardBuffer::new(2, 4, 2, 0);
        buf.add(0, 0, &[1; 4]).unwrap();
        assert_eq!(buf.add(0, 0, &[1; 4]), Err(BufferError::Duplicate(0, 0)));
        assert_eq!(buf.take(0), None);
        assert_eq!(buf.missing(0), vec![1]);
    }

    #[test]
    fn downstream_minimal_and_codec() {
        let z = DownstreamMessage::minimal(3);
        let enc = z.encode();
        assert_eq!(enc.len(), DownstreamMessage::HEADER_LEN);
        assert_eq!(DownstreamMessage::decode(&enc).unwrap(), z);
        let full = DownstreamMessage {
            round: 1,
            flags: DownFlags {
                retransmit: true,
                setup_request: false,
                load_request: true,
            },
            announce_round: 8,
            announce: Announce::Reservation,
            chunks: vec![DownChunk {
                conn_id: 5,
                ciphertext: vec![1, 2, 3],
            }],
        };
        assert_eq!(DownstreamMessage::decode(&full.encode()).unwrap(), full);
    }

    #[test]
    fn downstream_chunks_reach_only_their_owner() {
        type G = Ristretto;
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let base = G::base_pow(&G::scalar_random(&mut rng));
        let a = keygen::<G, _>(&mut rng);
        let b = keygen::<G, _>(&mut rng);
        let pseud = vec![a.public_for_base(&base), b.public_for_base(&base)];
        let mut q = DownQueues::new();
        q.push(10, 0, b"to a");
        q.push(20, 1, b"to b");
        let z = assemble_downstream::<G, _>(DownstreamMessage::minimal(0), &mut q, &pseud, &base, 4096, &mut rng);
        assert_eq!(z.chunks.len(), 2);
        assert!(q.is_empty());
        let got_a = open_downstream::<G>(&z, &a.private, |_| true);
        let got_b = open_downstream::<G>(&z, &b.private, |_| true);
        assert_eq!(got_a, vec![(10, frame_message(b"to a"))]);
        assert_eq!(got_b, vec![(20, frame_message(b"to b"))]);
    }

    #[test]
    fn oversize_downstream_is_fragmented_in_order() {
        type G = TestGroup;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let base = G::generator();
        let a = keygen::<G, _>(&mut rng);
        let pseud = vec![a.public];
        let mut q = DownQueues::new();
        let big: Vec<u8> = (0..3000u32).map(|i| (i * 7) as u8).collect();
        q.push(1, 0, &big);
        q.push(1, 0, b"tail");
        let cap = 512;
        let mut re = Reassembler::new();
        let mut got = Vec::new();
        let mut rounds = 0;
        while !q.is_empty() {
            let z = assemble_downstream::<G, _>(DownstreamMessage::minimal(rounds), &mut q, &pseud, &base, cap, &mut rng);
            assert!(z.encode().len() <= cap);
            for (conn, bytes) in open_downstream::<G>(&z, &a.private, |_| true) {
                got.extend(re.push(conn, &bytes).unwrap());
            }
            rounds += 1;
        }
        assert!(rounds > 1);
        assert_eq!(got, vec![big, b"tail".to_vec()]);
    }

    #[test]
    fn reassembly_cap() {
        let mut re = Reassembler::new();
        let huge = ((REASSEMBLY_CAP + 1) as u32).to_le_bytes();
        assert_eq!(re.push(1, &huge), Err(DcError::ReassemblyOverflow(1)));
    }

    proptest! {
        #[test]
        fn pads_cancel_with_zero_plaintext(seed in any::<u64>(), n in 2usize..6, m in 1usize..4, t in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let rows = matrix(n, m, &mut rng);
            let g: Vec<_> = (0..m).map(|j| Some(guard_cipher(&column(&rows, j), t, 48))).collect();
            let c: Vec<_> = (0..n).map(|i| Some(client_cipher(&rows[i], t, 48, None).unwrap())).collect();
            prop_assert_eq!(relay_combine(t, 48, &g, &c).unwrap(), vec![0u8; 48]);
        }

        #[test]
        fn combine_is_order_independent(seed in any::<u64>(), rot in 0usize..5) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let parts: Vec<Option<Vec<u8>>> = (0..5).map(|_| Some((0..32).map(|_| rng.gen()).collect())).collect();
            let mut rotated = parts.clone();
            rotated.rotate_left(rot);
            rotated.reverse();
            prop_assert_eq!(
                relay_combine::<Vec<u8>>(0, 32, &parts[..2], &parts[2..]).unwrap(),
                relay_combine::<Vec<u8>>(0, 32, &rotated[..3], &rotated[3..]).unwrap()
            );
        }

        #[test]
        fn downstream_roundtrip(round in any::<u64>(), ar in any::<u64>(), slot in any::<u32>(),
                                chunks in proptest::collection::vec((any::<u32>(), proptest::collection::vec(any::<u8>(), 0..40)), 0..4)) {
            let z = DownstreamMessage {
                round,
                flags: DownFlags::default(),
                announce_round: ar,
                announce: Announce::Slot(slot),
                chunks: chunks.into_iter().map(|(conn_id, ciphertext)| DownChunk { conn_id, ciphertext }).collect(),
            };
            prop_assert_eq!(DownstreamMessage::decode(&z.encode()).unwrap(), z);
        }

        #[test]
        fn cell_roundtrip(conn in any::<u32>(), payload in proptest::collection::vec(any::<u8>(), 0..80)) {
            let c = UpstreamCell::seal(b"key", conn, &payload);
            let enc = c.encode(128).unwrap();
            prop_assert_eq!(UpstreamCell::decode(&enc).unwrap(), Some(c.clone()));
            prop_assert!(c.verify(b"key"));
        }
    }
}
