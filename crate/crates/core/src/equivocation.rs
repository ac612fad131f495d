//! Downstream history binding and key blinding against equivocation.
//!
//! The owner blinds its cell with a fresh key `k` and hides `F1(k)` in its
//! tag. Every client raises `F1(h)` to the sum of its pad hashes, guards
//! publish the negated sums, and the relay can only rebuild `F1(k)` if every
//! client used the same history `h` as the relay.

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{keystream, sha256, CryptoError, Digest32, Group, Pad, HASH_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EquivocationError {
    #[error("recovered key is outside the embedding range")]
    HistoryMismatch,
    #[error("missing tag from {0}")]
    MissingTag(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Running hash over every downstream message seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DownstreamHistory {
    pub digest: Digest32,
    pub length: u64,
}

impl Default for DownstreamHistory {
    fn default() -> Self {
        Self::new()
    }
}

impl DownstreamHistory {
    pub fn new() -> Self {
        Self {
            digest: [0; HASH_LEN],
            length: 0,
        }
    }

    pub fn absorb(&mut self, z: &[u8]) {
        self.digest = sha256(&[&self.digest, z]);
        self.length += 1;
    }

    pub fn updated(mut self, z: &[u8]) -> Self {
        self.absorb(z);
        self
    }

    pub fn element<G: Group>(&self) -> G::Element {
        G::f1_map(&G::f1_domain_from_digest(&self.digest)).expect("projection lands in the F1 domain")
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EquivocationTag<G: Group> {
    Client(G::Element),
    Guard(G::Scalar),
}

impl<G: Group> PartialEq for EquivocationTag<G> {
    fn eq(&self, o: &Self) -> bool {
        match (self, o) {
            (Self::Client(a), Self::Client(b)) => a == b,
            (Self::Guard(a), Self::Guard(b)) => a == b,
            _ => false,
        }
    }
}

impl<G: Group> EquivocationTag<G> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, body) = match self {
            Self::Client(e) => (0u8, G::element_to_bytes(e)),
            Self::Guard(s) => (1u8, G::scalar_to_bytes(s)),
        };
        let mut out = vec![kind];
        out.extend(body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (kind, body) = bytes.split_first()?;
        match kind {
            0 => G::element_from_bytes(body).map(Self::Client),
            1 => G::scalar_from_bytes(body).map(Self::Guard),
            _ => None,
        }
    }

    pub fn as_client(&self) -> Option<&G::Element> {
        match self {
            Self::Client(e) => Some(e),
            Self::Guard(_) => None,
        }
    }

    pub fn as_guard(&self) -> Option<&G::Scalar> {
        match self {
            Self::Guard(s) => Some(s),
            Self::Client(_) => None,
        }
    }
}

/// Owner's per-round key: an element of the F1 domain.
#[derive(Clone, PartialEq, Eq)]
pub struct BlindingKey(pub Vec<u8>);

impl std::fmt::Debug for BlindingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BlindingKey({} bytes)", self.0.len())
    }
}

impl BlindingKey {
    pub fn random<G: Group, R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut d = [0u8; 32];
        rng.fill_bytes(&mut d);
        Self(G::f1_domain_from_digest(&d))
    }

    pub fn element<G: Group>(&self) -> Result<G::Element, CryptoError> {
        G::f1_map(&self.0)
    }

    /// `k ‖ PRG(k)`, truncated to `len`. Leading with `k` lets the relay read
    /// a candidate key back out of an unaltered round during blame.
    pub fn stream(&self, len: usize) -> Vec<u8> {
        let mut out = self.0.clone();
        out.extend(keystream(b"lldc/blind", &self.0, len.saturating_sub(self.0.len())));
        out.truncate(len);
        out
    }

    /// Reads the key prefix of `stream` and checks the remainder.
    pub fn from_stream<G: Group>(stream: &[u8]) -> Option<Self> {
        let k = Self(stream.get(..G::EMBED_LEN)?.to_vec());
        G::f1_map(&k.0).ok()?;
        (k.stream(stream.len()) == stream).then_some(k)
    }
}

#[derive(Debug, Clone)]
pub struct BlindedCell {
    pub x_prime: Vec<u8>,
    pub key: BlindingKey,
}

pub fn owner_blind<G: Group, R: RngCore + ?Sized>(x: &[u8], rng: &mut R) -> BlindedCell {
    owner_blind_with(x, BlindingKey::random::<G, R>(rng))
}

pub fn owner_blind_with(x: &[u8], key: BlindingKey) -> BlindedCell {
    let s = key.stream(x.len());
    BlindedCell {
        x_prime: x.iter().zip(&s).map(|(a, b)| a ^ b).collect(),
        key,
    }
}

pub fn unblind(x_prime: &[u8], key: &BlindingKey) -> Vec<u8> {
    let s = key.stream(x_prime.len());
    x_prime.iter().zip(&s).map(|(a, b)| a ^ b).collect()
}

pub fn pad_hashes(pads: &[Pad]) -> Vec<Digest32> {
    pads.iter().map(Pad::digest).collect()
}

/// `Σ F2(H(p))` over the given pad hashes.
pub fn hash_exponent<G: Group>(hashes: &[Digest32]) -> G::Scalar {
    hashes
        .iter()
        .fold(G::scalar_zero(), |acc, h| G::scalar_add(&acc, &G::f2_map(h)))
}

/// Client tag from its pad hashes: `F1(h)^e`, times `F1(k)` for the owner.
pub fn client_tag_from_hashes<G: Group>(
    hashes: &[Digest32],
    history: &DownstreamHistory,
    owner_key: Option<&BlindingKey>,
) -> Result<G::Element, CryptoError> {
    let base = G::pow(&history.element::<G>(), &hash_exponent::<G>(hashes));
    match owner_key {
        Some(k) => Ok(G::op(&k.element::<G>()?, &base)),
        None => Ok(base),
    }
}

pub fn client_tag<G: Group>(
    pads: &[Pad],
    history: &DownstreamHistory,
    owner_key: Option<&BlindingKey>,
) -> Result<G::Element, CryptoError> {
    client_tag_from_hashes::<G>(&pad_hashes(pads), history, owner_key)
}

pub fn guard_tag_from_hashes<G: Group>(hashes: &[Digest32]) -> G::Scalar {
    G::scalar_neg(&hash_exponent::<G>(hashes))
}

/// `σ = −Σ_i F2(H(p_i))`.
pub fn guard_tag<G: Group>(pads: &[Pad]) -> G::Scalar {
    guard_tag_from_hashes::<G>(&pad_hashes(pads))
}

/// `K = F1(h_R)^{Σσ} · Πκ`, before inversion.
pub fn combine_tags<G: Group>(
    history: &DownstreamHistory,
    sigmas: &[G::Scalar],
    kappas: &[G::Element],
) -> G::Element {
    let s = sigmas
        .iter()
        .fold(G::scalar_zero(), |acc, x| G::scalar_add(&acc, x));
    kappas
        .iter()
        .fold(G::pow(&history.element::<G>(), &s), |acc, k| G::op(&acc, k))
}

/// `F1⁻¹(K)`. With diverged histories this is some other key (or fails to
/// invert), and the cell tag check downstream catches it.
pub fn relay_recover_key<G: Group>(
    history: &DownstreamHistory,
    sigmas: &[G::Scalar],
    kappas: &[G::Element],
) -> Result<BlindingKey, EquivocationError> {
    let k = combine_tags::<G>(history, sigmas, kappas);
    G::f1_inv(&k)
        .map(BlindingKey)
        .map_err(|_| EquivocationError::HistoryMismatch)
}

/// Downstream history as seen by a round under pipelining: round `t` uses the
/// digest after absorbing every downstream message answering rounds `< t - w + 1`.
#[derive(Debug, Clone, Default)]
pub struct HistoryLog {
    snapshots: Vec<DownstreamHistory>,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self {
            snapshots: vec![DownstreamHistory::new()],
        }
    }

    pub fn current(&self) -> DownstreamHistory {
        *self.snapshots.last().expect("never empty")
    }

    pub fn absorb(&mut self, z: &[u8]) {
        let next = self.current().updated(z);
        self.snapshots.push(next);
    }

    /// History after `count` absorbed messages, clamped to what was seen.
    pub fn after(&self, count: u64) -> DownstreamHistory {
        let i = (count as usize).min(self.snapshots.len() - 1);
        self.snapshots[i]
    }

    pub fn len(&self) -> u64 {
        self.snapshots.len() as u64 - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{prg_pad, test_params, Ristretto, SharedSecret, TestGroup, Zp, Zq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    type T = TestGroup;

    fn pow_by_multiplication(base: Zp, e: u16) -> Zp {
        let mut acc = 1u32;
        for _ in 0..e {
            acc = acc * base.0 as u32 % test_params::MODULUS;
        }
        Zp(acc as u16)
    }

    fn pads(rng: &mut ChaCha20Rng, count: usize, round: u64) -> Vec<Pad> {
        (0..count)
            .map(|_| prg_pad(&SharedSecret { seed: rng.gen() }, round, 64))
            .collect()
    }

    #[test]
    fn history_recurrence() {
        let h = DownstreamHistory::new().updated(b"");
        assert_eq!(h.digest, sha256(&[&[0u8; 32], b""]));
        assert_eq!(h.length, 1);
        let a = DownstreamHistory::new().updated(b"z1").updated(b"z2");
        let b = DownstreamHistory::new().updated(b"z1").updated(b"z2");
        let c = DownstreamHistory::new().updated(b"z1").updated(b"z3");
        assert_eq!(a, b);
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn blinding_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let zero = vec![0u8; 40];
        let b = owner_blind::<Ristretto, _>(&zero, &mut rng);
        assert_eq!(b.x_prime, b.key.stream(40));
        let id = owner_blind_with(b"abc", BlindingKey(vec![0; 28]));
        assert_eq!(&id.x_prime[..3], &[b'a', b'b', b'c'][..]);
        let x: Vec<u8> = (0..100).map(|_| rng.gen()).collect();
        let b = owner_blind::<Ristretto, _>(&x, &mut rng);
        assert_eq!(unblind(&b.x_prime, &b.key), x);
    }

    #[test]
    fn stream_prefix_recovers_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let k = BlindingKey::random::<Ristretto, _>(&mut rng);
        let s = k.stream(200);
        assert_eq!(BlindingKey::from_stream::<Ristretto>(&s), Some(k.clone()));
        let mut bad = s.clone();
        bad[150] ^= 1;
        assert_eq!(BlindingKey::from_stream::<Ristretto>(&bad), None);
    }

    #[test]
    fn client_tag_matches_exhaustive_exponent() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p = pads(&mut rng, 1, 0);
        let h = DownstreamHistory::new().updated(b"z");
        let e = (p[0].digest()[0] & 0x3f) as u16;
        let hb = T::f1_map(&T::f1_domain_from_digest(&h.digest)).unwrap();
        assert_eq!(client_tag::<T>(&p, &h, None).unwrap(), pow_by_multiplication(hb, e));
    }

    #[test]
    fn zero_exponent_gives_identity() {
        // F2 values 40 + 61 = 101 ≡ 0
        let hashes = [[40u8; 32], [61u8; 32]];
        let h = DownstreamHistory::new().updated(b"q");
        assert_eq!(client_tag_from_hashes::<T>(&hashes, &h, None).unwrap(), T::identity());
    }

    #[test]
    fn owner_tag_with_generator_key() {
        // F1(1) = g in the test group
        let k = BlindingKey(vec![1]);
        let hashes = [[7u8; 32]];
        let h = DownstreamHistory::new();
        let plain = client_tag_from_hashes::<T>(&hashes, &h, None).unwrap();
        let owner = client_tag_from_hashes::<T>(&hashes, &h, Some(&k)).unwrap();
        assert_eq!(owner, T::op(&T::generator(), &plain));
    }

    #[test]
    fn guard_tag_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = pads(&mut rng, 1, 0);
        assert_eq!(guard_tag::<T>(&p), T::scalar_neg(&T::f2_map(&p[0].digest())));
        let same = [[9u8; 32], [9u8; 32]];
        assert_eq!(guard_tag_from_hashes::<T>(&same), Zq(101 - 18));
        let p3 = pads(&mut rng, 3, 5);
        let sum: u32 = p3.iter().map(|p| (p.digest()[0] & 0x3f) as u32).sum();
        assert_eq!(guard_tag::<T>(&p3), Zq(((101 - sum % 101) % 101) as u16));
    }

    /// Round with `n` clients and `m` guards; `histories[i]` is client i's view.
    fn recover(
        rng: &mut ChaCha20Rng,
        n: usize,
        m: usize,
        owner: usize,
        relay: &DownstreamHistory,
        histories: &[DownstreamHistory],
    ) -> (BlindingKey, Result<BlindingKey, EquivocationError>) {
        let secrets: Vec<Vec<SharedSecret>> = (0..n)
            .map(|_| (0..m).map(|_| SharedSecret { seed: rng.gen() }).collect())
            .collect();
        let k = BlindingKey::random::<T, _>(rng);
        let kappas: Vec<_> = (0..n)
            .map(|i| {
                let p: Vec<_> = secrets[i].iter().map(|s| prg_pad(s, 0, 32)).collect();
                client_tag::<T>(&p, &histories[i], (i == owner).then_some(&k)).unwrap()
            })
            .collect();
        let sigmas: Vec<_> = (0..m)
            .map(|j| {
                let p: Vec<_> = secrets.iter().map(|r| prg_pad(&r[j], 0, 32)).collect();
                guard_tag::<T>(&p)
            })
            .collect();
        (k, relay_recover_key::<T>(relay, &sigmas, &kappas))
    }

    #[test]
    fn equal_histories_recover_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let h = DownstreamHistory::new().updated(b"a");
        let (k, got) = recover(&mut rng, 2, 1, 0, &h, &[h, h]);
        assert_eq!(got.unwrap(), k);
    }

    #[test]
    fn diverged_client_breaks_recovery() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let h = DownstreamHistory::new().updated(b"a");
        let other = DownstreamHistory::new().updated(b"b");
        assert_ne!(h.element::<T>(), other.element::<T>());
        let (k, got) = recover(&mut rng, 3, 2, 1, &h, &[h, h, other]);
        assert_ne!(got.ok(), Some(k));
        // relay tracked the wrong history while clients agree
        let (k, got) = recover(&mut rng, 3, 2, 1, &other, &[h, h, h]);
        assert_ne!(got.ok(), Some(k));
    }

    #[test]
    fn ristretto_recovery() {
        type R = Ristretto;
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let secrets: Vec<Vec<SharedSecret>> = (0..3)
            .map(|_| (0..2).map(|_| SharedSecret { seed: rng.gen() }).collect())
            .collect();
        let h = DownstreamHistory::new().updated(b"z0");
        let k = BlindingKey::random::<R, _>(&mut rng);
        let kappas: Vec<_> = (0..3)
            .map(|i| {
                let p: Vec<_> = secrets[i].iter().map(|s| prg_pad(s, 4, 32)).collect();
                client_tag::<R>(&p, &h, (i == 2).then_some(&k)).unwrap()
            })
            .collect();
        let sigmas: Vec<_> = (0..2)
            .map(|j| guard_tag::<R>(&secrets.iter().map(|r| prg_pad(&r[j], 4, 32)).collect::<Vec<_>>()))
            .collect();
        assert_eq!(relay_recover_key::<R>(&h, &sigmas, &kappas).unwrap(), k);
    }

    #[test]
    fn history_log_snapshots() {
        let mut log = HistoryLog::new();
        log.absorb(b"a");
        log.absorb(b"b");
        assert_eq!(log.after(0), DownstreamHistory::new());
        assert_eq!(log.after(1), DownstreamHistory::new().updated(b"a"));
        assert_eq!(log.after(9), log.current());
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn tag_codec() {
        let c = EquivocationTag::<T>::Client(T::generator());
        let g = EquivocationTag::<T>::Guard(Zq(5));
        assert_eq!(EquivocationTag::<T>::from_bytes(&c.to_bytes()), Some(c));
        assert_eq!(EquivocationTag::<T>::from_bytes(&g.to_bytes()), Some(g));
        assert_eq!(EquivocationTag::<T>::from_bytes(&[0, 0, 0]), None);
    }

    proptest! {
        #[test]
        fn exponents_cancel(seed in any::<u64>(), n in 1usize..6, m in 1usize..4, t in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let secrets: Vec<Vec<SharedSecret>> = (0..n)
                .map(|_| (0..m).map(|_| SharedSecret { seed: rng.gen() }).collect())
                .collect();
            let mut total = T::scalar_zero();
            for row in &secrets {
                let p: Vec<_> = row.iter().map(|s| prg_pad(s, t, 16)).collect();
                total = T::scalar_add(&total, &hash_exponent::<T>(&pad_hashes(&p)));
            }
            for j in 0..m {
                let p: Vec<_> = secrets.iter().map(|r| prg_pad(&r[j], t, 16)).collect();
                total = T::scalar_add(&total, &guard_tag::<T>(&p));
            }
            prop_assert_eq!(total, T::scalar_zero());
        }

        #[test]
        fn recovery_sound_for_equal_histories(seed in any::<u64>(), n in 2usize..5, owner_pick in any::<usize>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let h = DownstreamHistory::new().updated(&seed.to_le_bytes());
            let owner = owner_pick % n;
            let (k, got) = recover(&mut rng, n, 2, owner, &h, &vec![h; n]);
            prop_assert_eq!(got.unwrap(), k);
        }
    }
}
