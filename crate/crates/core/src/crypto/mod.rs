//! Primitive layer: group abstraction, key generation, KDF, PRG pads, HMAC,
//! Schnorr signatures, hashed-ElGamal public-key encryption and a
//! discrete-log-equality proof.
//!
//! All randomness is passed in by the caller.

mod group;
mod ristretto;
mod test_group;

pub use group::{Group, GroupParams};
pub use ristretto::Ristretto;
pub use test_group::{TestGroup, Zp, Zq};

pub mod test_params {
    pub use super::test_group::{F2_BITS, GENERATOR, MODULUS, ORDER};
}

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Security parameter in bytes (λ = 256).
pub const LAMBDA_BYTES: usize = 32;
pub const HASH_LEN: usize = 32;

pub type Digest32 = [u8; HASH_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("degenerate key: identity element")]
    DegenerateKey,
    #[error("private key must be nonzero")]
    ZeroKey,
    #[error("decryption failed")]
    DecryptFailed,
    #[error("input outside the embeddable range")]
    MapRange,
    #[error("malformed encoding")]
    Malformed,
}

pub fn sha256(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Hash-counter keystream: block `b` is `SHA-256(label ‖ key ‖ b)`.
pub fn keystream(label: &[u8], key: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + HASH_LEN);
    let mut block = 0u64;
    while out.len() < len {
        out.extend_from_slice(&sha256(&[label, key, &block.to_le_bytes()]));
        block += 1;
    }
    out.truncate(len);
    out
}

pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

pub fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = a.to_vec();
    xor_into(&mut out, b);
    out
}

/// Bit `k` of a byte string, most significant bit of byte 0 first.
pub fn bit_at(bytes: &[u8], k: usize) -> bool {
    (bytes[k / 8] >> (7 - (k % 8))) & 1 == 1
}

pub fn flip_bit(bytes: &mut [u8], k: usize) {
    bytes[k / 8] ^= 1 << (7 - (k % 8));
}

pub fn set_bit(bytes: &mut [u8], k: usize, v: bool) {
    if bit_at(bytes, k) != v {
        flip_bit(bytes, k);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeyPair<G: Group> {
    pub private: G::Scalar,
    pub public: G::Element,
}

impl<G: Group> PartialEq for KeyPair<G> {
    fn eq(&self, other: &Self) -> bool {
        self.private == other.private && self.public == other.public
    }
}

impl<G: Group> Eq for KeyPair<G> {}

impl<G: Group> KeyPair<G> {
    pub fn from_private(private: G::Scalar) -> Result<Self, CryptoError> {
        if G::scalar_is_zero(&private) {
            return Err(CryptoError::ZeroKey);
        }
        Ok(Self {
            private,
            public: G::base_pow(&private),
        })
    }

    /// Key pair relative to an arbitrary base, as used for blinded schedule
    /// pseudonyms.
    pub fn public_for_base(&self, base: &G::Element) -> G::Element {
        G::pow(base, &self.private)
    }
}

/// Private key uniform in `[1, q)`.
pub fn keygen<G: Group, R: RngCore + ?Sized>(rng: &mut R) -> KeyPair<G> {
    loop {
        if let Ok(kp) = KeyPair::from_private(G::scalar_random(rng)) {
            return kp;
        }
    }
}

/// λ-bit KDF from a group element.
pub fn kdf<G: Group>(element: &G::Element) -> Digest32 {
    sha256(&[b"lldc/kdf", &G::element_to_bytes(element)])
}

/// Seed shared between one client and one guard.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharedSecret {
    pub seed: Digest32,
}

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SharedSecret({}..)", hex::encode(&self.seed[..4]))
    }
}

/// Raw Diffie-Hellman element `peer^own`.
pub fn dh_element<G: Group>(
    own_private: &G::Scalar,
    peer_public: &G::Element,
) -> Result<G::Element, CryptoError> {
    if G::is_identity(peer_public) {
        return Err(CryptoError::DegenerateKey);
    }
    Ok(G::pow(peer_public, own_private))
}

pub fn dh_derive<G: Group>(
    own_private: &G::Scalar,
    peer_public: &G::Element,
) -> Result<SharedSecret, CryptoError> {
    let el = dh_element::<G>(own_private, peer_public)?;
    Ok(SharedSecret { seed: kdf::<G>(&el) })
}

/// ℓ-bit pseudorandom pad for one round.
#[derive(Clone, PartialEq, Eq)]
pub struct Pad {
    pub round: u64,
    pub bytes: Vec<u8>,
}

impl std::fmt::Debug for Pad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Pad(t={}, {} bytes)", self.round, self.bytes.len())
    }
}

impl Pad {
    pub fn bit(&self, k: usize) -> bool {
        bit_at(&self.bytes, k)
    }

    pub fn digest(&self) -> Digest32 {
        sha256(&[&self.bytes])
    }
}

fn pad_block(secret: &SharedSecret, round: u64, block: u64) -> Digest32 {
    sha256(&[&secret.seed, &round.to_le_bytes(), &block.to_le_bytes()])
}

/// Block `b` of the pad for round `t` is `SHA-256(seed ‖ t ‖ b)`.
pub fn prg_pad(secret: &SharedSecret, round: u64, len_bytes: usize) -> Pad {
    let mut bytes = Vec::with_capacity(len_bytes + HASH_LEN);
    let mut b = 0u64;
    while bytes.len() < len_bytes {
        bytes.extend_from_slice(&pad_block(secret, round, b));
        b += 1;
    }
    bytes.truncate(len_bytes);
    Pad { round, bytes }
}

/// Bit `k` of `prg_pad(secret, round, _)` without expanding the whole pad.
pub fn pad_bit(secret: &SharedSecret, round: u64, k: usize) -> bool {
    let bits_per_block = HASH_LEN * 8;
    let block = pad_block(secret, round, (k / bits_per_block) as u64);
    bit_at(&block, k % bits_per_block)
}

pub fn hmac_tag(key: &[u8], message: &[u8]) -> Digest32 {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

pub fn hmac_verify(key: &[u8], message: &[u8], tag: &[u8]) -> bool {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.verify_slice(tag).is_ok()
}

/// Schnorr signature `(c, s)` with deterministic nonces.
#[derive(Clone, Copy, Debug)]
pub struct Signature<G: Group> {
    pub challenge: G::Scalar,
    pub response: G::Scalar,
}

impl<G: Group> PartialEq for Signature<G> {
    fn eq(&self, other: &Self) -> bool {
        self.challenge == other.challenge && self.response == other.response
    }
}

impl<G: Group> Eq for Signature<G> {}

impl<G: Group> Signature<G> {
    pub const LEN: usize = 2 * G::SCALAR_LEN;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = G::scalar_to_bytes(&self.challenge);
        out.extend(G::scalar_to_bytes(&self.response));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::LEN {
            return None;
        }
        let (c, s) = bytes.split_at(G::SCALAR_LEN);
        Some(Self {
            challenge: G::scalar_from_bytes(c)?,
            response: G::scalar_from_bytes(s)?,
        })
    }
}

fn sig_challenge<G: Group>(commit: &G::Element, public: &G::Element, msg: &[u8]) -> G::Scalar {
    G::hash_to_scalar(
        b"lldc/sig",
        &[&G::element_to_bytes(commit), &G::element_to_bytes(public), msg],
    )
}

pub fn sign<G: Group>(private: &G::Scalar, message: &[u8]) -> Signature<G> {
    let public = G::base_pow(private);
    let mut nonce = G::hash_to_scalar(b"lldc/sig-nonce", &[&G::scalar_to_bytes(private), message]);
    if G::scalar_is_zero(&nonce) {
        nonce = G::scalar_one();
    }
    let commit = G::base_pow(&nonce);
    let challenge = sig_challenge::<G>(&commit, &public, message);
    // s = k - c·x
    let response = G::scalar_sub(&nonce, &G::scalar_mul(&challenge, private));
    Signature {
        challenge,
        response,
    }
}

pub fn verify<G: Group>(public: &G::Element, message: &[u8], sig: &Signature<G>) -> bool {
    let commit = G::op(&G::base_pow(&sig.response), &G::pow(public, &sig.challenge));
    sig_challenge::<G>(&commit, public, message) == sig.challenge
}

/// Verifies an encoded signature; malformed bytes verify false.
pub fn verify_bytes<G: Group>(public: &G::Element, message: &[u8], sig: &[u8]) -> bool {
    Signature::<G>::from_bytes(sig).is_some_and(|s| verify::<G>(public, message, &s))
}

const PKE_TAG: usize = 32;

fn pke_keys<G: Group>(ephemeral: &G::Element, shared: &G::Element) -> (Digest32, Digest32) {
    let e = G::element_to_bytes(ephemeral);
    let s = G::element_to_bytes(shared);
    (
        sha256(&[b"lldc/pke-enc", &e, &s]),
        sha256(&[b"lldc/pke-mac", &e, &s]),
    )
}

/// Hashed ElGamal with encrypt-then-MAC, relative to the standard generator.
pub fn pke_encrypt<G: Group, R: RngCore + ?Sized>(
    public: &G::Element,
    plaintext: &[u8],
    rng: &mut R,
) -> Vec<u8> {
    pke_encrypt_with_base::<G, R>(&G::generator(), public, plaintext, rng)
}

/// Encryption to a key `public = base^x`; the holder of `x` decrypts with
/// [`pke_decrypt`] whatever the base.
pub fn pke_encrypt_with_base<G: Group, R: RngCore + ?Sized>(
    base: &G::Element,
    public: &G::Element,
    plaintext: &[u8],
    rng: &mut R,
) -> Vec<u8> {
    let mut r = G::scalar_random(rng);
    while G::scalar_is_zero(&r) {
        r = G::scalar_random(rng);
    }
    let ephemeral = G::pow(base, &r);
    let shared = G::pow(public, &r);
    let (enc_key, mac_key) = pke_keys::<G>(&ephemeral, &shared);
    let mut out = G::element_to_bytes(&ephemeral);
    let body_start = out.len();
    out.extend(xor(plaintext, &keystream(b"lldc/pke-stream", &enc_key, plaintext.len())));
    let tag = hmac_tag(&mac_key, &out[body_start..]);
    out.extend_from_slice(&tag);
    out
}

pub fn pke_decrypt<G: Group>(private: &G::Scalar, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < G::ELEMENT_LEN + PKE_TAG {
        return Err(CryptoError::DecryptFailed);
    }
    let (head, rest) = ciphertext.split_at(G::ELEMENT_LEN);
    let (body, tag) = rest.split_at(rest.len() - PKE_TAG);
    let ephemeral = G::element_from_bytes(head).ok_or(CryptoError::DecryptFailed)?;
    let shared = G::pow(&ephemeral, private);
    let (enc_key, mac_key) = pke_keys::<G>(&ephemeral, &shared);
    if !hmac_verify(&mac_key, body, tag) {
        return Err(CryptoError::DecryptFailed);
    }
    Ok(xor(body, &keystream(b"lldc/pke-stream", &enc_key, body.len())))
}

pub fn pke_overhead<G: Group>() -> usize {
    G::ELEMENT_LEN + PKE_TAG
}

/// Chaum-Pedersen proof that `log_g(public) = log_base(dh)`.
#[derive(Debug, Clone, Copy)]
pub struct DleqProof<G: Group> {
    pub challenge: G::Scalar,
    pub response: G::Scalar,
}

fn dleq_challenge<G: Group>(
    public: &G::Element,
    base: &G::Element,
    dh: &G::Element,
    t1: &G::Element,
    t2: &G::Element,
) -> G::Scalar {
    G::hash_to_scalar(
        b"lldc/dleq",
        &[
            &G::element_to_bytes(public),
            &G::element_to_bytes(base),
            &G::element_to_bytes(dh),
            &G::element_to_bytes(t1),
            &G::element_to_bytes(t2),
        ],
    )
}

/// Proves that `dh = base^x` for the `x` behind `public = g^x`.
pub fn dleq_prove<G: Group, R: RngCore + ?Sized>(
    private: &G::Scalar,
    base: &G::Element,
    rng: &mut R,
) -> (G::Element, DleqProof<G>) {
    let public = G::base_pow(private);
    let dh = G::pow(base, private);
    let w = G::scalar_random(rng);
    let t1 = G::base_pow(&w);
    let t2 = G::pow(base, &w);
    let challenge = dleq_challenge::<G>(&public, base, &dh, &t1, &t2);
    let response = G::scalar_sub(&w, &G::scalar_mul(&challenge, private));
    (dh, DleqProof { challenge, response })
}

pub fn dleq_verify<G: Group>(
    public: &G::Element,
    base: &G::Element,
    dh: &G::Element,
    proof: &DleqProof<G>,
) -> bool {
    let t1 = G::op(&G::base_pow(&proof.response), &G::pow(public, &proof.challenge));
    let t2 = G::op(&G::pow(base, &proof.response), &G::pow(dh, &proof.challenge));
    dleq_challenge::<G>(public, base, dh, &t1, &t2) == proof.challenge
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Exponentiation by repeated multiplication.
    fn brute_pow(base: Zp, e: u32) -> Zp {
        let mut acc = TestGroup::identity();
        for _ in 0..e {
            acc = TestGroup::op(&acc, &base);
        }
        acc
    }

    #[test]
    fn test_group_generator_has_prime_order() {
        let g = TestGroup::generator();
        let mut acc = g;
        let mut order = 1;
        while acc != TestGroup::identity() {
            acc = TestGroup::op(&acc, &g);
            order += 1;
        }
        assert_eq!(order, test_params::ORDER);
        // 101 is prime
        assert!((2..101).all(|d| 101 % d != 0));
        assert_eq!((test_params::MODULUS - 1) % test_params::ORDER, 0);
        let members = (1..test_params::MODULUS).filter(|v| TestGroup::is_member(*v)).count();
        assert_eq!(members as u32, test_params::ORDER);
    }

    #[test]
    fn keygen_identity_exponent() {
        let kp = KeyPair::<TestGroup>::from_private(Zq(1)).unwrap();
        assert_eq!(kp.public, TestGroup::generator());
        assert_eq!(KeyPair::<TestGroup>::from_private(Zq(0)), Err(CryptoError::ZeroKey));
    }

    #[test]
    fn keygen_never_zero_and_matches_brute_force() {
        let mut r = rng(7);
        for _ in 0..2000 {
            let kp = keygen::<TestGroup, _>(&mut r);
            assert_ne!(kp.private.0, 0);
            assert_eq!(kp.public, brute_pow(TestGroup::generator(), kp.private.0 as u32));
        }
        let a = keygen::<TestGroup, _>(&mut rng(99));
        let b = keygen::<TestGroup, _>(&mut rng(99));
        assert_eq!(a, b);
    }

    #[test]
    fn dh_symmetry_and_degenerate() {
        let mut r = rng(1);
        let a = keygen::<Ristretto, _>(&mut r);
        let b = keygen::<Ristretto, _>(&mut r);
        assert_eq!(
            dh_derive::<Ristretto>(&a.private, &b.public).unwrap(),
            dh_derive::<Ristretto>(&b.private, &a.public).unwrap()
        );
        assert_eq!(
            dh_derive::<Ristretto>(&a.private, &Ristretto::identity()),
            Err(CryptoError::DegenerateKey)
        );
        assert_eq!(
            dh_derive::<TestGroup>(&Zq(3), &TestGroup::identity()),
            Err(CryptoError::DegenerateKey)
        );
    }

    #[test]
    fn dh_test_group_against_exhaustive_exponent() {
        let a = KeyPair::<TestGroup>::from_private(Zq(3)).unwrap();
        let b = KeyPair::<TestGroup>::from_private(Zq(5)).unwrap();
        let expected = SharedSecret {
            seed: kdf::<TestGroup>(&brute_pow(TestGroup::generator(), 15)),
        };
        assert_eq!(dh_derive::<TestGroup>(&a.private, &b.public).unwrap(), expected);
        assert_eq!(dh_derive::<TestGroup>(&b.private, &a.public).unwrap(), expected);
    }

    #[test]
    fn pads_are_deterministic_and_bit_addressable() {
        let s = SharedSecret { seed: [9u8; 32] };
        let p = prg_pad(&s, 4, 1024);
        assert_eq!(p, prg_pad(&s, 4, 1024));
        assert_ne!(p.bytes, prg_pad(&s, 5, 1024).bytes);
        for k in 0..1024 * 8 {
            assert_eq!(pad_bit(&s, 4, k), p.bit(k), "bit {k}");
        }
        // truncation is a prefix
        assert_eq!(prg_pad(&s, 4, 40).bytes, p.bytes[..40]);
    }

    #[test]
    fn bit_numbering_is_msb_first() {
        let mut v = vec![0u8; 2];
        flip_bit(&mut v, 1);
        assert_eq!(v, [0x40, 0]);
        flip_bit(&mut v, 15);
        assert_eq!(v, [0x40, 0x01]);
        assert!(bit_at(&v, 1) && bit_at(&v, 15) && !bit_at(&v, 0));
    }

    #[test]
    fn schnorr_roundtrip_and_rejections() {
        let mut r = rng(3);
        let kp = keygen::<Ristretto, _>(&mut r);
        let other = keygen::<Ristretto, _>(&mut r);
        let msg = b"round 17, bit 4".to_vec();
        let sig = sign::<Ristretto>(&kp.private, &msg);
        assert!(verify::<Ristretto>(&kp.public, &msg, &sig));
        let mut bad = msg.clone();
        bad[0] ^= 1;
        assert!(!verify::<Ristretto>(&kp.public, &bad, &sig));
        assert!(!verify::<Ristretto>(&other.public, &msg, &sig));
        assert!(verify_bytes::<Ristretto>(&kp.public, &msg, &sig.to_bytes()));
        assert!(!verify_bytes::<Ristretto>(&kp.public, &msg, &[0u8; 3]));
        let mut garbled = sig.to_bytes();
        garbled[5] ^= 0x10;
        assert!(!verify_bytes::<Ristretto>(&kp.public, &msg, &garbled));
    }

    #[test]
    fn schnorr_works_in_test_group() {
        let kp = KeyPair::<TestGroup>::from_private(Zq(42)).unwrap();
        let sig = sign::<TestGroup>(&kp.private, b"hello");
        assert!(verify::<TestGroup>(&kp.public, b"hello", &sig));
    }

    #[test]
    fn pke_roundtrip() {
        let mut r = rng(5);
        let kp = keygen::<Ristretto, _>(&mut r);
        let other = keygen::<Ristretto, _>(&mut r);
        let mut msg = vec![0u8; 1024];
        r.fill_bytes(&mut msg);
        let ct = pke_encrypt::<Ristretto, _>(&kp.public, &msg, &mut r);
        assert_eq!(ct.len(), msg.len() + pke_overhead::<Ristretto>());
        assert_eq!(pke_decrypt::<Ristretto>(&kp.private, &ct).unwrap(), msg);
        assert_eq!(
            pke_decrypt::<Ristretto>(&other.private, &ct),
            Err(CryptoError::DecryptFailed)
        );
        let empty = pke_encrypt::<Ristretto, _>(&kp.public, &[], &mut r);
        assert_eq!(pke_decrypt::<Ristretto>(&kp.private, &empty).unwrap(), Vec::<u8>::new());
        assert!(pke_decrypt::<Ristretto>(&kp.private, &ct[..10]).is_err());
    }

    #[test]
    fn pke_with_blinded_base() {
        let mut r = rng(6);
        let kp = keygen::<Ristretto, _>(&mut r);
        let blind = Ristretto::scalar_random(&mut r);
        let base = Ristretto::base_pow(&blind);
        let pseudonym = kp.public_for_base(&base);
        let ct = pke_encrypt_with_base::<Ristretto, _>(&base, &pseudonym, b"slot secret", &mut r);
        assert_eq!(pke_decrypt::<Ristretto>(&kp.private, &ct).unwrap(), b"slot secret");
    }

    #[test]
    fn dleq_accepts_honest_and_rejects_forged() {
        let mut r = rng(8);
        let a = keygen::<Ristretto, _>(&mut r);
        let b = keygen::<Ristretto, _>(&mut r);
        let (dh, proof) = dleq_prove::<Ristretto, _>(&a.private, &b.public, &mut r);
        assert_eq!(dh, Ristretto::pow(&b.public, &a.private));
        assert!(dleq_verify::<Ristretto>(&a.public, &b.public, &dh, &proof));
        let wrong = Ristretto::op(&dh, &Ristretto::generator());
        assert!(!dleq_verify::<Ristretto>(&a.public, &b.public, &wrong, &proof));
        assert!(!dleq_verify::<Ristretto>(&b.public, &b.public, &dh, &proof));
    }

    #[test]
    fn f1_test_group_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for v in 0..test_params::ORDER as u8 {
            let e = TestGroup::f1_map(&[v]).unwrap();
            assert!(seen.insert(e));
            assert_eq!(TestGroup::f1_inv(&e).unwrap(), vec![v]);
        }
        assert_eq!(seen.len() as u32, test_params::ORDER);
        assert_eq!(TestGroup::f1_map(&[101]), Err(CryptoError::MapRange));
        assert_eq!(TestGroup::f1_map(&[1, 2]), Err(CryptoError::MapRange));
    }

    #[test]
    fn f2_test_group_injective_on_truncated_domain() {
        let values: std::collections::HashSet<_> =
            (0..1u16 << test_params::F2_BITS).map(|v| TestGroup::f2_map(&[v as u8])).collect();
        assert_eq!(values.len(), 64);
        // bits above the truncation width are ignored
        assert_eq!(TestGroup::f2_map(&[0xc5]), TestGroup::f2_map(&[0x05]));
    }

    #[test]
    fn f1_ristretto_roundtrip_and_injective() {
        let mut r = rng(11);
        let mut seen = Vec::new();
        for _ in 0..100 {
            let mut data = vec![0u8; Ristretto::EMBED_LEN];
            r.fill_bytes(&mut data);
            let p = Ristretto::f1_map(&data).unwrap();
            assert_eq!(Ristretto::f1_inv(&p).unwrap(), data);
            assert!(!seen.contains(&p));
            seen.push(p);
        }
        assert_eq!(Ristretto::f1_map(&[0u8; 5]), Err(CryptoError::MapRange));
        // a random point is essentially never in the image
        let stray = Ristretto::base_pow(&Ristretto::scalar_random(&mut r));
        assert_eq!(Ristretto::f1_inv(&stray), Err(CryptoError::MapRange));
    }

    #[test]
    fn f2_ristretto_deterministic_and_distinct() {
        let a = Ristretto::f2_map(&[1u8; 32]);
        assert_eq!(a, Ristretto::f2_map(&[1u8; 32]));
        assert_ne!(a, Ristretto::f2_map(&[2u8; 32]));
    }

    #[test]
    fn element_encoding_rejects_non_members() {
        assert!(TestGroup::element_from_bytes(&2u16.to_le_bytes()).is_none());
        assert!(TestGroup::element_from_bytes(&64u16.to_le_bytes()).is_some());
        let g = Ristretto::generator();
        assert_eq!(Ristretto::element_from_bytes(&Ristretto::element_to_bytes(&g)), Some(g));
    }
}
