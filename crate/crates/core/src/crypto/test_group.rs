//! Order-101 subgroup of `Z_607^*`.
//!
//! 607 = 6 * 101 + 1, and `2^6 = 64` generates the subgroup of order 101.
//! Small enough that every discrete logarithm is found by enumeration, which
//! is what the test suites rely on. Offers no security whatsoever.

use rand::{Rng, RngCore};

use super::group::{Group, GroupParams};
use super::CryptoError;

pub const MODULUS: u32 = 607;
pub const ORDER: u32 = 101;
pub const GENERATOR: u32 = 64;
/// Bits of F2 input kept after truncation: `2^6 = 64 < 101`.
pub const F2_BITS: u32 = 6;

/// Scalar modulo 101.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Zq(pub u16);

/// Subgroup element, stored as its residue modulo 607.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Zp(pub u16);

#[derive(Debug, Clone, Copy, Default)]
pub struct TestGroup;

fn mulmod(a: u32, b: u32) -> u32 {
    (a * b) % MODULUS
}

fn powmod(mut base: u32, mut e: u32) -> u32 {
    let mut acc = 1;
    base %= MODULUS;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod(acc, base);
        }
        base = mulmod(base, base);
        e >>= 1;
    }
    acc
}

impl TestGroup {
    /// Discrete logarithm base the generator, by enumeration.
    pub fn dlog(e: &Zp) -> Option<Zq> {
        let mut acc = 1u32;
        for x in 0..ORDER {
            if acc == e.0 as u32 {
                return Some(Zq(x as u16));
            }
            acc = mulmod(acc, GENERATOR);
        }
        None
    }

    pub fn is_member(v: u32) -> bool {
        v != 0 && v < MODULUS && powmod(v, ORDER) == 1
    }

    /// All subgroup elements, in exponent order `g^0 .. g^100`.
    pub fn elements() -> Vec<Zp> {
        let mut out = Vec::with_capacity(ORDER as usize);
        let mut acc = 1u32;
        for _ in 0..ORDER {
            out.push(Zp(acc as u16));
            acc = mulmod(acc, GENERATOR);
        }
        out
    }
}

impl Group for TestGroup {
    type Scalar = Zq;
    type Element = Zp;

    const ID: &'static str = "test101";
    const ELEMENT_LEN: usize = 2;
    const SCALAR_LEN: usize = 1;
    const EMBED_LEN: usize = 1;

    fn params() -> GroupParams {
        GroupParams {
            group_id: Self::ID,
            order_q: format!("{ORDER:x}"),
            generator: format!("{GENERATOR}"),
        }
    }

    fn generator() -> Zp {
        Zp(GENERATOR as u16)
    }

    fn identity() -> Zp {
        Zp(1)
    }

    fn op(a: &Zp, b: &Zp) -> Zp {
        Zp(mulmod(a.0 as u32, b.0 as u32) as u16)
    }

    fn pow(base: &Zp, e: &Zq) -> Zp {
        Zp(powmod(base.0 as u32, e.0 as u32) as u16)
    }

    fn invert(a: &Zp) -> Zp {
        // a^(q-1) = a^-1 inside the order-q subgroup
        Zp(powmod(a.0 as u32, ORDER - 1) as u16)
    }

    fn scalar_from_u64(v: u64) -> Zq {
        Zq((v % ORDER as u64) as u16)
    }

    fn scalar_add(a: &Zq, b: &Zq) -> Zq {
        Zq(((a.0 as u32 + b.0 as u32) % ORDER) as u16)
    }

    fn scalar_mul(a: &Zq, b: &Zq) -> Zq {
        Zq(((a.0 as u32 * b.0 as u32) % ORDER) as u16)
    }

    fn scalar_neg(a: &Zq) -> Zq {
        Zq(((ORDER - a.0 as u32) % ORDER) as u16)
    }

    fn scalar_invert(a: &Zq) -> Option<Zq> {
        if a.0 == 0 {
            return None;
        }
        let mut acc = 1u32;
        let mut base = a.0 as u32;
        let mut e = ORDER - 2;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % ORDER;
            }
            base = base * base % ORDER;
            e >>= 1;
        }
        Some(Zq(acc as u16))
    }

    fn scalar_random<R: RngCore + ?Sized>(rng: &mut R) -> Zq {
        Zq(rng.gen_range(0..ORDER) as u16)
    }

    fn scalar_from_wide(bytes: &[u8; 64]) -> Zq {
        let mut acc = 0u32;
        for b in bytes {
            acc = (acc * 256 + *b as u32) % ORDER;
        }
        Zq(acc as u16)
    }

    fn scalar_to_bytes(s: &Zq) -> Vec<u8> {
        vec![s.0 as u8]
    }

    fn scalar_from_bytes(bytes: &[u8]) -> Option<Zq> {
        match bytes {
            [b] if (*b as u32) < ORDER => Some(Zq(*b as u16)),
            _ => None,
        }
    }

    fn element_to_bytes(e: &Zp) -> Vec<u8> {
        e.0.to_le_bytes().to_vec()
    }

    fn element_from_bytes(bytes: &[u8]) -> Option<Zp> {
        let arr: [u8; 2] = bytes.try_into().ok()?;
        let v = u16::from_le_bytes(arr);
        Self::is_member(v as u32).then_some(Zp(v))
    }

    /// `v -> g^v` for a single byte `v < 101`; a bijection onto the group.
    fn f1_map(bits: &[u8]) -> Result<Zp, CryptoError> {
        match bits {
            [v] if (*v as u32) < ORDER => Ok(Self::base_pow(&Zq(*v as u16))),
            _ => Err(CryptoError::MapRange),
        }
    }

    fn f1_inv(e: &Zp) -> Result<Vec<u8>, CryptoError> {
        Self::dlog(e)
            .map(|x| vec![x.0 as u8])
            .ok_or(CryptoError::MapRange)
    }

    fn f1_domain_from_digest(digest: &[u8; 32]) -> Vec<u8> {
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        vec![(u64::from_le_bytes(word) % ORDER as u64) as u8]
    }

    fn f2_map(bits: &[u8]) -> Zq {
        let first = bits.first().copied().unwrap_or(0) as u16;
        Zq(first & ((1 << F2_BITS) - 1))
    }
}
