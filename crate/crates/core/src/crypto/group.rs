//! Prime-order group abstraction.
//!
//! Every protocol layer is generic over [`Group`]. Two instantiations exist:
//! [`Ristretto`](super::Ristretto) for real deployments and
//! [`TestGroup`](super::TestGroup), an order-101 subgroup of `Z_607^*` whose
//! discrete logarithms are brute-forceable, so algebraic claims can be checked
//! by exhaustive search.
//!
//! Notation is multiplicative throughout: `op` is the group law and `pow`
//! raises an element to a scalar power.

use std::fmt::Debug;

use rand::RngCore;
use serde::Serialize;

use super::CryptoError;

/// Public description of a group instantiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupParams {
    pub group_id: &'static str,
    /// Prime order `q`, hex encoded big-endian.
    pub order_q: String,
    /// Encoded generator.
    pub generator: String,
}

pub trait Group: Copy + Clone + Debug + Default + Send + Sync + 'static {
    type Scalar: Copy + Clone + PartialEq + Eq + Debug + Send + Sync;
    type Element: Copy + Clone + PartialEq + Eq + Debug + Send + Sync;

    const ID: &'static str;
    /// Encoded length of an element.
    const ELEMENT_LEN: usize;
    /// Encoded length of a scalar.
    const SCALAR_LEN: usize;
    /// Width, in bytes, of the F1 domain.
    const EMBED_LEN: usize;

    fn params() -> GroupParams;

    fn generator() -> Self::Element;
    fn identity() -> Self::Element;
    fn op(a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn pow(base: &Self::Element, e: &Self::Scalar) -> Self::Element;
    fn invert(a: &Self::Element) -> Self::Element;

    fn scalar_from_u64(v: u64) -> Self::Scalar;
    fn scalar_add(a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_mul(a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;
    fn scalar_neg(a: &Self::Scalar) -> Self::Scalar;
    fn scalar_invert(a: &Self::Scalar) -> Option<Self::Scalar>;
    /// Uniform in `[0, q)`.
    fn scalar_random<R: RngCore + ?Sized>(rng: &mut R) -> Self::Scalar;
    /// Reduces a 64-byte digest into a scalar.
    fn scalar_from_wide(bytes: &[u8; 64]) -> Self::Scalar;

    fn scalar_to_bytes(s: &Self::Scalar) -> Vec<u8>;
    fn scalar_from_bytes(bytes: &[u8]) -> Option<Self::Scalar>;
    fn element_to_bytes(e: &Self::Element) -> Vec<u8>;
    /// Rejects encodings that are not canonical members of the group.
    fn element_from_bytes(bytes: &[u8]) -> Option<Self::Element>;

    /// One-to-one embedding of an `EMBED_LEN`-byte string into the group.
    fn f1_map(bits: &[u8]) -> Result<Self::Element, CryptoError>;
    /// Inverse of [`Group::f1_map`]; fails for elements outside its image.
    fn f1_inv(e: &Self::Element) -> Result<Vec<u8>, CryptoError>;
    /// Projects an arbitrary 32-byte digest into the F1 domain.
    fn f1_domain_from_digest(digest: &[u8; 32]) -> Vec<u8>;
    /// Bitstring to scalar; input is truncated to the scalar width first, and
    /// is one-to-one on truncated inputs.
    fn f2_map(bits: &[u8]) -> Self::Scalar;

    fn scalar_zero() -> Self::Scalar {
        Self::scalar_from_u64(0)
    }

    fn scalar_one() -> Self::Scalar {
        Self::scalar_from_u64(1)
    }

    fn scalar_sub(a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar {
        Self::scalar_add(a, &Self::scalar_neg(b))
    }

    fn scalar_is_zero(a: &Self::Scalar) -> bool {
        *a == Self::scalar_zero()
    }

    fn is_identity(e: &Self::Element) -> bool {
        *e == Self::identity()
    }

    fn base_pow(e: &Self::Scalar) -> Self::Element {
        Self::pow(&Self::generator(), e)
    }

    /// Hash-to-scalar with domain separation.
    fn hash_to_scalar(label: &[u8], parts: &[&[u8]]) -> Self::Scalar {
        use sha2::{Digest, Sha512};
        let mut h = Sha512::new();
        h.update((label.len() as u32).to_le_bytes());
        h.update(label);
        for p in parts {
            h.update((p.len() as u32).to_le_bytes());
            h.update(p);
        }
        let out: [u8; 64] = h.finalize().into();
        Self::scalar_from_wide(&out)
    }
}
