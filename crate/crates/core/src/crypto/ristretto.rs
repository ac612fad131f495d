//! Ristretto255, the production group (~128-bit security, prime order).
//!
//! F1 embeds 28 data bytes into a point by fixing bytes `1..29` of the
//! canonical encoding and searching the remaining free bytes, derived from a
//! counter hash of the data, until the encoding decodes. Since Ristretto
//! encodings are canonical, the data bytes are read back from the compressed
//! point; the inverse additionally re-embeds and compares to reject points
//! outside the image.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::group::{Group, GroupParams};
use super::CryptoError;

const EMBED_OFFSET: usize = 1;
const EMBED_BYTES: usize = 28;

#[derive(Debug, Clone, Copy, Default)]
pub struct Ristretto;

impl Group for Ristretto {
    type Scalar = Scalar;
    type Element = RistrettoPoint;

    const ID: &'static str = "ristretto255";
    const ELEMENT_LEN: usize = 32;
    const SCALAR_LEN: usize = 32;
    const EMBED_LEN: usize = EMBED_BYTES;

    fn params() -> GroupParams {
        // l = 2^252 + 27742317777372353535851937790883648493
        GroupParams {
            group_id: Self::ID,
            order_q: "1000000000000000000000000000000014def9dea2f79cd65812631a5cf5d3ed".into(),
            generator: hex::encode(Self::generator().compress().as_bytes()),
        }
    }

    fn generator() -> RistrettoPoint {
        curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT
    }

    fn identity() -> RistrettoPoint {
        RistrettoPoint::identity()
    }

    fn op(a: &RistrettoPoint, b: &RistrettoPoint) -> RistrettoPoint {
        a + b
    }

    fn pow(base: &RistrettoPoint, e: &Scalar) -> RistrettoPoint {
        base * e
    }

    fn invert(a: &RistrettoPoint) -> RistrettoPoint {
        -a
    }

    fn scalar_from_u64(v: u64) -> Scalar {
        Scalar::from(v)
    }

    fn scalar_add(a: &Scalar, b: &Scalar) -> Scalar {
        a + b
    }

    fn scalar_mul(a: &Scalar, b: &Scalar) -> Scalar {
        a * b
    }

    fn scalar_neg(a: &Scalar) -> Scalar {
        -a
    }

    fn scalar_invert(a: &Scalar) -> Option<Scalar> {
        (*a != Scalar::ZERO).then(|| a.invert())
    }

    fn scalar_random<R: RngCore + ?Sized>(rng: &mut R) -> Scalar {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        Scalar::from_bytes_mod_order_wide(&wide)
    }

    fn scalar_from_wide(bytes: &[u8; 64]) -> Scalar {
        Scalar::from_bytes_mod_order_wide(bytes)
    }

    fn scalar_to_bytes(s: &Scalar) -> Vec<u8> {
        s.to_bytes().to_vec()
    }

    fn scalar_from_bytes(bytes: &[u8]) -> Option<Scalar> {
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Option::from(Scalar::from_canonical_bytes(arr))
    }

    fn element_to_bytes(e: &RistrettoPoint) -> Vec<u8> {
        e.compress().to_bytes().to_vec()
    }

    fn element_from_bytes(bytes: &[u8]) -> Option<RistrettoPoint> {
        CompressedRistretto::from_slice(bytes).ok()?.decompress()
    }

    fn f1_map(bits: &[u8]) -> Result<RistrettoPoint, CryptoError> {
        if bits.len() != EMBED_BYTES {
            return Err(CryptoError::MapRange);
        }
        for ctr in 0u32.. {
            let fill: [u8; 32] = Sha256::new()
                .chain_update(b"lldc/f1-embed")
                .chain_update(bits)
                .chain_update(ctr.to_le_bytes())
                .finalize()
                .into();
            let mut enc = [0u8; 32];
            // field element must be non-negative (even) and below 2^255
            enc[0] = fill[0] & 0xfe;
            enc[EMBED_OFFSET..EMBED_OFFSET + EMBED_BYTES].copy_from_slice(bits);
            enc[29] = fill[1];
            enc[30] = fill[2];
            enc[31] = fill[3] & 0x7f;
            if let Some(p) = CompressedRistretto(enc).decompress() {
                return Ok(p);
            }
        }
        unreachable!("counter space exhausted")
    }

    fn f1_inv(e: &RistrettoPoint) -> Result<Vec<u8>, CryptoError> {
        let enc = e.compress().to_bytes();
        let data = enc[EMBED_OFFSET..EMBED_OFFSET + EMBED_BYTES].to_vec();
        if Self::f1_map(&data)? == *e {
            Ok(data)
        } else {
            Err(CryptoError::MapRange)
        }
    }

    fn f1_domain_from_digest(digest: &[u8; 32]) -> Vec<u8> {
        digest[..EMBED_BYTES].to_vec()
    }

    fn f2_map(bits: &[u8]) -> Scalar {
        let mut arr = [0u8; 32];
        let n = bits.len().min(32);
        arr[..n].copy_from_slice(&bits[..n]);
        // keep 252 bits: 2^252 < l, so reduction is the identity
        arr[31] &= 0x0f;
        Scalar::from_bytes_mod_order(arr)
    }
}
