//! RFC 4231 HMAC-SHA256 test cases 1, 2, 3 and 6.
use lldc_core::crypto::{hmac_tag, hmac_verify};

fn check(key: &[u8], data: &[u8], want: &str) {
    let tag = hmac_tag(key, data);
    assert_eq!(hex::encode(tag), want);
    assert!(hmac_verify(key, data, &tag));
    let mut bad = tag;
    bad[31] ^= 1;
    assert!(!hmac_verify(key, data, &bad));
}

#[test]
fn short_key() {
    check(
        &[0x0b; 20],
        b"Hi There",
        "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7",
    );
}

#[test]
fn ascii_key() {
    check(
        b"Jefe",
        b"what do ya want for nothing?",
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
    );
}

#[test]
fn repeated_bytes() {
    check(
        &[0xaa; 20],
        &[0xdd; 50],
        "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe",
    );
}

#[test]
fn key_longer_than_block() {
    check(
        &[0xaa; 131],
        b"Test Using Larger Than Block-Size Key - Hash Key First",
        "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
    );
}
