//! Keyed tags and digests. "Signatures" throughout the crate are HMAC-SHA256
//! tags checked against a trusted in-process key registry.

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

type HmacSha256 = Hmac<Sha256>;

/// A 32-byte value printed as lowercase hex. Used for digests, MAC tags and
/// signatures alike.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

pub type Tag = Digest;
pub type Signature = Digest;

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Returns a copy with a single bit flipped; used by tamper tests.
    pub fn with_bit_flipped(&self, bit: usize) -> Self {
        let mut out = *self;
        out.0[(bit / 8) % 32] ^= 1 << (bit % 8);
        out
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("expected 64 lowercase hex characters")]
pub struct DigestParseError;

impl FromStr for Digest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let raw = hex::decode(s).map_err(|_| DigestParseError)?;
        let arr: [u8; 32] = raw.try_into().map_err(|_| DigestParseError)?;
        Ok(Digest(arr))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over the given parts, each length-prefixed so part boundaries are
/// unambiguous.
pub fn digest_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Plain SHA-256 of a byte string.
pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

pub fn mac(key: &[u8], data: &[u8]) -> Tag {
    let mut m = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    m.update(data);
    Digest(m.finalize().into_bytes().into())
}

/// Constant-time tag comparison.
pub fn mac_verify(key: &[u8], data: &[u8], tag: &Tag) -> bool {
    let mut m = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    m.update(data);
    m.verify_slice(&tag.0).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hmac_matches_rfc4231_case_2() {
        let tag = mac(b"Jefe", b"what do ya want for nothing?");
        assert_eq!(
            tag.to_hex(),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn digest_hex_roundtrip_and_bit_flip() {
        let d = sha256(b"abc");
        assert_eq!(
            d.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert_ne!(d.with_bit_flipped(3), d);
        assert_eq!(d.with_bit_flipped(3).with_bit_flipped(3), d);
    }

    #[test]
    fn mac_verify_rejects_other_tags() {
        let t = mac(b"k", b"m");
        assert!(mac_verify(b"k", b"m", &t));
        assert!(!mac_verify(b"k", b"m", &t.with_bit_flipped(0)));
        assert!(!mac_verify(b"k2", b"m", &t));
    }
}
