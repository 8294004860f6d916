//! Digests, identities and signatures.
//!
//! Signatures default to HMAC-SHA256 under a per-identity key registered at
//! genesis. The registry plays the certificate authority's role: only
//! registered identities can sign, and roles never change after genesis.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(data: &[u8]) -> Digest {
        Digest(Sha256::digest(data).into())
    }

    /// Digest of the concatenation of `parts`.
    pub fn of_parts(parts: &[&[u8]]) -> Digest {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(hex, 16).ok()?;
        }
        Some(Digest(out))
    }

    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
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
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex characters"))
    }
}

pub type IdentityId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ca,
    Orderer,
    Peer,
    Client,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
}

/// Pluggable signing backend.
pub trait SignatureScheme {
    fn sign(&self, key: &[u8; 32], msg: &[u8]) -> Vec<u8>;
    fn verify(&self, key: &[u8; 32], msg: &[u8], sig: &[u8]) -> bool;
}

/// Deterministic keyed-hash signatures.
#[derive(Debug, Clone, Copy, Default)]
pub struct HmacSha256;

impl SignatureScheme for HmacSha256 {
    fn sign(&self, key: &[u8; 32], msg: &[u8]) -> Vec<u8> {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("hmac accepts any key size");
        mac.update(msg);
        mac.finalize().into_bytes().to_vec()
    }

    fn verify(&self, key: &[u8; 32], msg: &[u8], sig: &[u8]) -> bool {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("hmac accepts any key size");
        mac.update(msg);
        mac.verify_slice(sig).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub role: Role,
    /// Hex-encoded verification key.
    #[serde(with = "hex_key")]
    pub key: [u8; 32],
}

mod hex_key {
    use super::Digest;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&Digest(*k).to_hex())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map(|d| d.0).ok_or_else(|| serde::de::Error::custom("bad key"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRegistry {
    identities: BTreeMap<IdentityId, Identity>,
}

impl IdentityRegistry {
    pub fn new() -> Self {
        IdentityRegistry::default()
    }

    /// Registers `id` with a key derived from `network_secret`.
    pub fn register(&mut self, id: &str, role: Role, network_secret: u64) {
        let key = Digest::of_parts(&[b"sarsim-identity", &network_secret.to_le_bytes(), id.as_bytes()]).0;
        self.identities.insert(id.to_string(), Identity { role, key });
    }

    pub fn get(&self, id: &str) -> Option<&Identity> {
        self.identities.get(id)
    }

    pub fn role(&self, id: &str) -> Option<Role> {
        self.get(id).map(|i| i.role)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &IdentityId> {
        self.identities.iter().filter(move |(_, i)| i.role == role).map(|(k, _)| k)
    }

    pub fn sign(&self, id: &str, msg: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let ident = self.get(id).ok_or_else(|| CryptoError::UnknownIdentity(id.to_string()))?;
        Ok(HmacSha256.sign(&ident.key, msg))
    }

    /// False for unknown identities as well as bad signatures.
    pub fn verify(&self, id: &str, msg: &[u8], sig: &[u8]) -> bool {
        self.get(id).is_some_and(|ident| HmacSha256.verify(&ident.key, msg, sig))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> IdentityRegistry {
        let mut r = IdentityRegistry::new();
        r.register("peer1", Role::Peer, 5);
        r.register("peer2", Role::Peer, 5);
        r
    }

    #[test]
    fn sign_verify_round_trip() {
        let r = registry();
        let sig = r.sign("peer1", b"hello").unwrap();
        assert!(r.verify("peer1", b"hello", &sig));
        assert!(!r.verify("peer2", b"hello", &sig));
        assert!(!r.verify("nobody", b"hello", &sig));
        assert_eq!(r.sign("nobody", b"x"), Err(CryptoError::UnknownIdentity("nobody".into())));
    }

    #[test]
    fn bit_flips_break_signatures() {
        let r = registry();
        let msg = b"drone report 42".to_vec();
        let sig = r.sign("peer1", &msg).unwrap();
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!r.verify("peer1", &m, &sig), "bit {bit}");
        }
        for bit in 0..sig.len() * 8 {
            let mut s = sig.clone();
            s[bit / 8] ^= 1 << (bit % 8);
            assert!(!r.verify("peer1", &msg, &s), "sig bit {bit}");
        }
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = Digest::of(b"abc");
        assert_eq!(d.to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("zz"), None);
    }
}
