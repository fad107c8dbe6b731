use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IdentityError;
use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{self, Digest, Signature};

const DID_PREFIX: &str = "did:sim:";

/// Decentralized identifier of an agent, `did:<method>:<id>`. Locally derived
/// identities use the `sim` method with a hex suffix.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Result<Self, IdentityError> {
        let s = s.into();
        let ok = s.strip_prefix("did:").and_then(|rest| rest.split_once(':')).is_some_and(|(method, id)| {
            !method.is_empty()
                && method.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
                && !id.is_empty()
                && id.bytes().all(|b| b.is_ascii_alphanumeric() || b".-_:%".contains(&b))
        });
        if ok {
            Ok(AgentId(s))
        } else {
            Err(IdentityError::InvalidAgentId(s))
        }
    }

    /// Deterministic id derived from a human-readable label.
    pub fn derive(label: &str) -> Self {
        let d = crypto::digest_parts(&[b"agent-id", label.as_bytes()]);
        AgentId(format!("{DID_PREFIX}{}", &d.to_hex()[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = IdentityError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AgentId::new(s)
    }
}

impl From<AgentId> for String {
    fn from(a: AgentId) -> String {
        a.0
    }
}

impl FromStr for AgentId {
    type Err = IdentityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentId::new(s)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Canonical for AgentId {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(&self.0);
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; 32]);

impl SecretKey {
    pub fn derive(seed: u64, label: &str) -> Self {
        SecretKey(crypto::digest_parts(&[b"secret", &seed.to_be_bytes(), label.as_bytes()]).0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let d: Digest = s.parse().ok()?;
        Some(SecretKey(d.0))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Debug, Clone)]
struct KeyRecord {
    key_id: String,
    secret: SecretKey,
}

/// Trusted in-process registry mapping each agent to its single active key.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<AgentId, KeyRecord>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, agent: AgentId, secret: SecretKey) -> Result<String, IdentityError> {
        if self.keys.contains_key(&agent) {
            return Err(IdentityError::DuplicateAgent(agent));
        }
        let key_id = format!("key:{}", &crypto::sha256(&secret.0).to_hex()[..16]);
        self.keys.insert(agent, KeyRecord { key_id: key_id.clone(), secret });
        Ok(key_id)
    }

    pub fn contains(&self, agent: &AgentId) -> bool {
        self.keys.contains_key(agent)
    }

    pub fn public_key_id(&self, agent: &AgentId) -> Option<&str> {
        self.keys.get(agent).map(|r| r.key_id.as_str())
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.keys.keys()
    }

    pub fn sign(&self, agent: &AgentId, payload: &[u8]) -> Result<Signature, IdentityError> {
        let rec = self
            .keys
            .get(agent)
            .ok_or_else(|| IdentityError::UnknownAgent(agent.clone()))?;
        Ok(crypto::mac(&rec.secret.0, payload))
    }

    pub fn verify(&self, agent: &AgentId, payload: &[u8], sig: &Signature) -> bool {
        self.keys
            .get(agent)
            .is_some_and(|rec| crypto::mac_verify(&rec.secret.0, payload, sig))
    }

    pub fn sign_value<T: Canonical + ?Sized>(&self, agent: &AgentId, v: &T) -> Result<Signature, IdentityError> {
        self.sign(agent, &v.canonical_bytes())
    }

    pub fn verify_value<T: Canonical + ?Sized>(&self, agent: &AgentId, v: &T, sig: &Signature) -> bool {
        self.verify(agent, &v.canonical_bytes(), sig)
    }
}

/// Canonical payload bytes plus the signer's tag over them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedEnvelope {
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub signer: AgentId,
    pub signature: Signature,
}

impl SignedEnvelope {
    pub fn seal<T: Canonical + ?Sized>(
        keys: &KeyRegistry,
        signer: &AgentId,
        message: &T,
    ) -> Result<Self, IdentityError> {
        let payload = message.canonical_bytes();
        let signature = keys.sign(signer, &payload)?;
        Ok(Self { payload, signer: signer.clone(), signature })
    }

    pub fn verify(&self, keys: &KeyRegistry) -> bool {
        keys.verify(&self.signer, &self.payload, &self.signature)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry_with(names: &[&str]) -> (KeyRegistry, Vec<AgentId>) {
        let mut reg = KeyRegistry::new();
        let ids: Vec<_> = names.iter().map(|n| AgentId::derive(n)).collect();
        for (i, id) in ids.iter().enumerate() {
            reg.register(id.clone(), SecretKey::derive(1, names[i])).unwrap();
        }
        (reg, ids)
    }

    #[test]
    fn agent_id_format() {
        assert!(AgentId::new("did:sim:00ff").is_ok());
        assert!(AgentId::new("did:web:fast-coder.ai").is_ok());
        assert!(AgentId::new("did:sim:").is_err());
        assert!(AgentId::new("sim:00ff").is_err());
        assert!(AgentId::new("did:WEB:x").is_err());
        assert!(AgentId::derive("alice").as_str().starts_with("did:sim:"));
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let (mut reg, ids) = registry_with(&["a"]);
        let err = reg.register(ids[0].clone(), SecretKey::derive(2, "a")).unwrap_err();
        assert_eq!(err, IdentityError::DuplicateAgent(ids[0].clone()));
        assert!(reg.public_key_id(&ids[0]).is_some());
    }

    #[test]
    fn envelope_verifies_only_unmodified_payload_and_signer() {
        let (reg, ids) = registry_with(&["a", "b"]);
        let env = SignedEnvelope::seal(&reg, &ids[0], &"hello".to_string()).unwrap();
        assert!(env.verify(&reg));

        let mut tampered = env.clone();
        tampered.payload[5] ^= 1;
        assert!(!tampered.verify(&reg));

        let mut wrong_signer = env.clone();
        wrong_signer.signer = ids[1].clone();
        assert!(!wrong_signer.verify(&reg));
    }

    #[test]
    fn unknown_signer_cannot_sign() {
        let (reg, _) = registry_with(&["a"]);
        assert!(matches!(
            reg.sign(&AgentId::derive("zed"), b"x"),
            Err(IdentityError::UnknownAgent(_))
        ));
    }
}
