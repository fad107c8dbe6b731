use serde::{Deserialize, Serialize};

use super::{AgentId, IdentityError, KeyRegistry};
use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{Digest, Signature};
use crate::Tick;

/// "Issuer certifies that subject completed task T on date D to spec S."
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub kind: String,
    pub task_id: String,
    pub date: Tick,
    pub spec_digest: Digest,
    pub quality: f64,
}

impl Canonical for Claim {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(&self.kind)
            .str(&self.task_id)
            .u64(self.date)
            .bytes(self.spec_digest.as_bytes())
            .f64(self.quality);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    pub issuer: AgentId,
    pub subject: AgentId,
    pub claim: Claim,
    pub signature: Signature,
}

struct Unsigned<'a>(&'a AgentId, &'a AgentId, &'a Claim);

impl Canonical for Unsigned<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        w.nested(self.0).nested(self.1).nested(self.2);
    }
}

impl VerifiableCredential {
    pub fn issue(
        keys: &KeyRegistry,
        issuer: &AgentId,
        subject: &AgentId,
        claim: Claim,
    ) -> Result<Self, IdentityError> {
        if !(0.0..=1.0).contains(&claim.quality) {
            return Err(IdentityError::InvalidClaim(format!("quality {} outside [0,1]", claim.quality)));
        }
        let signature = keys.sign_value(issuer, &Unsigned(issuer, subject, &claim))?;
        Ok(Self { issuer: issuer.clone(), subject: subject.clone(), claim, signature })
    }

    pub fn verify(&self, keys: &KeyRegistry) -> bool {
        (0.0..=1.0).contains(&self.claim.quality)
            && keys.verify_value(&self.issuer, &Unsigned(&self.issuer, &self.subject, &self.claim), &self.signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;
    use crate::identity::SecretKey;

    fn setup() -> (KeyRegistry, AgentId, AgentId) {
        let mut reg = KeyRegistry::new();
        let a = AgentId::derive("a");
        let b = AgentId::derive("b");
        reg.register(a.clone(), SecretKey::derive(0, "a")).unwrap();
        reg.register(b.clone(), SecretKey::derive(0, "b")).unwrap();
        (reg, a, b)
    }

    fn claim() -> Claim {
        Claim {
            kind: "task_completion".into(),
            task_id: "t1".into(),
            date: 42,
            spec_digest: sha256(b"spec"),
            quality: 0.9,
        }
    }

    #[test]
    fn tampering_any_claim_field_invalidates() {
        let (reg, a, b) = setup();
        let vc = VerifiableCredential::issue(&reg, &a, &b, claim()).unwrap();
        assert!(vc.verify(&reg));

        let mutations: Vec<Box<dyn Fn(&mut VerifiableCredential)>> = vec![
            Box::new(|c| c.claim.kind.push('x')),
            Box::new(|c| c.claim.task_id.push('x')),
            Box::new(|c| c.claim.date += 1),
            Box::new(|c| c.claim.spec_digest = c.claim.spec_digest.with_bit_flipped(7)),
            Box::new(|c| c.claim.quality = 0.91),
            Box::new(|c| std::mem::swap(&mut c.issuer, &mut c.subject)),
            Box::new(|c| c.signature = c.signature.with_bit_flipped(0)),
        ];
        for m in mutations {
            let mut t = vc.clone();
            m(&mut t);
            assert!(!t.verify(&reg));
        }
    }

    #[test]
    fn quality_must_be_a_fraction() {
        let (reg, a, b) = setup();
        let mut c = claim();
        c.quality = 1.5;
        assert!(VerifiableCredential::issue(&reg, &a, &b, c).is_err());
    }
}
