//! Agent identities, keyed signing, verifiable credentials and delegation
//! capability tokens.

mod credential;
mod keys;
mod token;

pub use credential::{Claim, VerifiableCredential};
pub use keys::{AgentId, KeyRegistry, SecretKey, SignedEnvelope};
pub use token::{
    attenuate, mint_token, verify_token, Caveat, CapabilityToken, DenyReason, Denial,
    EffectivePermissions, Operation, PermissionAuthority, RequestContext, RevocationNotice,
    RevocationTarget, TokenDecision,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("agent id {0:?} is not of the form did:sim:<hex>")]
    InvalidAgentId(String),
    #[error("agent {0} is already registered")]
    DuplicateAgent(AgentId),
    #[error("agent {0} has no registered key")]
    UnknownAgent(AgentId),
    #[error("invalid caveat: {0}")]
    InvalidCaveat(String),
    #[error("invalid credential claim: {0}")]
    InvalidClaim(String),
    #[error("unknown root key {0}")]
    UnknownRoot(String),
    #[error("not found: {0}")]
    NotFound(String),
}
