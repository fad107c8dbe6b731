//! Delegation capability tokens: macaroon-style caveat chains.
//!
//! `tag_0 = MAC(root_secret, token_id)` and `tag_i = MAC(tag_{i-1}, caveat_i)`,
//! both over canonical bytes. Holders may append caveats offline; only the
//! authority holding the root secret can check the chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AgentId, IdentityError, SecretKey};
use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{self, Tag};
use crate::{Micros, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operation {
    Read,
    Write,
    Execute,
}

impl Operation {
    pub const ALL: [Operation; 3] = [Operation::Read, Operation::Write, Operation::Execute];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Read => "READ",
            Operation::Write => "WRITE",
            Operation::Execute => "EXECUTE",
        }
    }
}

impl FromStr for Operation {
    type Err = IdentityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "READ" => Ok(Operation::Read),
            "WRITE" => Ok(Operation::Write),
            "EXECUTE" => Ok(Operation::Execute),
            other => Err(IdentityError::InvalidCaveat(format!("unknown operation {other:?}"))),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single restriction. The effective permission of a token is the
/// conjunction of all its caveats.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Caveat {
    /// Resource path prefixes; a request must fall under at least one.
    ResourceScope(BTreeSet<String>),
    Operations(BTreeSet<Operation>),
    /// Last tick (inclusive) at which the token is valid.
    Expiry(Tick),
    /// Deepest delegation hop (root holder = 0) allowed to use the token.
    MaxDepth(u32),
    SpendCap(Micros),
}

impl Caveat {
    pub fn kind(&self) -> &'static str {
        match self {
            Caveat::ResourceScope(_) => "resource_scope",
            Caveat::Operations(_) => "operations",
            Caveat::Expiry(_) => "expiry",
            Caveat::MaxDepth(_) => "max_depth",
            Caveat::SpendCap(_) => "spend_cap",
        }
    }

    pub fn scope<I: IntoIterator<Item = S>, S: Into<String>>(prefixes: I) -> Self {
        Caveat::ResourceScope(prefixes.into_iter().map(Into::into).collect())
    }

    pub fn ops<I: IntoIterator<Item = Operation>>(ops: I) -> Self {
        Caveat::Operations(ops.into_iter().collect())
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        match self {
            Caveat::ResourceScope(set) => {
                if set.is_empty() {
                    return Err(IdentityError::InvalidCaveat("resource_scope is empty".into()));
                }
                if let Some(bad) = set.iter().find(|p| !p.starts_with('/')) {
                    return Err(IdentityError::InvalidCaveat(format!("scope prefix {bad:?} must start with '/'")));
                }
                Ok(())
            }
            Caveat::Operations(set) if set.is_empty() => {
                Err(IdentityError::InvalidCaveat("operations is empty".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn admits(&self, req: &RequestContext) -> bool {
        match self {
            Caveat::ResourceScope(set) => set.iter().any(|p| path_within(&req.resource, p)),
            Caveat::Operations(set) => set.contains(&req.operation),
            Caveat::Expiry(t) => req.now <= *t,
            Caveat::MaxDepth(d) => req.depth <= *d,
            Caveat::SpendCap(cap) => req.spend <= *cap,
        }
    }

    fn deny_reason(&self) -> DenyReason {
        match self {
            Caveat::ResourceScope(_) => DenyReason::Scope,
            Caveat::Operations(_) => DenyReason::Operation,
            Caveat::Expiry(_) => DenyReason::Expired,
            Caveat::MaxDepth(_) => DenyReason::DepthExceeded,
            Caveat::SpendCap(_) => DenyReason::SpendExceeded,
        }
    }
}

/// Parses the CLI form `<kind>=<value>`, e.g. `ops=READ,WRITE` or
/// `scope=/Project_X`.
impl FromStr for Caveat {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once('=')
            .ok_or_else(|| IdentityError::InvalidCaveat(format!("expected <kind>=<value>, got {s:?}")))?;
        let int = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| IdentityError::InvalidCaveat(format!("{kind} needs a non-negative integer, got {v:?}")))
        };
        let caveat = match kind.trim() {
            "scope" | "resource_scope" => Caveat::scope(value.split(',').map(str::trim)),
            "ops" | "operations" => Caveat::Operations(
                value.split(',').map(|o| o.trim().parse()).collect::<Result<_, _>>()?,
            ),
            "expiry" => Caveat::Expiry(int(value)?),
            "max_depth" | "depth" => Caveat::MaxDepth(
                u32::try_from(int(value)?).map_err(|_| IdentityError::InvalidCaveat("max_depth too large".into()))?,
            ),
            "spend_cap" | "spend" => Caveat::SpendCap(int(value)?),
            other => return Err(IdentityError::InvalidCaveat(format!("unknown caveat kind {other:?}"))),
        };
        caveat.validate()?;
        Ok(caveat)
    }
}

fn path_within(resource: &str, prefix: &str) -> bool {
    if prefix.ends_with('/') {
        return resource.starts_with(prefix);
    }
    resource == prefix
        || resource
            .strip_prefix(prefix)
            .is_some_and(|rest| rest.starts_with('/'))
}

impl Canonical for Caveat {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(self.kind());
        match self {
            Caveat::ResourceScope(set) => {
                w.str_seq(set.iter());
            }
            Caveat::Operations(set) => {
                w.u64(set.len() as u64);
                for op in set {
                    w.str(op.as_str());
                }
            }
            Caveat::Expiry(v) | Caveat::SpendCap(v) => {
                w.u64(*v);
            }
            Caveat::MaxDepth(d) => {
                w.u64(u64::from(*d));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub resource: String,
    pub operation: Operation,
    pub now: Tick,
    #[serde(default)]
    pub depth: u32,
    #[serde(default)]
    pub spend: Micros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    InvalidChain,
    Scope,
    Operation,
    Expired,
    DepthExceeded,
    SpendExceeded,
    Revoked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub reason: DenyReason,
    /// Index of the first caveat that rejected the request, when one did.
    pub caveat_index: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum TokenDecision {
    Allow,
    Deny(Denial),
}

impl TokenDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, TokenDecision::Allow)
    }

    pub fn deny_reason(&self) -> Option<DenyReason> {
        match self {
            TokenDecision::Allow => None,
            TokenDecision::Deny(d) => Some(d.reason),
        }
    }

    fn deny(reason: DenyReason, caveat_index: Option<usize>) -> Self {
        TokenDecision::Deny(Denial { reason, caveat_index })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityToken {
    pub token_id: String,
    pub root_key_id: String,
    pub caveats: Vec<Caveat>,
    pub chain_tag: Tag,
}

struct TokenIdBytes<'a>(&'a str);

impl Canonical for TokenIdBytes<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(self.0);
    }
}

fn root_tag(root: &SecretKey, token_id: &str) -> Tag {
    crypto::mac(&root.0, &TokenIdBytes(token_id).canonical_bytes())
}

fn next_tag(prev: &Tag, caveat: &Caveat) -> Tag {
    crypto::mac(&prev.0, &caveat.canonical_bytes())
}

/// All intermediate tags `tag_0..=tag_n` obtained by replaying the chain.
fn replay_tags(root: &SecretKey, token_id: &str, caveats: &[Caveat]) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(caveats.len() + 1);
    let mut tag = root_tag(root, token_id);
    tags.push(tag);
    for c in caveats {
        tag = next_tag(&tag, c);
        tags.push(tag);
    }
    tags
}

pub fn mint_token(
    root_secret: &SecretKey,
    root_key_id: &str,
    token_id: &str,
    initial_caveats: Vec<Caveat>,
) -> Result<CapabilityToken, IdentityError> {
    for c in &initial_caveats {
        c.validate()?;
    }
    let chain_tag = *replay_tags(root_secret, token_id, &initial_caveats)
        .last()
        .expect("replay yields at least tag_0");
    Ok(CapabilityToken {
        token_id: token_id.to_string(),
        root_key_id: root_key_id.to_string(),
        caveats: initial_caveats,
        chain_tag,
    })
}

/// Appends a caveat. The input token is left untouched.
pub fn attenuate(token: &CapabilityToken, caveat: Caveat) -> Result<CapabilityToken, IdentityError> {
    caveat.validate()?;
    let mut out = token.clone();
    out.chain_tag = next_tag(&token.chain_tag, &caveat);
    out.caveats.push(caveat);
    Ok(out)
}

fn check_chain(token: &CapabilityToken, root_secret: &SecretKey) -> Option<Vec<Tag>> {
    let tags = replay_tags(root_secret, &token.token_id, &token.caveats);
    let ok = match token.caveats.split_last() {
        None => crypto::mac_verify(&root_secret.0, &TokenIdBytes(&token.token_id).canonical_bytes(), &token.chain_tag),
        Some((last, _)) => {
            let prev = tags[tags.len() - 2];
            crypto::mac_verify(&prev.0, &last.canonical_bytes(), &token.chain_tag)
        }
    };
    ok.then_some(tags)
}

fn check_caveats(caveats: &[Caveat], request: &RequestContext) -> TokenDecision {
    match caveats.iter().position(|c| !c.admits(request)) {
        None => TokenDecision::Allow,
        Some(i) => TokenDecision::deny(caveats[i].deny_reason(), Some(i)),
    }
}

/// Stateless check: chain integrity, then every caveat in order.
pub fn verify_token(token: &CapabilityToken, root_secret: &SecretKey, request: &RequestContext) -> TokenDecision {
    if check_chain(token, root_secret).is_none() {
        return TokenDecision::deny(DenyReason::InvalidChain, None);
    }
    check_caveats(&token.caveats, request)
}

/// Folded view of a caveat list. `None` means unrestricted by that kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EffectivePermissions {
    pub scopes: Vec<BTreeSet<String>>,
    pub operations: Option<BTreeSet<Operation>>,
    pub expiry: Option<Tick>,
    pub max_depth: Option<u32>,
    pub spend_cap: Option<Micros>,
}

impl EffectivePermissions {
    pub fn of(caveats: &[Caveat]) -> Self {
        let mut e = EffectivePermissions::default();
        for c in caveats {
            match c {
                Caveat::ResourceScope(s) => e.scopes.push(s.clone()),
                Caveat::Operations(ops) => {
                    e.operations = Some(match e.operations.take() {
                        None => ops.clone(),
                        Some(cur) => cur.intersection(ops).copied().collect(),
                    })
                }
                Caveat::Expiry(t) => e.expiry = Some(e.expiry.map_or(*t, |x| x.min(*t))),
                Caveat::MaxDepth(d) => e.max_depth = Some(e.max_depth.map_or(*d, |x| x.min(*d))),
                Caveat::SpendCap(s) => e.spend_cap = Some(e.spend_cap.map_or(*s, |x| x.min(*s))),
            }
        }
        e
    }

    pub fn admits(&self, req: &RequestContext) -> bool {
        self.scopes.iter().all(|s| s.iter().any(|p| path_within(&req.resource, p)))
            && self.operations.as_ref().is_none_or(|o| o.contains(&req.operation))
            && self.expiry.is_none_or(|t| req.now <= t)
            && self.max_depth.is_none_or(|d| req.depth <= d)
            && self.spend_cap.is_none_or(|c| req.spend <= c)
    }
}

impl CapabilityToken {
    pub fn effective(&self) -> EffectivePermissions {
        EffectivePermissions::of(&self.caveats)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum RevocationTarget {
    Token(String),
    Agent(AgentId),
}

/// Emitted on revocation for broadcast to interested parties.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationNotice {
    pub target: RevocationTarget,
    pub tick: Tick,
    /// Tokens known to the authority that now deny.
    pub affected_tokens: Vec<String>,
}

/// Holder of root secrets, the issuance record and the revocation set.
///
/// Issuance is recorded by the tag a holder received, so any token derived
/// from that holder's token carries the recorded tag as an intermediate
/// value of its chain replay.
#[derive(Debug, Clone, Default)]
pub struct PermissionAuthority {
    roots: BTreeMap<String, SecretKey>,
    minted: BTreeSet<String>,
    holders: BTreeMap<Tag, BTreeSet<AgentId>>,
    held_by: BTreeMap<AgentId, BTreeSet<String>>,
    revoked_tokens: BTreeSet<String>,
    revoked_agents: BTreeSet<AgentId>,
    next_token: u64,
}

impl PermissionAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_root(&mut self, root_key_id: impl Into<String>, secret: SecretKey) {
        self.roots.insert(root_key_id.into(), secret);
    }

    pub fn root_secret(&self, root_key_id: &str) -> Option<&SecretKey> {
        self.roots.get(root_key_id)
    }

    /// Mints a token under a registered root and records `holder` as its
    /// first holder.
    pub fn mint(
        &mut self,
        root_key_id: &str,
        holder: &AgentId,
        caveats: Vec<Caveat>,
    ) -> Result<CapabilityToken, IdentityError> {
        let secret = self
            .roots
            .get(root_key_id)
            .ok_or_else(|| IdentityError::UnknownRoot(root_key_id.to_string()))?;
        self.next_token += 1;
        let token_id = format!("dct-{}", self.next_token);
        let token = mint_token(secret, root_key_id, &token_id, caveats)?;
        self.minted.insert(token_id);
        self.record_holder(&token, holder);
        Ok(token)
    }

    /// Attenuates `token` with `caveats` and records `to` as the holder of the
    /// result.
    pub fn delegate(
        &mut self,
        token: &CapabilityToken,
        caveats: Vec<Caveat>,
        to: &AgentId,
    ) -> Result<CapabilityToken, IdentityError> {
        let mut t = token.clone();
        for c in caveats {
            t = attenuate(&t, c)?;
        }
        self.record_holder(&t, to);
        Ok(t)
    }

    fn record_holder(&mut self, token: &CapabilityToken, holder: &AgentId) {
        self.holders.entry(token.chain_tag).or_default().insert(holder.clone());
        self.held_by
            .entry(holder.clone())
            .or_default()
            .insert(token.token_id.clone());
    }

    /// Holders the token passed through, root-most first. Empty if the chain
    /// does not verify.
    pub fn lineage(&self, token: &CapabilityToken) -> Vec<AgentId> {
        let Some(secret) = self.roots.get(&token.root_key_id) else {
            return Vec::new();
        };
        let Some(tags) = check_chain(token, secret) else {
            return Vec::new();
        };
        let mut out: Vec<AgentId> = Vec::new();
        for t in &tags {
            if let Some(hs) = self.holders.get(t) {
                for h in hs {
                    if !out.contains(h) {
                        out.push(h.clone());
                    }
                }
            }
        }
        out
    }

    pub fn is_revoked_agent(&self, agent: &AgentId) -> bool {
        self.revoked_agents.contains(agent)
    }

    pub fn verify(&self, token: &CapabilityToken, request: &RequestContext) -> TokenDecision {
        let Some(secret) = self.roots.get(&token.root_key_id) else {
            return TokenDecision::deny(DenyReason::InvalidChain, None);
        };
        let Some(tags) = check_chain(token, secret) else {
            return TokenDecision::deny(DenyReason::InvalidChain, None);
        };
        if self.revoked_tokens.contains(&token.token_id) {
            return TokenDecision::deny(DenyReason::Revoked, None);
        }
        let through_revoked = tags.iter().any(|t| {
            self.holders
                .get(t)
                .is_some_and(|hs| hs.iter().any(|h| self.revoked_agents.contains(h)))
        });
        if through_revoked {
            return TokenDecision::deny(DenyReason::Revoked, None);
        }
        check_caveats(&token.caveats, request)
    }

    pub fn revoke(&mut self, target: RevocationTarget, tick: Tick) -> Result<RevocationNotice, IdentityError> {
        let affected_tokens = match &target {
            RevocationTarget::Token(id) => {
                if !self.minted.contains(id) {
                    return Err(IdentityError::NotFound(format!("token {id}")));
                }
                self.revoked_tokens.insert(id.clone());
                vec![id.clone()]
            }
            RevocationTarget::Agent(agent) => {
                let held = self
                    .held_by
                    .get(agent)
                    .ok_or_else(|| IdentityError::NotFound(format!("agent {agent}")))?;
                self.revoked_agents.insert(agent.clone());
                held.iter().cloned().collect()
            }
        };
        Ok(RevocationNotice { target, tick, affected_tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn root() -> SecretKey {
        SecretKey::derive(9, "root")
    }

    fn req(resource: &str, op: Operation) -> RequestContext {
        RequestContext { resource: resource.into(), operation: op, now: 0, depth: 0, spend: 0 }
    }

    fn project_x_read() -> CapabilityToken {
        mint_token(
            &root(),
            "root-1",
            "tok-1",
            vec![Caveat::scope(["/Project_X"]), Caveat::ops([Operation::Read])],
        )
        .unwrap()
    }

    #[test]
    fn project_x_read_only_token() {
        let t = project_x_read();
        assert_eq!(verify_token(&t, &root(), &req("/Project_X/doc", Operation::Read)), TokenDecision::Allow);
        assert_eq!(
            verify_token(&t, &root(), &req("/Project_X/doc", Operation::Write)),
            TokenDecision::Deny(Denial { reason: DenyReason::Operation, caveat_index: Some(1) })
        );
        assert_eq!(
            verify_token(&t, &root(), &req("/Project_XY/doc", Operation::Read)).deny_reason(),
            Some(DenyReason::Scope)
        );
    }

    #[test]
    fn empty_caveats_grant_root_scope() {
        let t = mint_token(&root(), "r", "t", vec![]).unwrap();
        for op in Operation::ALL {
            let mut r = req("/anything/at/all", op);
            r.now = u64::MAX;
            r.spend = u64::MAX;
            r.depth = u32::MAX;
            assert!(verify_token(&t, &root(), &r).is_allow());
        }
    }

    #[test]
    fn flipped_chain_tag_byte_is_invalid_chain() {
        let mut t = project_x_read();
        t.chain_tag.0[0] ^= 0xff;
        assert_eq!(
            verify_token(&t, &root(), &req("/Project_X/doc", Operation::Read)),
            TokenDecision::Deny(Denial { reason: DenyReason::InvalidChain, caveat_index: None })
        );
    }

    #[test]
    fn malformed_caveats_are_rejected() {
        assert!(mint_token(&root(), "r", "t", vec![Caveat::scope(["relative"])]).is_err());
        assert!(mint_token(&root(), "r", "t", vec![Caveat::Operations(BTreeSet::new())]).is_err());
        assert!(attenuate(&project_x_read(), Caveat::ResourceScope(BTreeSet::new())).is_err());
        assert!("spend_cap=-5".parse::<Caveat>().is_err());
        assert!("scope=/a,/b".parse::<Caveat>().is_ok());
    }

    #[test]
    fn attenuation_intersects_operations_and_keeps_original() {
        let t = mint_token(&root(), "r", "t", vec![Caveat::ops([Operation::Read, Operation::Write])]).unwrap();
        let t2 = attenuate(&t, Caveat::ops([Operation::Read])).unwrap();
        assert_eq!(t.caveats.len(), 1);
        assert_eq!(t2.caveats.len(), 2);
        assert_eq!(t2.effective().operations, Some([Operation::Read].into_iter().collect()));
        assert!(verify_token(&t2, &root(), &req("/x", Operation::Read)).is_allow());
        assert_eq!(
            verify_token(&t2, &root(), &req("/x", Operation::Write)).deny_reason(),
            Some(DenyReason::Operation)
        );
    }

    #[test]
    fn spend_cap_is_minimum_over_chain() {
        let t = mint_token(&root(), "r", "t", vec![Caveat::SpendCap(5_000_000)]).unwrap();
        let t2 = attenuate(&t, Caveat::SpendCap(500_000)).unwrap();
        let brute = t2
            .caveats
            .iter()
            .filter_map(|c| match c {
                Caveat::SpendCap(v) => Some(*v),
                _ => None,
            })
            .fold(u64::MAX, u64::min);
        assert_eq!(brute, 500_000);
        assert_eq!(t2.effective().spend_cap, Some(500_000));
        let mut r = req("/x", Operation::Read);
        r.spend = 500_000;
        assert!(verify_token(&t2, &root(), &r).is_allow());
        r.spend = 500_001;
        assert_eq!(verify_token(&t2, &root(), &r).deny_reason(), Some(DenyReason::SpendExceeded));
        assert!(verify_token(&t, &root(), &r).is_allow());
    }

    #[test]
    fn expiry_boundary_is_inclusive() {
        let t = mint_token(&root(), "r", "t", vec![Caveat::Expiry(100)]).unwrap();
        let mut r = req("/x", Operation::Read);
        r.now = 100;
        assert!(verify_token(&t, &root(), &r).is_allow());
        r.now = 101;
        assert_eq!(verify_token(&t, &root(), &r).deny_reason(), Some(DenyReason::Expired));
    }

    /// A→B→C→D→E with the root capped at depth 3: hops 1..=3 verify, the
    /// fourth does not.
    #[test]
    fn depth_cap_stops_fourth_hop() {
        let mut auth = PermissionAuthority::new();
        auth.add_root("root-a", root());
        let names = ["a", "b", "c", "d", "e"];
        let ids: Vec<_> = names.iter().map(|n| AgentId::derive(n)).collect();
        let mut tok = auth.mint("root-a", &ids[0], vec![Caveat::MaxDepth(3)]).unwrap();
        for (hop, to) in ids.iter().enumerate().skip(1) {
            tok = auth.delegate(&tok, vec![Caveat::ops([Operation::Read])], to).unwrap();
            let mut r = req("/x", Operation::Read);
            r.depth = hop as u32;
            let d = auth.verify(&tok, &r);
            if hop <= 3 {
                assert!(d.is_allow(), "hop {hop}");
            } else {
                assert_eq!(d.deny_reason(), Some(DenyReason::DepthExceeded));
            }
        }
    }

    /// B narrows depth so that C (hop 2) may act but cannot sub-delegate.
    #[test]
    fn intermediate_depth_attenuation_blocks_sub_delegation() {
        let mut auth = PermissionAuthority::new();
        auth.add_root("root-a", root());
        let [a, b, c, d] = ["a", "b", "c", "d"].map(AgentId::derive);
        let ta = auth.mint("root-a", &a, vec![Caveat::MaxDepth(3)]).unwrap();
        let tb = auth.delegate(&ta, vec![Caveat::MaxDepth(2)], &b).unwrap();
        let tc = auth.delegate(&tb, vec![Caveat::MaxDepth(2)], &c).unwrap();
        let mut r = req("/x", Operation::Read);
        r.depth = 2;
        assert!(auth.verify(&tc, &r).is_allow());
        let td = auth.delegate(&tc, vec![Caveat::ops([Operation::Read])], &d).unwrap();
        r.depth = 3;
        assert_eq!(auth.verify(&td, &r).deny_reason(), Some(DenyReason::DepthExceeded));
        assert_eq!(auth.lineage(&td), vec![a, b, c, d]);
    }

    #[test]
    fn revoking_an_agent_denies_its_descendants_only() {
        let mut auth = PermissionAuthority::new();
        auth.add_root("root-a", root());
        let [a, b, c, x] = ["a", "b", "c", "x"].map(AgentId::derive);
        let ta = auth.mint("root-a", &a, vec![]).unwrap();
        let tb = auth.delegate(&ta, vec![Caveat::scope(["/p"])], &b).unwrap();
        let tc = auth.delegate(&tb, vec![Caveat::ops([Operation::Read])], &c).unwrap();
        let tx = auth.mint("root-a", &x, vec![Caveat::scope(["/p"])]).unwrap();
        let r = req("/p/f", Operation::Read);
        assert!(auth.verify(&tc, &r).is_allow());

        let notice = auth.revoke(RevocationTarget::Agent(b.clone()), 7).unwrap();
        assert_eq!(notice.tick, 7);
        assert_eq!(auth.verify(&tc, &r).deny_reason(), Some(DenyReason::Revoked));
        assert_eq!(auth.verify(&tb, &r).deny_reason(), Some(DenyReason::Revoked));
        assert!(auth.verify(&ta, &r).is_allow());
        assert!(auth.verify(&tx, &r).is_allow());
    }

    #[test]
    fn revoking_unknown_targets_is_not_found() {
        let mut auth = PermissionAuthority::new();
        auth.add_root("r", root());
        assert!(matches!(
            auth.revoke(RevocationTarget::Token("nope".into()), 0),
            Err(IdentityError::NotFound(_))
        ));
        assert!(matches!(
            auth.revoke(RevocationTarget::Agent(AgentId::derive("ghost")), 0),
            Err(IdentityError::NotFound(_))
        ));
        let t = auth.mint("r", &AgentId::derive("a"), vec![]).unwrap();
        auth.revoke(RevocationTarget::Token(t.token_id.clone()), 1).unwrap();
        assert_eq!(auth.verify(&t, &req("/", Operation::Read)).deny_reason(), Some(DenyReason::Revoked));
    }

    #[test]
    fn token_wire_format() {
        let t = project_x_read();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["caveats"][0]["kind"], "resource_scope");
        assert_eq!(v["caveats"][0]["value"][0], "/Project_X");
        assert_eq!(v["caveats"][1]["value"][0], "READ");
        let tag = v["chain_tag"].as_str().unwrap();
        assert_eq!(tag.len(), 64);
        assert!(tag.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        let back: CapabilityToken = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
