use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{Digest, Signature};
use crate::identity::{AgentId, IdentityError, KeyRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttestationSummary {
    pub completed: bool,
    pub quality: f64,
    pub resources: u64,
}

impl Canonical for AttestationSummary {
    fn encode(&self, w: &mut CanonWriter) {
        w.bool(self.completed).f64(self.quality).u64(self.resources);
    }
}

/// A subject's own signed account of a subtask, which its monitor must echo unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubReport {
    pub subject: AgentId,
    pub subtask_id: String,
    pub summary: AttestationSummary,
    pub signature: Signature,
}

struct SubBody<'a>(&'a AgentId, &'a str, &'a AttestationSummary);

impl Canonical for SubBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        w.str("sub-report").nested(self.0).str(self.1).nested(self.2);
    }
}

impl SubReport {
    pub fn sign(
        keys: &KeyRegistry,
        subject: &AgentId,
        subtask_id: &str,
        summary: AttestationSummary,
    ) -> Result<Self, IdentityError> {
        let signature = keys.sign_value(subject, &SubBody(subject, subtask_id, &summary))?;
        Ok(Self { subject: subject.clone(), subtask_id: subtask_id.to_string(), summary, signature })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttestationReport {
    pub attester: AgentId,
    pub subject: AgentId,
    pub subtask_id: String,
    pub summary: AttestationSummary,
    pub subject_signature: Signature,
    pub signature: Signature,
    /// Id of the attester's status update that carries this report.
    pub embedded_in: String,
}

struct ReportBody<'a>(&'a AttestationReport);

impl Canonical for ReportBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        let r = self.0;
        w.str("attestation")
            .nested(&r.attester)
            .nested(&r.subject)
            .str(&r.subtask_id)
            .nested(&r.summary)
            .bytes(r.subject_signature.as_bytes())
            .str(&r.embedded_in);
    }
}

impl AttestationReport {
    pub fn signature_valid(&self, keys: &KeyRegistry) -> bool {
        keys.verify_value(&self.attester, &ReportBody(self), &self.signature)
    }

    pub fn subject_signature_valid(&self, keys: &KeyRegistry) -> bool {
        keys.verify_value(&self.subject, &SubBody(&self.subject, &self.subtask_id, &self.summary), &self.subject_signature)
    }
}

impl fmt::Display for AttestationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        let status = if s.completed { "completed" } else { "not completed" };
        write!(f, "{} {status}, quality score: {:.2}, resources consumed: {}", self.subtask_id, s.quality, s.resources)
    }
}

/// Id of the status update in which a monitor forwards reports about `parent_task`.
pub fn status_update_id(parent_task: &str, tick: u64) -> String {
    format!("{parent_task}/status/{tick}")
}

/// The monitor signs the subject's report and embeds it in its next status update.
pub fn attest(
    keys: &KeyRegistry,
    attester: &AgentId,
    sub: &SubReport,
    embedded_in: &str,
) -> Result<AttestationReport, IdentityError> {
    let mut r = AttestationReport {
        attester: attester.clone(),
        subject: sub.subject.clone(),
        subtask_id: sub.subtask_id.clone(),
        summary: sub.summary,
        subject_signature: sub.signature,
        signature: Digest::default(),
        embedded_in: embedded_in.to_string(),
    };
    r.signature = keys.sign_value(attester, &ReportBody(&r))?;
    Ok(r)
}

/// Contractual facts a chain is checked against.
#[derive(Debug, Clone, Default)]
pub struct ChainContext {
    pub root_task_id: String,
    /// `(monitor, subject)` pairs bound by a contract.
    pub monitors: BTreeSet<(AgentId, AgentId)>,
    /// Parent task id to the subtask ids of its decomposition.
    pub decomposition: BTreeMap<String, BTreeSet<String>>,
    pub certified_monitors: BTreeSet<AgentId>,
    pub require_certification: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainFailureReason {
    BadSignature,
    SubjectSignatureMismatch,
    QualityOutOfRange,
    BrokenContinuity,
    NotContractedMonitor,
    ForeignSubtask,
    InvalidEmbedding,
    UncertifiedMonitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFailure {
    pub link: usize,
    pub attester: AgentId,
    pub subject: AgentId,
    pub reason: ChainFailureReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Valid { links_checked: usize },
    Invalid(ChainFailure),
}

impl ChainStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, ChainStatus::Valid { .. })
    }

    pub fn failure(&self) -> Option<&ChainFailure> {
        match self {
            ChainStatus::Invalid(f) => Some(f),
            ChainStatus::Valid { .. } => None,
        }
    }
}

/// Link `i` is the attestation by agent `i` about agent `i + 1`, root-ward first.
/// Returns the first failing link.
pub fn verify_attestation_chain(chain: &[AttestationReport], keys: &KeyRegistry, ctx: &ChainContext) -> ChainStatus {
    let mut parent_task = ctx.root_task_id.as_str();
    let mut expected_attester: Option<&AgentId> = None;
    for (i, r) in chain.iter().enumerate() {
        let fail = |reason| {
            ChainStatus::Invalid(ChainFailure { link: i, attester: r.attester.clone(), subject: r.subject.clone(), reason })
        };
        use ChainFailureReason::*;
        if !r.signature_valid(keys) {
            return fail(BadSignature);
        }
        if !r.subject_signature_valid(keys) {
            return fail(SubjectSignatureMismatch);
        }
        if !(0.0..=1.0).contains(&r.summary.quality) {
            return fail(QualityOutOfRange);
        }
        if expected_attester.is_some_and(|a| a != &r.attester) {
            return fail(BrokenContinuity);
        }
        if !ctx.monitors.contains(&(r.attester.clone(), r.subject.clone())) {
            return fail(NotContractedMonitor);
        }
        if !ctx.decomposition.get(parent_task).is_some_and(|kids| kids.contains(&r.subtask_id)) {
            return fail(ForeignSubtask);
        }
        if !r.embedded_in.starts_with(&format!("{parent_task}/status/")) {
            return fail(InvalidEmbedding);
        }
        if ctx.require_certification && !ctx.certified_monitors.contains(&r.attester) {
            return fail(UncertifiedMonitor);
        }
        parent_task = &r.subtask_id;
        expected_attester = Some(&r.subject);
    }
    ChainStatus::Valid { links_checked: chain.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::SecretKey;

    /// Agents a0..a{depth-1}; task ids root, root.0, root.0.0, ...
    fn honest_chain(depth: usize) -> (KeyRegistry, ChainContext, Vec<AttestationReport>) {
        let mut keys = KeyRegistry::new();
        let agents: Vec<AgentId> = (0..depth)
            .map(|i| {
                let a = AgentId::derive(&format!("a{i}"));
                keys.register(a.clone(), SecretKey::derive(9, &format!("a{i}"))).unwrap();
                a
            })
            .collect();
        let mut ctx = ChainContext { root_task_id: "root".into(), ..Default::default() };
        let mut chain = Vec::new();
        let mut parent = "root".to_string();
        for i in 0..depth - 1 {
            let sub_id = format!("{parent}.0");
            ctx.decomposition.entry(parent.clone()).or_default().insert(sub_id.clone());
            ctx.monitors.insert((agents[i].clone(), agents[i + 1].clone()));
            ctx.certified_monitors.insert(agents[i].clone());
            let summary = AttestationSummary { completed: true, quality: 0.9, resources: 3 };
            let sub = SubReport::sign(&keys, &agents[i + 1], &sub_id, summary).unwrap();
            chain.push(attest(&keys, &agents[i], &sub, &status_update_id(&parent, 10)).unwrap());
            parent = sub_id;
        }
        (keys, ctx, chain)
    }

    #[test]
    fn honest_chains_are_valid() {
        for d in 2..=5 {
            let (keys, ctx, chain) = honest_chain(d);
            assert_eq!(verify_attestation_chain(&chain, &keys, &ctx), ChainStatus::Valid { links_checked: d - 1 });
        }
    }

    #[test]
    fn forged_quality_fails_at_that_link() {
        let (keys, ctx, mut chain) = honest_chain(3);
        let (b, c, id) = (chain[1].attester.clone(), chain[1].subject.clone(), chain[1].subtask_id.clone());
        let honest = SubReport::sign(&keys, &c, &id, AttestationSummary { quality: 0.4, ..chain[1].summary }).unwrap();
        // b inflates the quality and signs its own report over the inflated value
        let inflated = SubReport { summary: AttestationSummary { quality: 0.9, ..honest.summary }, ..honest };
        chain[1] = attest(&keys, &b, &inflated, &chain[1].embedded_in).unwrap();
        let status = verify_attestation_chain(&chain, &keys, &ctx);
        let f = status.failure().unwrap();
        assert_eq!((f.link, f.reason), (1, ChainFailureReason::SubjectSignatureMismatch));
    }

    #[test]
    fn uncertified_monitor_rejected() {
        let (keys, mut ctx, chain) = honest_chain(3);
        ctx.require_certification = true;
        ctx.certified_monitors.remove(&chain[1].attester);
        let f = verify_attestation_chain(&chain, &keys, &ctx);
        assert_eq!(f.failure().unwrap().reason, ChainFailureReason::UncertifiedMonitor);
    }

    #[test]
    fn sample_summary_rendering() {
        let mut keys = KeyRegistry::new();
        let (b, c) = (AgentId::derive("b"), AgentId::derive("c"));
        keys.register(b.clone(), SecretKey::derive(1, "b")).unwrap();
        keys.register(c.clone(), SecretKey::derive(1, "c")).unwrap();
        let sub =
            SubReport::sign(&keys, &c, "Sub-task_2", AttestationSummary { completed: true, quality: 0.87, resources: 5 })
                .unwrap();
        let r = attest(&keys, &b, &sub, "root/status/4").unwrap();
        assert_eq!(r.to_string(), "Sub-task_2 completed, quality score: 0.87, resources consumed: 5");
        assert!(r.signature_valid(&keys) && r.subject_signature_valid(&keys));
    }
}
