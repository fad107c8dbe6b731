//! Completion verification: direct oracle inspection, third-party audit,
//! emulated succinct proofs, Schelling-point panels, and two-stage chain
//! verification.

mod policy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{self, Digest, Signature, Tag};
use crate::identity::{AgentId, Claim, IdentityError, KeyRegistry, VerifiableCredential};
use crate::monitoring::{verify_attestation_chain, AttestationReport, ChainContext, ChainStatus};
use crate::task::{oracle_evaluate, Artifact, TaskError, TaskNode};
use crate::{Micros, Tick};

pub use policy::{ArtifactRequirement, ArtifactType, ModeProfile, VerificationMode, VerificationPolicy, MODE_TABLE};

/// Default pass threshold on oracle quality; inclusive.
pub const PASS_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerificationError {
    #[error("verification mechanism unavailable: {0}")]
    MechanismUnavailable(String),
    #[error("auditor {0} is not certified")]
    UncertifiedAuditor(AgentId),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Direct,
    ThirdParty,
    Proof,
    Consensus,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Direct => "direct",
            Mechanism::ThirdParty => "third_party",
            Mechanism::Proof => "proof",
            Mechanism::Consensus => "consensus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub pass: bool,
    pub quality: f64,
    pub mechanism: Mechanism,
    pub evidence: Vec<String>,
    pub verifiers: Vec<AgentId>,
    pub signatures: Vec<Signature>,
    /// Verification cost charged for producing this verdict.
    pub fee: Micros,
}

struct VerdictBody<'a>(&'a Verdict);

impl Canonical for VerdictBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        let v = self.0;
        w.str("verdict")
            .str(&v.task_id)
            .bool(v.pass)
            .f64(v.quality)
            .str(v.mechanism.as_str())
            .str_seq(v.evidence.iter())
            .u64(v.fee);
    }
}

impl Verdict {
    pub fn unsigned(task_id: &str, pass: bool, quality: f64, mechanism: Mechanism, evidence: Vec<String>, fee: Micros) -> Self {
        Verdict {
            task_id: task_id.to_string(),
            pass,
            quality: quality.clamp(0.0, 1.0),
            mechanism,
            evidence,
            verifiers: Vec::new(),
            signatures: Vec::new(),
            fee,
        }
    }

    pub fn sign_by(mut self, keys: &KeyRegistry, verifiers: &[AgentId]) -> Result<Self, IdentityError> {
        for v in verifiers {
            let sig = keys.sign_value(v, &VerdictBody(&self))?;
            self.verifiers.push(v.clone());
            self.signatures.push(sig);
        }
        Ok(self)
    }

    pub fn verify_signatures(&self, keys: &KeyRegistry) -> bool {
        !self.verifiers.is_empty()
            && self.verifiers.len() == self.signatures.len()
            && self.verifiers.iter().zip(&self.signatures).all(|(a, s)| keys.verify_value(a, &VerdictBody(self), s))
    }
}

/// How a verifier forms its judgement. Only `Honest` consults the oracle faithfully.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteBehavior {
    #[default]
    Honest,
    AlwaysPass,
    AlwaysFail,
    Invert,
}

impl VoteBehavior {
    /// Quality the verifier reports given the true oracle quality.
    pub fn assess(self, true_quality: f64, threshold: f64) -> f64 {
        match self {
            VoteBehavior::Honest => true_quality,
            VoteBehavior::AlwaysPass => 1.0,
            VoteBehavior::AlwaysFail => 0.0,
            VoteBehavior::Invert => {
                if true_quality >= threshold {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Fixed verification fees by mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationCosts {
    pub direct: Micros,
    pub proof_check: Micros,
    pub audit: Micros,
}

impl Default for VerificationCosts {
    fn default() -> Self {
        Self { direct: 5_000, proof_check: 20_000, audit: 30_000 }
    }
}

/// The delegator inspects the artifact with its own oracle.
pub fn verify_direct(
    keys: &KeyRegistry,
    verifier: &AgentId,
    oracle: Option<&TaskNode>,
    artifact: &Artifact,
    threshold: f64,
    fee: Micros,
) -> Result<Verdict, VerificationError> {
    let task = oracle.ok_or_else(|| VerificationError::MechanismUnavailable(format!("no oracle for {}", artifact.task_id)))?;
    let q = oracle_evaluate(task, artifact)?;
    let evidence = vec![artifact.content_digest.to_hex()];
    Ok(Verdict::unsigned(&task.task_id, q >= threshold, q, Mechanism::Direct, evidence, fee).sign_by(keys, std::slice::from_ref(verifier))?)
}

/// Emulated execution proof: a keyed commitment over program, input and output.
/// Anyone holding the shared key can recompute it, so it is neither
/// zero-knowledge nor publicly verifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofArtifact {
    pub program_id: String,
    pub input_digest: Digest,
    pub output_digest: Digest,
    pub commitment: Tag,
}

fn proof_message(program_id: &str, input: &Digest, output: &Digest) -> Vec<u8> {
    let mut w = CanonWriter::new();
    w.str("proof").str(program_id).bytes(input.as_bytes()).bytes(output.as_bytes());
    w.into_bytes()
}

impl ProofArtifact {
    pub fn prove(shared_key: &[u8], program_id: &str, input_digest: Digest, output_digest: Digest) -> Self {
        let commitment = crypto::mac(shared_key, &proof_message(program_id, &input_digest, &output_digest));
        Self { program_id: program_id.to_string(), input_digest, output_digest, commitment }
    }

    /// Proof for executing `task` that produced `artifact`.
    pub fn for_artifact(shared_key: &[u8], task: &TaskNode, artifact: &Artifact) -> Self {
        Self::prove(shared_key, &task.task_id, task.structural_hash(), artifact.content_digest)
    }
}

/// Constant-cost check: the commitment must recompute and both digests must match expectations.
pub fn verify_proof(
    keys: &KeyRegistry,
    verifier: &AgentId,
    proof: &ProofArtifact,
    expected_input: &Digest,
    expected_output: &Digest,
    shared_key: &[u8],
    fee: Micros,
) -> Result<Verdict, VerificationError> {
    let msg = proof_message(&proof.program_id, &proof.input_digest, &proof.output_digest);
    let pass = crypto::mac_verify(shared_key, &msg, &proof.commitment)
        && proof.input_digest == *expected_input
        && proof.output_digest == *expected_output;
    let q = if pass { 1.0 } else { 0.0 };
    let evidence = vec![proof.commitment.to_hex()];
    Ok(Verdict::unsigned(&proof.program_id, pass, q, Mechanism::Proof, evidence, fee).sign_by(keys, std::slice::from_ref(verifier))?)
}

pub const AUDITOR_CERT: &str = "cert:auditor";
pub const MONITOR_CERT: &str = "cert:monitor";
pub const HUMAN_REVIEWER_CERT: &str = "cert:human_reviewer";

/// Certification credentials issued by a fixed set of trusted certifiers.
#[derive(Debug, Clone, Default)]
pub struct CertificationRegistry {
    certifiers: BTreeSet<AgentId>,
    held: BTreeMap<AgentId, Vec<VerifiableCredential>>,
}

impl CertificationRegistry {
    pub fn new<I: IntoIterator<Item = AgentId>>(certifiers: I) -> Self {
        Self { certifiers: certifiers.into_iter().collect(), held: BTreeMap::new() }
    }

    pub fn certify(
        &mut self,
        keys: &KeyRegistry,
        certifier: &AgentId,
        subject: &AgentId,
        kind: &str,
        tick: Tick,
    ) -> Result<VerifiableCredential, IdentityError> {
        if !self.certifiers.contains(certifier) {
            return Err(IdentityError::UnknownAgent(certifier.clone()));
        }
        let claim = Claim { kind: kind.to_string(), task_id: String::new(), date: tick, spec_digest: Digest::default(), quality: 1.0 };
        let vc = VerifiableCredential::issue(keys, certifier, subject, claim)?;
        self.held.entry(subject.clone()).or_default().push(vc.clone());
        Ok(vc)
    }

    pub fn is_certified(&self, keys: &KeyRegistry, agent: &AgentId, kind: &str) -> bool {
        self.held.get(agent).is_some_and(|vcs| {
            vcs.iter().any(|vc| vc.claim.kind == kind && self.certifiers.contains(&vc.issuer) && vc.verify(keys))
        })
    }
}

/// A certified auditor runs the oracle on the delegator's behalf and signs the verdict.
#[allow(clippy::too_many_arguments)]
pub fn verify_third_party(
    keys: &KeyRegistry,
    certs: &CertificationRegistry,
    auditor: &AgentId,
    behavior: VoteBehavior,
    task: &TaskNode,
    artifact: &Artifact,
    threshold: f64,
    fee: Micros,
) -> Result<Verdict, VerificationError> {
    if !certs.is_certified(keys, auditor, AUDITOR_CERT) {
        return Err(VerificationError::UncertifiedAuditor(auditor.clone()));
    }
    let q = behavior.assess(oracle_evaluate(task, artifact)?, threshold);
    let evidence = vec![artifact.content_digest.to_hex()];
    Ok(Verdict::unsigned(&task.task_id, q >= threshold, q, Mechanism::ThirdParty, evidence, fee)
        .sign_by(keys, std::slice::from_ref(auditor))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelVote {
    pub verifier: AgentId,
    pub pass: bool,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub verdict: Verdict,
    pub votes: Vec<PanelVote>,
    /// Reward per panelist; minority voters receive 0.
    pub rewards: BTreeMap<AgentId, Micros>,
}

/// Split `pool` equally among the majority; the integer remainder goes to the
/// lexicographically first majority voter.
pub fn split_rewards(majority: &[AgentId], minority: &[AgentId], pool: Micros) -> BTreeMap<AgentId, Micros> {
    let mut rewards: BTreeMap<AgentId, Micros> = minority.iter().map(|a| (a.clone(), 0)).collect();
    let mut sorted: Vec<&AgentId> = majority.iter().collect();
    sorted.sort();
    let n = sorted.len() as Micros;
    if n == 0 {
        return rewards;
    }
    let share = pool / n;
    for (i, a) in sorted.iter().enumerate() {
        let extra = if i == 0 { pool % n } else { 0 };
        rewards.insert((*a).clone(), share + extra);
    }
    rewards
}

/// Majority vote of an odd panel of at least three independent verifiers.
pub fn schelling_consensus(
    keys: &KeyRegistry,
    panel: &[(AgentId, VoteBehavior)],
    task: &TaskNode,
    artifact: &Artifact,
    reward_pool: Micros,
    threshold: f64,
) -> Result<ConsensusOutcome, VerificationError> {
    let k = panel.len();
    if k < 3 || k.is_multiple_of(2) {
        return Err(VerificationError::InvalidPanel(format!("panel size {k} must be odd and at least 3")));
    }
    if reward_pool == 0 {
        return Err(VerificationError::InvalidPanel("reward pool must be positive".into()));
    }
    let distinct: BTreeSet<&AgentId> = panel.iter().map(|(a, _)| a).collect();
    if distinct.len() != k {
        return Err(VerificationError::InvalidPanel("duplicate panelist".into()));
    }
    let truth = oracle_evaluate(task, artifact)?;
    let mut ordered: Vec<&(AgentId, VoteBehavior)> = panel.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    let votes: Vec<PanelVote> = ordered
        .iter()
        .map(|(a, b)| {
            let q = b.assess(truth, threshold);
            PanelVote { verifier: a.clone(), pass: q >= threshold, quality: q }
        })
        .collect();
    let yes = votes.iter().filter(|v| v.pass).count();
    let pass = yes * 2 > k;
    let (maj, min): (Vec<&PanelVote>, Vec<&PanelVote>) = votes.iter().partition(|v| v.pass == pass);
    let quality = maj.iter().map(|v| v.quality).sum::<f64>() / maj.len() as f64;
    let majority: Vec<AgentId> = maj.iter().map(|v| v.verifier.clone()).collect();
    let minority: Vec<AgentId> = min.iter().map(|v| v.verifier.clone()).collect();
    let rewards = split_rewards(&majority, &minority, reward_pool);
    let evidence = votes.iter().map(|v| format!("{}:{}", v.verifier, if v.pass { "pass" } else { "fail" })).collect();
    let all: Vec<AgentId> = votes.iter().map(|v| v.verifier.clone()).collect();
    let verdict = Verdict::unsigned(&task.task_id, pass, quality, Mechanism::Consensus, evidence, 0).sign_by(keys, &all)?;
    Ok(ConsensusOutcome { verdict, votes, rewards })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeVerdict {
    pub pass: bool,
    /// 1 when the delegatee's own work failed, 2 when its attestation chain did.
    pub failed_stage: Option<u8>,
    pub chain: ChainStatus,
}

/// Stage 1 checks the delegatee's own work; stage 2 checks every attestation link below it.
pub fn verify_chain(
    work: &Verdict,
    chain: &[AttestationReport],
    keys: &KeyRegistry,
    ctx: &ChainContext,
) -> CompositeVerdict {
    let status = verify_attestation_chain(chain, keys, ctx);
    let failed_stage = if !work.pass {
        Some(1)
    } else if !status.is_valid() {
        Some(2)
    } else {
        None
    };
    CompositeVerdict { pass: failed_stage.is_none(), failed_stage, chain: status }
}

pub const COMPLETED_KIND: &str = "task_completed";
pub const FAILED_KIND: &str = "task_failed";

/// Receipt from delegator to delegatee recording the verdict.
pub fn issue_completion_credential(
    keys: &KeyRegistry,
    delegator: &AgentId,
    delegatee: &AgentId,
    spec_digest: Digest,
    verdict: &Verdict,
    date: Tick,
) -> Result<VerifiableCredential, IdentityError> {
    let claim = Claim {
        kind: if verdict.pass { COMPLETED_KIND } else { FAILED_KIND }.to_string(),
        task_id: verdict.task_id.clone(),
        date,
        spec_digest,
        quality: verdict.quality,
    };
    VerifiableCredential::issue(keys, delegator, delegatee, claim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::SecretKey;
    use crate::task::{generate_task, TaskProfile};

    struct World {
        keys: KeyRegistry,
        a: AgentId,
        b: AgentId,
        task: TaskNode,
    }

    fn world() -> World {
        let mut keys = KeyRegistry::new();
        let a = AgentId::derive("a");
        let b = AgentId::derive("b");
        for (x, l) in [(&a, "a"), (&b, "b")] {
            keys.register(x.clone(), SecretKey::derive(4, l)).unwrap();
        }
        World { keys, a, b, task: generate_task(42, 0, 1, &TaskProfile::default()) }
    }

    fn panel(keys: &mut KeyRegistry, behaviors: &[VoteBehavior]) -> Vec<(AgentId, VoteBehavior)> {
        behaviors
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let id = AgentId::derive(&format!("v{i}"));
                if !keys.contains(&id) {
                    keys.register(id.clone(), SecretKey::derive(4, &format!("v{i}"))).unwrap();
                }
                (id, b)
            })
            .collect()
    }

    #[test]
    fn direct_threshold_is_inclusive() {
        let w = world();
        let ok = Artifact::produce(&w.task, &w.b, 0.0, 1.0);
        let v = verify_direct(&w.keys, &w.a, Some(&w.task), &ok, PASS_THRESHOLD, 0).unwrap();
        assert!(v.pass && v.quality == 1.0 && v.verify_signatures(&w.keys));
        let bad = Artifact::produce(&w.task, &w.b, 1.0, 1.0);
        let v = verify_direct(&w.keys, &w.a, Some(&w.task), &bad, PASS_THRESHOLD, 0).unwrap();
        assert!(!v.pass && v.quality == 0.0);
        // degradation(0.2) = 0.64; a threshold at exactly that value passes
        let mid = Artifact::produce(&w.task, &w.b, 0.2, 1.0);
        let q = oracle_evaluate(&w.task, &mid).unwrap();
        assert!(verify_direct(&w.keys, &w.a, Some(&w.task), &mid, q, 0).unwrap().pass);
        assert!(matches!(
            verify_direct(&w.keys, &w.a, None, &ok, PASS_THRESHOLD, 0),
            Err(VerificationError::MechanismUnavailable(_))
        ));
    }

    #[test]
    fn proof_checks() {
        let w = world();
        let key = b"shared";
        let art = Artifact::produce(&w.task, &w.b, 0.0, 1.0);
        let proof = ProofArtifact::for_artifact(key, &w.task, &art);
        let (inp, out) = (w.task.structural_hash(), w.task.truth_digest());
        assert!(verify_proof(&w.keys, &w.a, &proof, &inp, &out, key, 20_000).unwrap().pass);
        let mut bent = proof.clone();
        bent.output_digest = bent.output_digest.with_bit_flipped(3);
        assert!(!verify_proof(&w.keys, &w.a, &bent, &inp, &out, key, 20_000).unwrap().pass);
        assert!(!verify_proof(&w.keys, &w.a, &proof, &inp, &out, b"other", 20_000).unwrap().pass);
    }

    #[test]
    fn third_party_requires_certification() {
        let w = world();
        let mut certs = CertificationRegistry::new([w.a.clone()]);
        let art = Artifact::produce(&w.task, &w.b, 0.0, 1.0);
        let auditor = w.b.clone();
        let r = verify_third_party(&w.keys, &certs, &auditor, VoteBehavior::Honest, &w.task, &art, PASS_THRESHOLD, 1);
        assert!(matches!(r, Err(VerificationError::UncertifiedAuditor(_))));
        certs.certify(&w.keys, &w.a, &auditor, AUDITOR_CERT, 0).unwrap();
        let v = verify_third_party(&w.keys, &certs, &auditor, VoteBehavior::Honest, &w.task, &art, PASS_THRESHOLD, 1).unwrap();
        assert!(v.pass && v.verify_signatures(&w.keys));
    }

    #[test]
    fn consensus_payoffs() {
        let mut w = world();
        let art = Artifact::produce(&w.task, &w.b, 0.0, 1.0);
        let p = panel(&mut w.keys, &[VoteBehavior::Honest; 3]);
        let out = schelling_consensus(&w.keys, &p, &w.task, &art, 300, PASS_THRESHOLD).unwrap();
        assert!(out.verdict.pass && out.rewards.values().all(|&r| r == 100));
        assert!(out.verdict.verify_signatures(&w.keys));

        let p = panel(&mut w.keys, &[VoteBehavior::Honest, VoteBehavior::AlwaysFail, VoteBehavior::Honest]);
        let out = schelling_consensus(&w.keys, &p, &w.task, &art, 301, PASS_THRESHOLD).unwrap();
        assert!(out.verdict.pass);
        assert_eq!(out.rewards[&p[1].0], 0);
        assert_eq!(out.rewards.values().sum::<u64>(), 301);

        let p = panel(&mut w.keys, &[VoteBehavior::Honest, VoteBehavior::AlwaysFail, VoteBehavior::AlwaysFail]);
        assert!(!schelling_consensus(&w.keys, &p, &w.task, &art, 300, PASS_THRESHOLD).unwrap().verdict.pass);

        let p = panel(&mut w.keys, &[VoteBehavior::Honest; 4]);
        assert!(matches!(
            schelling_consensus(&w.keys, &p, &w.task, &art, 300, PASS_THRESHOLD),
            Err(VerificationError::InvalidPanel(_))
        ));
    }

    #[test]
    fn completion_credentials() {
        let w = world();
        let art = Artifact::produce(&w.task, &w.b, 0.0, 1.0);
        let v = verify_direct(&w.keys, &w.a, Some(&w.task), &art, PASS_THRESHOLD, 0).unwrap();
        let vc = issue_completion_credential(&w.keys, &w.a, &w.b, w.task.structural_hash(), &v, 7).unwrap();
        assert!(vc.verify(&w.keys));
        assert_eq!((vc.claim.kind.as_str(), vc.claim.quality), (COMPLETED_KIND, 1.0));
        let bad = Artifact::produce(&w.task, &w.b, 1.0, 1.0);
        let v = verify_direct(&w.keys, &w.a, Some(&w.task), &bad, PASS_THRESHOLD, 0).unwrap();
        let vc = issue_completion_credential(&w.keys, &w.a, &w.b, w.task.structural_hash(), &v, 7).unwrap();
        assert_eq!(vc.claim.kind, FAILED_KIND);
    }
}
