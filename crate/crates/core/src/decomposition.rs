//! Contract-first decomposition. A task is only handed out once every leaf
//! can be checked by some available verifier; leaves that cannot are split
//! further or routed to human reviewers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto;
use crate::identity::AgentId;
use crate::monitoring::Granularity;
use crate::task::{TaskCharacteristics, TaskNode};
use crate::verification::{
    Mechanism, ModeProfile, VerificationMode, VerificationPolicy, HUMAN_REVIEWER_CERT, MONITOR_CERT,
};
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecompositionError {
    #[error("task {task_id} cannot be decomposed: {reason}")]
    UndecomposableTask { task_id: String, reason: String },
    #[error("capability registry is empty")]
    EmptyRegistry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCapability {
    pub agent: AgentId,
    pub capabilities: BTreeSet<String>,
    #[serde(default)]
    pub successes: u64,
    #[serde(default)]
    pub attempts: u64,
    #[serde(default)]
    pub human: bool,
}

impl AgentCapability {
    /// Laplace-smoothed success estimate.
    pub fn success_rate(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.attempts as f64 + 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierOffer {
    pub mechanism: Mechanism,
    pub min_verifiability: f64,
    #[serde(default)]
    pub handles_subjective: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapabilityRegistry {
    pub agents: Vec<AgentCapability>,
    pub verifiers: Vec<VerifierOffer>,
}

impl CapabilityRegistry {
    pub fn has_human_reviewers(&self) -> bool {
        self.agents.iter().any(|a| a.human)
    }

    /// Best success estimate among non-human agents covering every tag.
    pub fn best_success(&self, required: &BTreeSet<String>) -> Option<f64> {
        self.agents
            .iter()
            .filter(|a| !a.human && required.is_subset(&a.capabilities))
            .map(AgentCapability::success_rate)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |q| q.max(p))))
    }

    fn candidate_modes(&self, c: &TaskCharacteristics, human_required: bool, tau_s: f64) -> Vec<Mechanism> {
        let mut out: Vec<Mechanism> = self
            .verifiers
            .iter()
            .filter(|v| c.verifiability >= v.min_verifiability && (c.subjectivity <= tau_s || v.handles_subjective))
            .map(|v| v.mechanism)
            .collect();
        if human_required && !out.contains(&Mechanism::ThirdParty) {
            // human reviewers act as third-party verifiers
            out.push(Mechanism::ThirdParty);
        }
        out.sort_by_key(|m| *m as u8);
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanAllocationPolicy {
    pub subjectivity_threshold: f64,
    /// Leaves at or above this criticality get human oversight when set.
    pub criticality_threshold: Option<f64>,
    pub latency_multiplier: f64,
    pub cost_multiplier: f64,
}

impl Default for HumanAllocationPolicy {
    fn default() -> Self {
        Self { subjectivity_threshold: 0.7, criticality_threshold: None, latency_multiplier: 10.0, cost_multiplier: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionConfig {
    pub tau_v: f64,
    pub tau_s: f64,
    pub delta_v: f64,
    pub max_refine_depth: u32,
    pub k: usize,
    pub human: HumanAllocationPolicy,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { tau_v: 0.6, tau_s: 0.7, delta_v: 0.2, max_refine_depth: 6, k: 3, human: HumanAllocationPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafAssignmentPlan {
    pub task_id: String,
    pub required_capabilities: BTreeSet<String>,
    pub candidate_verification_modes: Vec<Mechanism>,
    pub task: TaskNode,
    /// Nodes of the original tree whose work this leaf carries.
    pub covers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub success_prob: f64,
    pub total_cost: Micros,
    pub makespan: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionProposal {
    pub proposal_id: String,
    pub root_task_id: String,
    /// Execution tree whose leaves are exactly `leaves`.
    pub structure: TaskNode,
    pub leaves: Vec<LeafAssignmentPlan>,
    /// Ordering edges `(before, after)` between leaf ids.
    pub dag: Vec<(String, String)>,
    pub estimates: Estimates,
}

impl DecompositionProposal {
    pub fn leaf(&self, task_id: &str) -> Option<&LeafAssignmentPlan> {
        self.leaves.iter().find(|l| l.task_id == task_id)
    }
}

fn undecomposable(task_id: &str, reason: impl Into<String>) -> DecompositionError {
    DecompositionError::UndecomposableTask { task_id: task_id.to_string(), reason: reason.into() }
}

/// Frontier of the tree at `depth`; truncated nodes become leaves.
fn cut(node: &TaskNode, depth: u32, covers: &mut BTreeMap<String, Vec<String>>) -> TaskNode {
    if depth == 0 || node.is_leaf() {
        covers.insert(node.task_id.clone(), node.leaves().iter().map(|l| l.task_id.clone()).collect());
        let mut n = node.clone();
        n.children.clear();
        return n;
    }
    let mut n = node.clone();
    n.children = node.children.iter().map(|c| cut(c, depth - 1, covers)).collect();
    n
}

fn tree_depth(n: &TaskNode) -> u32 {
    n.children.iter().map(|c| 1 + tree_depth(c)).max().unwrap_or(0)
}

/// Two parallel children with raised verifiability and halved cost and duration.
pub fn split_leaf(leaf: &TaskNode, delta_v: f64) -> Vec<TaskNode> {
    (0..2u8)
        .map(|i| {
            let d = crypto::digest_parts(&[b"split", &leaf.ground_truth.to_be_bytes(), &[i]]);
            let gt = u64::from_be_bytes(d.as_bytes()[..8].try_into().expect("8 bytes"));
            let c = &leaf.characteristics;
            let characteristics = TaskCharacteristics {
                verifiability: (c.verifiability + delta_v).min(1.0),
                cost_est: c.cost_est / 2,
                duration_est: (c.duration_est / 2).max(1),
                ..c.clone()
            };
            TaskNode { human_required: leaf.human_required, ..TaskNode::leaf(format!("{}.s{i}", leaf.task_id), characteristics, gt) }
        })
        .collect()
}

fn refine_node(
    node: &mut TaskNode,
    registry: &CapabilityRegistry,
    cfg: &DecompositionConfig,
    budget: u32,
) -> Result<(), DecompositionError> {
    if !node.is_leaf() {
        for c in &mut node.children {
            refine_node(c, registry, cfg, budget)?;
        }
        return Ok(());
    }
    let c = &node.characteristics;
    if registry.best_success(&c.resource_requirements).is_none() {
        return Err(undecomposable(&node.task_id, "no registered agent offers the required capabilities"));
    }
    if c.subjectivity > cfg.tau_s {
        if registry.has_human_reviewers() {
            node.human_required = true;
            return Ok(());
        }
        return Err(undecomposable(&node.task_id, "subjective leaf and no human reviewer available"));
    }
    let modes = registry.candidate_modes(c, node.human_required, cfg.tau_s);
    if (c.verifiability >= cfg.tau_v || node.human_required) && !modes.is_empty() {
        return Ok(());
    }
    if budget == 0 {
        return Err(undecomposable(&node.task_id, "refinement depth exhausted"));
    }
    node.children = split_leaf(node, cfg.delta_v);
    node.ordering = crate::task::Ordering::Parallel;
    for ch in &mut node.children {
        refine_node(ch, registry, cfg, budget - 1)?;
    }
    Ok(())
}

fn leaf_ids(n: &TaskNode) -> Vec<String> {
    n.leaves().iter().map(|l| l.task_id.clone()).collect()
}

fn dag_edges(n: &TaskNode, out: &mut Vec<(String, String)>) {
    if n.ordering == crate::task::Ordering::Sequential {
        for w in n.children.windows(2) {
            for a in leaf_ids(&w[0]) {
                for b in leaf_ids(&w[1]) {
                    out.push((a.clone(), b));
                }
            }
        }
    }
    for c in &n.children {
        dag_edges(c, out);
    }
}

fn human_factor(leaf: &TaskNode, f: f64) -> f64 {
    if leaf.human_required {
        f
    } else {
        1.0
    }
}

/// Success is the product of per-leaf estimates, cost their sum, makespan the
/// longest path through the ordering DAG.
pub fn compute_estimates(
    leaves: &[LeafAssignmentPlan],
    dag: &[(String, String)],
    registry: &CapabilityRegistry,
    human: &HumanAllocationPolicy,
) -> Estimates {
    let success_prob = leaves
        .iter()
        .map(|l| registry.best_success(&l.required_capabilities).unwrap_or(0.0))
        .product::<f64>();
    let total_cost = leaves
        .iter()
        .map(|l| (l.task.characteristics.cost_est as f64 * human_factor(&l.task, human.cost_multiplier)).round() as Micros)
        .sum();
    let dur: BTreeMap<&str, Tick> = leaves
        .iter()
        .map(|l| {
            let d = l.task.characteristics.duration_est as f64 * human_factor(&l.task, human.latency_multiplier);
            (l.task_id.as_str(), d.round() as Tick)
        })
        .collect();
    // leaves are in tree order, and every edge points forward in that order
    let mut finish: BTreeMap<&str, Tick> = BTreeMap::new();
    for l in leaves {
        let start = dag
            .iter()
            .filter(|(_, b)| b == &l.task_id)
            .filter_map(|(a, _)| finish.get(a.as_str()).copied())
            .max()
            .unwrap_or(0);
        finish.insert(l.task_id.as_str(), start + dur[l.task_id.as_str()]);
    }
    Estimates { success_prob, total_cost, makespan: finish.values().copied().max().unwrap_or(0) }
}

fn build(
    proposal_id: String,
    root_task_id: &str,
    structure: TaskNode,
    covers: &BTreeMap<String, Vec<String>>,
    registry: &CapabilityRegistry,
    cfg: &DecompositionConfig,
) -> DecompositionProposal {
    let leaves: Vec<LeafAssignmentPlan> = structure
        .leaves()
        .into_iter()
        .map(|l| {
            let origin = covers.keys().filter(|k| l.task_id == **k || l.task_id.starts_with(&format!("{k}.s"))).max_by_key(|k| k.len());
            LeafAssignmentPlan {
                task_id: l.task_id.clone(),
                required_capabilities: l.characteristics.resource_requirements.clone(),
                candidate_verification_modes: registry.candidate_modes(&l.characteristics, l.human_required, cfg.tau_s),
                task: l.clone(),
                covers: origin.map(|o| covers[o].clone()).unwrap_or_default(),
            }
        })
        .collect();
    let mut dag = Vec::new();
    dag_edges(&structure, &mut dag);
    let estimates = compute_estimates(&leaves, &dag, registry, &cfg.human);
    DecompositionProposal { proposal_id, root_task_id: root_task_id.to_string(), structure, leaves, dag, estimates }
}

fn covers_of(p: &DecompositionProposal) -> BTreeMap<String, Vec<String>> {
    p.leaves.iter().map(|l| (l.task_id.clone(), l.covers.clone())).collect()
}

/// Split every leaf that is not yet verifiable; fixpoint on already-compliant proposals.
pub fn refine_contract_first(
    proposal: &DecompositionProposal,
    registry: &CapabilityRegistry,
    cfg: &DecompositionConfig,
) -> Result<DecompositionProposal, DecompositionError> {
    let mut structure = proposal.structure.clone();
    refine_node(&mut structure, registry, cfg, cfg.max_refine_depth)?;
    if structure == proposal.structure {
        return Ok(proposal.clone());
    }
    let covers = covers_of(proposal);
    Ok(build(proposal.proposal_id.clone(), &proposal.root_task_id, structure, &covers, registry, cfg))
}

fn scalarize(ps: &[DecompositionProposal]) -> Vec<f64> {
    let max_cost = ps.iter().map(|p| p.estimates.total_cost).max().unwrap_or(0).max(1) as f64;
    let max_span = ps.iter().map(|p| p.estimates.makespan).max().unwrap_or(0).max(1) as f64;
    ps.iter()
        .map(|p| {
            0.5 * (1.0 - p.estimates.success_prob)
                + 0.25 * p.estimates.total_cost as f64 / max_cost
                + 0.25 * p.estimates.makespan as f64 / max_span
        })
        .collect()
}

/// Up to `k` contract-first proposals built from successive cuts of the tree,
/// best scalarized estimate first.
pub fn propose(
    root: &TaskNode,
    registry: &CapabilityRegistry,
    cfg: &DecompositionConfig,
) -> Result<Vec<DecompositionProposal>, DecompositionError> {
    if registry.agents.is_empty() {
        return Err(DecompositionError::EmptyRegistry);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut last_err = None;
    for depth in (0..=tree_depth(root)).rev() {
        let mut covers = BTreeMap::new();
        let structure = cut(root, depth, &mut covers);
        let key: Vec<String> = leaf_ids(&structure);
        if !seen.insert(key) {
            continue;
        }
        let draft = build(format!("{}#p{depth}", root.task_id), &root.task_id, structure, &covers, registry, cfg);
        match refine_contract_first(&draft, registry, cfg) {
            Ok(p) => out.push(p),
            Err(e) => last_err = Some(e),
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or_else(|| undecomposable(&root.task_id, "no proposal")));
    }
    let scores = scalarize(&out);
    let mut idx: Vec<usize> = (0..out.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| out[a].proposal_id.cmp(&out[b].proposal_id)));
    let k = cfg.k.max(1);
    Ok(idx.into_iter().take(k).map(|i| out[i].clone()).collect())
}

/// Flag leaves that need a human and recompute estimates with human multipliers.
pub fn mark_human_nodes(
    proposal: &DecompositionProposal,
    policy: &HumanAllocationPolicy,
    registry: &CapabilityRegistry,
    tau_s: f64,
) -> DecompositionProposal {
    let mut p = proposal.clone();
    fn mark(n: &mut TaskNode, policy: &HumanAllocationPolicy) {
        if n.is_leaf() {
            let c = &n.characteristics;
            if c.subjectivity > policy.subjectivity_threshold
                || policy.criticality_threshold.is_some_and(|t| c.criticality >= t)
            {
                n.human_required = true;
            }
        }
        for ch in &mut n.children {
            mark(ch, policy);
        }
    }
    mark(&mut p.structure, policy);
    for l in &mut p.leaves {
        mark(&mut l.task, policy);
        l.candidate_verification_modes = registry.candidate_modes(&l.task.characteristics, l.task.human_required, tau_s);
    }
    p.estimates = compute_estimates(&p.leaves, &p.dag, registry, policy);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceBoundaries {
    pub spend_cap: Micros,
    pub capability_scope: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reporting {
    pub cadence: Tick,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpecification {
    pub task_id: String,
    pub role: String,
    pub resource_boundaries: ResourceBoundaries,
    pub reporting: Reporting,
    pub required_certifications: BTreeSet<String>,
    pub verification_policy: VerificationPolicy,
    pub human_required: bool,
    pub characteristics: TaskCharacteristics,
}

impl TaskSpecification {
    pub fn digest(&self) -> crypto::Digest {
        crypto::sha256(&serde_json::to_vec(self).expect("specification serializes"))
    }
}

/// Cheapest verification mode whose assurance covers the leaf's criticality.
pub fn finalize(plan: &LeafAssignmentPlan, budget_share: Micros) -> TaskSpecification {
    let c = &plan.task.characteristics;
    let profile = ModeProfile::cheapest_for(c.criticality);
    let mut required_certifications = BTreeSet::new();
    if plan.task.human_required {
        required_certifications.insert(HUMAN_REVIEWER_CERT.to_string());
    }
    if profile.mode == VerificationMode::Strict {
        required_certifications.insert(MONITOR_CERT.to_string());
    }
    let role = match plan.required_capabilities.iter().next() {
        Some(cap) => format!("{cap}-executor"),
        None => "executor".to_string(),
    };
    TaskSpecification {
        task_id: plan.task_id.clone(),
        role,
        resource_boundaries: ResourceBoundaries {
            spend_cap: budget_share,
            capability_scope: plan.required_capabilities.clone(),
        },
        reporting: Reporting { cadence: profile.max_cadence.max(1), granularity: profile.granularity },
        required_certifications,
        verification_policy: VerificationPolicy::for_mode(profile.mode),
        human_required: plan.task.human_required,
        characteristics: c.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_task, Ordering, TaskProfile};

    fn registry(human: bool) -> CapabilityRegistry {
        let mut agents = vec![AgentCapability {
            agent: AgentId::derive("w"),
            capabilities: ["code".to_string()].into(),
            successes: 8,
            attempts: 8,
            human: false,
        }];
        if human {
            agents.push(AgentCapability {
                agent: AgentId::derive("h"),
                capabilities: BTreeSet::new(),
                successes: 0,
                attempts: 0,
                human: true,
            });
        }
        CapabilityRegistry {
            agents,
            verifiers: vec![VerifierOffer { mechanism: Mechanism::Direct, min_verifiability: 0.0, handles_subjective: false }],
        }
    }

    fn leaf(v: f64, s: f64) -> TaskNode {
        TaskNode::leaf(
            "t",
            TaskCharacteristics {
                verifiability: v,
                subjectivity: s,
                duration_est: 8,
                cost_est: 800,
                resource_requirements: ["code".to_string()].into(),
                ..Default::default()
            },
            1,
        )
    }

    #[test]
    fn single_leaf_single_proposal() {
        let ps = propose(&leaf(0.9, 0.0), &registry(false), &DecompositionConfig::default()).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].leaves.len(), 1);
        assert_eq!(ps[0].leaves[0].candidate_verification_modes, vec![Mechanism::Direct]);
    }

    #[test]
    fn low_verifiability_splits_twice() {
        let ps = propose(&leaf(0.3, 0.0), &registry(false), &DecompositionConfig::default()).unwrap();
        let p = &ps[0];
        assert_eq!(p.leaves.len(), 4);
        for l in &p.leaves {
            assert!((l.task.characteristics.verifiability - 0.7).abs() < 1e-12);
            assert_eq!(l.task.characteristics.cost_est, 200);
            assert_eq!(l.covers, vec!["t".to_string()]);
        }
    }

    #[test]
    fn missing_capability_is_undecomposable() {
        let mut t = leaf(0.9, 0.0);
        t.characteristics.resource_requirements = ["quantum".to_string()].into();
        assert!(matches!(
            propose(&t, &registry(false), &DecompositionConfig::default()),
            Err(DecompositionError::UndecomposableTask { .. })
        ));
    }

    #[test]
    fn subjective_leaf_goes_to_human() {
        let ps = propose(&leaf(0.9, 0.9), &registry(true), &DecompositionConfig::default()).unwrap();
        assert_eq!(ps[0].leaves.len(), 1);
        assert!(ps[0].leaves[0].task.human_required);
        assert!(propose(&leaf(0.9, 0.9), &registry(false), &DecompositionConfig::default()).is_err());
    }

    #[test]
    fn compliant_proposal_is_fixpoint() {
        let cfg = DecompositionConfig::default();
        let p = propose(&leaf(0.9, 0.0), &registry(false), &cfg).unwrap().remove(0);
        assert_eq!(refine_contract_first(&p, &registry(false), &cfg).unwrap(), p);
    }

    #[test]
    fn human_marking_scales_makespan() {
        let reg = registry(true);
        let cfg = DecompositionConfig::default();
        let mut root = TaskNode {
            task_id: "r".into(),
            characteristics: TaskCharacteristics { verifiability: 0.9, duration_est: 20, ..Default::default() },
            ordering: Ordering::Sequential,
            children: vec![leaf(0.9, 0.0), leaf(0.9, 0.0)],
            ground_truth: 0,
            human_required: false,
        };
        root.children[0].task_id = "r.0".into();
        root.children[1].task_id = "r.1".into();
        root.children[1].characteristics.subjectivity = 0.65;
        let p = propose(&root, &reg, &cfg).unwrap().into_iter().find(|p| p.leaves.len() == 2).unwrap();
        assert_eq!(p.estimates.makespan, 16);
        let none = mark_human_nodes(&p, &cfg.human, &reg, cfg.tau_s);
        assert_eq!(none.estimates.makespan, 16);
        let policy = HumanAllocationPolicy { subjectivity_threshold: 0.6, ..Default::default() };
        let marked = mark_human_nodes(&p, &policy, &reg, cfg.tau_s);
        // sequential: 8 ticks, then the human leaf at 8 * 10
        assert_eq!(marked.estimates.makespan, 8 + 80);
        assert!(marked.leaves[1].task.human_required && !marked.leaves[0].task.human_required);
        let oversight = HumanAllocationPolicy { criticality_threshold: Some(1.0), ..Default::default() };
        let mut crit = p.clone();
        crit.leaves[0].task.characteristics.criticality = 1.0;
        assert!(mark_human_nodes(&crit, &oversight, &reg, cfg.tau_s).leaves[0].task.human_required);
    }

    #[test]
    fn finalize_picks_cheapest_sufficient_mode() {
        let mut plan = propose(&leaf(0.9, 0.0), &registry(false), &DecompositionConfig::default()).unwrap()[0].leaves[0].clone();
        plan.task.characteristics.criticality = 0.9;
        let s = finalize(&plan, 1000);
        assert_eq!(s.verification_policy.mode, VerificationMode::Strict);
        assert!(s.verification_policy.escrow_trigger);
        plan.task.characteristics.criticality = 0.1;
        let s = finalize(&plan, 1000);
        assert_eq!(s.verification_policy.mode, VerificationMode::Spot);
        assert_eq!(s.reporting.cadence, 20);
        plan.task.human_required = true;
        assert!(finalize(&plan, 1000).required_certifications.contains(HUMAN_REVIEWER_CERT));
    }

    #[test]
    fn generated_trees_satisfy_contract_first() {
        let reg = CapabilityRegistry {
            agents: ["code", "data", "analysis"]
                .iter()
                .map(|c| AgentCapability {
                    agent: AgentId::derive(c),
                    capabilities: [c.to_string()].into(),
                    successes: 0,
                    attempts: 0,
                    human: false,
                })
                .chain([AgentCapability {
                    agent: AgentId::derive("human"),
                    capabilities: BTreeSet::new(),
                    successes: 0,
                    attempts: 0,
                    human: true,
                }])
                .collect(),
            verifiers: vec![VerifierOffer { mechanism: Mechanism::Direct, min_verifiability: 0.0, handles_subjective: false }],
        };
        let cfg = DecompositionConfig::default();
        for seed in 0..30 {
            let t = generate_task(seed, 2, 2, &TaskProfile::default());
            let ps = propose(&t, &reg, &cfg).unwrap();
            assert!(ps.len() <= cfg.k);
            assert_eq!(ps, propose(&t, &reg, &cfg).unwrap());
            for p in &ps {
                let covered: BTreeSet<&String> = p.leaves.iter().flat_map(|l| &l.covers).collect();
                let original: BTreeSet<String> = t.leaves().iter().map(|l| l.task_id.clone()).collect();
                assert_eq!(covered, original.iter().collect());
                for l in &p.leaves {
                    assert!(!l.candidate_verification_modes.is_empty());
                    assert!(l.task.characteristics.verifiability >= cfg.tau_v || l.task.human_required);
                }
            }
        }
    }
}
