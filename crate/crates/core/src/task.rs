//! Synthetic tasks: characteristic vectors, task trees with a hidden
//! ground-truth oracle, and the complexity floor that decides whether a task
//! is worth delegating at all.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{self, Digest};
use crate::identity::AgentId;
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("artifact for {artifact} presented against task {task}")]
    WrongTask { task: String, artifact: String },
    #[error("invalid task {task_id}: {reason}")]
    Invalid { task_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCharacteristics {
    pub complexity: f64,
    pub criticality: f64,
    pub uncertainty: f64,
    pub verifiability: f64,
    pub reversibility: f64,
    pub contextuality: f64,
    pub subjectivity: f64,
    pub duration_est: Tick,
    pub cost_est: Micros,
    #[serde(default)]
    pub resource_requirements: BTreeSet<String>,
    #[serde(default)]
    pub constraints: BTreeSet<String>,
}

impl Default for TaskCharacteristics {
    fn default() -> Self {
        Self {
            complexity: 0.0,
            criticality: 0.0,
            uncertainty: 0.0,
            verifiability: 1.0,
            reversibility: 1.0,
            contextuality: 0.0,
            subjectivity: 0.0,
            duration_est: 1,
            cost_est: 0,
            resource_requirements: BTreeSet::new(),
            constraints: BTreeSet::new(),
        }
    }
}

impl TaskCharacteristics {
    fn reals(&self) -> [(&'static str, f64); 7] {
        [
            ("complexity", self.complexity),
            ("criticality", self.criticality),
            ("uncertainty", self.uncertainty),
            ("verifiability", self.verifiability),
            ("reversibility", self.reversibility),
            ("contextuality", self.contextuality),
            ("subjectivity", self.subjectivity),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in self.reals() {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0,1]"));
            }
        }
        if self.duration_est < 1 {
            return Err("duration_est must be at least 1 tick".into());
        }
        Ok(())
    }
}

impl Canonical for TaskCharacteristics {
    fn encode(&self, w: &mut CanonWriter) {
        for (_, v) in self.reals() {
            w.f64(v);
        }
        w.u64(self.duration_est)
            .u64(self.cost_est)
            .str_seq(self.resource_requirements.iter())
            .str_seq(self.constraints.iter());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub task_id: String,
    pub characteristics: TaskCharacteristics,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub children: Vec<TaskNode>,
    /// Seed from which the oracle derives the correct artifact digest.
    #[serde(default)]
    pub ground_truth: u64,
    #[serde(default)]
    pub human_required: bool,
}

impl TaskNode {
    pub fn leaf(task_id: impl Into<String>, characteristics: TaskCharacteristics, ground_truth: u64) -> Self {
        Self {
            task_id: task_id.into(),
            characteristics,
            ordering: Ordering::Parallel,
            children: Vec::new(),
            ground_truth,
            human_required: false,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(TaskNode::node_count).sum::<usize>()
    }

    pub fn leaves(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a TaskNode>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    pub fn find(&self, task_id: &str) -> Option<&TaskNode> {
        if self.task_id == task_id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(task_id))
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let mut seen = HashSet::new();
        self.validate_inner(&mut seen)
    }

    fn validate_inner<'a>(&'a self, seen: &mut HashSet<&'a str>) -> Result<(), TaskError> {
        let invalid = |reason: String| TaskError::Invalid { task_id: self.task_id.clone(), reason };
        if !seen.insert(&self.task_id) {
            return Err(invalid("duplicate task id".into()));
        }
        self.characteristics.validate().map_err(invalid)?;
        for c in &self.children {
            if c.characteristics.criticality > self.characteristics.criticality {
                return Err(invalid(format!("child {} is more critical than its parent", c.task_id)));
            }
            c.validate_inner(seen)?;
        }
        Ok(())
    }

    /// Digest of the whole tree's canonical form.
    pub fn structural_hash(&self) -> Digest {
        crypto::sha256(&self.canonical_bytes())
    }

    /// The digest an honest, complete execution of this task produces.
    pub fn truth_digest(&self) -> Digest {
        crypto::digest_parts(&[b"truth", self.task_id.as_bytes(), &self.ground_truth.to_be_bytes()])
    }
}

impl Canonical for TaskNode {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(&self.task_id)
            .nested(&self.characteristics)
            .str(match self.ordering {
                Ordering::Parallel => "parallel",
                Ordering::Sequential => "sequential",
            })
            .u64(self.ground_truth)
            .bool(self.human_required)
            .seq(self.children.iter());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub task_id: String,
    pub producer: AgentId,
    pub content_digest: Digest,
    /// Producer-claimed quality; never trusted by verifiers.
    pub quality_hint: f64,
}

/// Corruption is quantised to thousandths.
pub const CORRUPTION_STEPS: u16 = 1000;

fn corruption_steps(corruption: f64) -> u16 {
    (corruption.clamp(0.0, 1.0) * f64::from(CORRUPTION_STEPS)).round() as u16
}

fn corrupted_digest(truth: &Digest, steps: u16) -> Digest {
    if steps == 0 {
        *truth
    } else {
        crypto::digest_parts(&[b"corrupt", truth.as_bytes(), &steps.to_be_bytes()])
    }
}

impl Artifact {
    /// Output of executing `task` with the given corruption level in [0,1].
    pub fn produce(task: &TaskNode, producer: &AgentId, corruption: f64, quality_hint: f64) -> Self {
        Self {
            task_id: task.task_id.clone(),
            producer: producer.clone(),
            content_digest: corrupted_digest(&task.truth_digest(), corruption_steps(corruption)),
            quality_hint: quality_hint.clamp(0.0, 1.0),
        }
    }
}

/// Output quality as a function of corruption: `max(0, 1 - c)^2`.
pub fn degradation(corruption: f64) -> f64 {
    let q = (1.0 - corruption).max(0.0);
    q * q
}

/// Ground-truth quality of an artifact. Digests that match no corruption
/// level of this task score 0.
pub fn oracle_evaluate(task: &TaskNode, artifact: &Artifact) -> Result<f64, TaskError> {
    if artifact.task_id != task.task_id {
        return Err(TaskError::WrongTask { task: task.task_id.clone(), artifact: artifact.task_id.clone() });
    }
    let truth = task.truth_digest();
    let steps = (0..=CORRUPTION_STEPS).find(|&s| corrupted_digest(&truth, s) == artifact.content_digest);
    Ok(steps.map_or(0.0, |s| degradation(f64::from(s) / f64::from(CORRUPTION_STEPS))))
}

/// Distribution for one characteristic axis: a fixed value or `{lo, hi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisDist {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl AxisDist {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            AxisDist::Fixed(v) => v.clamp(0.0, 1.0),
            AxisDist::Uniform { lo, hi } => {
                let (lo, hi) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
                if hi <= lo {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            }
        }
    }
}

const UNIT: AxisDist = AxisDist::Uniform { lo: 0.0, hi: 1.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskProfile {
    pub complexity: AxisDist,
    pub criticality: AxisDist,
    pub uncertainty: AxisDist,
    pub verifiability: AxisDist,
    pub reversibility: AxisDist,
    pub contextuality: AxisDist,
    pub subjectivity: AxisDist,
    pub duration: (Tick, Tick),
    pub cost: (Micros, Micros),
    pub capabilities: Vec<String>,
    pub id_prefix: String,
}

impl Default for TaskProfile {
    fn default() -> Self {
        Self {
            complexity: UNIT,
            criticality: UNIT,
            uncertainty: UNIT,
            verifiability: UNIT,
            reversibility: UNIT,
            contextuality: UNIT,
            subjectivity: UNIT,
            duration: (5, 40),
            cost: (1_000_000, 5_000_000),
            capabilities: vec!["code".into(), "data".into(), "analysis".into()],
            id_prefix: "t".into(),
        }
    }
}

/// Deterministic task tree of the given depth with `branching` children per
/// internal node.
pub fn generate_task(seed: u64, depth: u32, branching: u32, profile: &TaskProfile) -> TaskNode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root_id = format!("{}{}", profile.id_prefix, seed);
    gen_node(&mut rng, root_id, depth, branching.max(1), profile, 1.0)
}

fn gen_node(
    rng: &mut ChaCha8Rng,
    task_id: String,
    depth: u32,
    branching: u32,
    p: &TaskProfile,
    max_criticality: f64,
) -> TaskNode {
    let (dlo, dhi) = (p.duration.0.max(1), p.duration.1.max(p.duration.0.max(1)));
    let (clo, chi) = (p.cost.0, p.cost.1.max(p.cost.0));
    let mut resource_requirements = BTreeSet::new();
    if !p.capabilities.is_empty() {
        let i = rng.random_range(0..p.capabilities.len());
        resource_requirements.insert(p.capabilities[i].clone());
    }
    let characteristics = TaskCharacteristics {
        complexity: p.complexity.sample(rng),
        criticality: p.criticality.sample(rng).min(max_criticality),
        uncertainty: p.uncertainty.sample(rng),
        verifiability: p.verifiability.sample(rng),
        reversibility: p.reversibility.sample(rng),
        contextuality: p.contextuality.sample(rng),
        subjectivity: p.subjectivity.sample(rng),
        duration_est: rng.random_range(dlo..=dhi),
        cost_est: rng.random_range(clo..=chi),
        resource_requirements,
        constraints: BTreeSet::new(),
    };
    let ground_truth = rng.random::<u64>();
    let ordering = if rng.random_bool(0.5) { Ordering::Parallel } else { Ordering::Sequential };
    let crit = characteristics.criticality;
    let children = if depth == 0 {
        Vec::new()
    } else {
        (0..branching)
            .map(|i| gen_node(rng, format!("{task_id}.{i}"), depth - 1, branching, p, crit))
            .collect()
    };
    TaskNode { task_id, characteristics, ordering, children, ground_truth, human_required: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloorThresholds {
    pub max_criticality: f64,
    pub max_uncertainty: f64,
    pub max_duration: Tick,
    /// Delegation is skipped when overhead reaches this fraction of cost.
    pub overhead_ratio: f64,
}

impl Default for FloorThresholds {
    fn default() -> Self {
        Self { max_criticality: 0.2, max_uncertainty: 0.3, max_duration: 10, overhead_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorDecision {
    ExecuteDirectly,
    Delegate,
}

/// All boundaries are inclusive.
pub fn complexity_floor(task: &TaskNode, overhead: Micros, t: &FloorThresholds) -> FloorDecision {
    let c = &task.characteristics;
    let trivial = c.criticality <= t.max_criticality
        && c.uncertainty <= t.max_uncertainty
        && c.duration_est <= t.max_duration
        && overhead as f64 >= t.overhead_ratio * c.cost_est as f64;
    if trivial {
        FloorDecision::ExecuteDirectly
    } else {
        FloorDecision::Delegate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trivial_leaf(cost: Micros) -> TaskNode {
        TaskNode::leaf(
            "x",
            TaskCharacteristics { duration_est: 1, cost_est: cost, ..Default::default() },
            3,
        )
    }

    #[test]
    fn depth_zero_is_a_single_leaf() {
        for k in 1..4 {
            let t = generate_task(7, 0, k, &TaskProfile::default());
            assert!(t.is_leaf());
            assert_eq!(t.node_count(), 1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = TaskProfile::default();
        let a = generate_task(7, 2, 2, &p);
        let b = generate_task(7, 2, 2, &p);
        assert_eq!(a.node_count(), 7);
        assert_eq!(a.structural_hash(), b.structural_hash());
        assert_ne!(a.structural_hash(), generate_task(8, 2, 2, &p).structural_hash());
        a.validate().unwrap();
    }

    #[test]
    fn pinned_axis_is_respected() {
        let p = TaskProfile { subjectivity: AxisDist::Fixed(0.0), ..Default::default() };
        let t = generate_task(11, 3, 2, &p);
        fn all(n: &TaskNode, f: &dyn Fn(&TaskNode) -> bool) -> bool {
            f(n) && n.children.iter().all(|c| all(c, f))
        }
        assert!(all(&t, &|n| n.characteristics.subjectivity == 0.0));
    }

    #[test]
    fn oracle_endpoints_and_midpoint() {
        let t = generate_task(3, 0, 1, &TaskProfile::default());
        let who = AgentId::derive("w");
        let q = |c| oracle_evaluate(&t, &Artifact::produce(&t, &who, c, 1.0)).unwrap();
        assert_eq!(q(0.0), 1.0);
        assert_eq!(q(1.0), 0.0);
        // independent evaluation of (1 - 0.5)^2
        assert_eq!(q(0.5), 0.25);
        assert_eq!(q(0.5), degradation(0.5));
    }

    #[test]
    fn oracle_rejects_wrong_task() {
        let t = generate_task(3, 1, 2, &TaskProfile::default());
        let a = Artifact::produce(&t.children[0], &AgentId::derive("w"), 0.0, 1.0);
        assert!(matches!(oracle_evaluate(&t, &a), Err(TaskError::WrongTask { .. })));
    }

    #[test]
    fn unrelated_digest_scores_zero() {
        let t = generate_task(3, 0, 1, &TaskProfile::default());
        let mut a = Artifact::produce(&t, &AgentId::derive("w"), 0.0, 1.0);
        a.content_digest = a.content_digest.with_bit_flipped(100);
        assert_eq!(oracle_evaluate(&t, &a).unwrap(), 0.0);
    }

    #[test]
    fn floor_examples() {
        let th = FloorThresholds::default();
        assert_eq!(complexity_floor(&trivial_leaf(100), 100, &th), FloorDecision::ExecuteDirectly);
        // boundary: overhead exactly half the cost
        assert_eq!(complexity_floor(&trivial_leaf(100), 50, &th), FloorDecision::ExecuteDirectly);
        assert_eq!(complexity_floor(&trivial_leaf(100), 49, &th), FloorDecision::Delegate);
        let mut critical = trivial_leaf(100);
        critical.characteristics.criticality = 1.0;
        assert_eq!(complexity_floor(&critical, u64::MAX, &th), FloorDecision::Delegate);
    }

    #[test]
    fn validation_catches_child_more_critical_than_parent() {
        let mut t = generate_task(5, 1, 2, &TaskProfile::default());
        t.characteristics.criticality = 0.0;
        t.children[0].characteristics.criticality = 0.5;
        assert!(t.validate().is_err());
    }

    #[test]
    fn json_fixture_shape() {
        let t = generate_task(5, 1, 2, &TaskProfile::default());
        let v = serde_json::to_value(&t).unwrap();
        for k in ["task_id", "characteristics", "ordering", "children"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: TaskNode = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn oracle_is_monotone_in_corruption(a in 0.0f64..=1.0, b in 0.0f64..=1.0, seed in 0u64..50) {
            let t = generate_task(seed, 0, 1, &TaskProfile::default());
            let who = AgentId::derive("w");
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let q_lo = oracle_evaluate(&t, &Artifact::produce(&t, &who, lo, 1.0)).unwrap();
            let q_hi = oracle_evaluate(&t, &Artifact::produce(&t, &who, hi, 1.0)).unwrap();
            prop_assert!(q_hi <= q_lo);
        }

        #[test]
        fn floor_is_monotone_in_risk(
            crit in 0.0f64..=1.0, unc in 0.0f64..=1.0, bump in 0.0f64..=1.0,
            dur in 1u64..20, cost in 0u64..1000, overhead in 0u64..1000,
        ) {
            let th = FloorThresholds::default();
            let mut t = trivial_leaf(cost);
            t.characteristics.criticality = crit;
            t.characteristics.uncertainty = unc;
            t.characteristics.duration_est = dur;
            let before = complexity_floor(&t, overhead, &th);
            let mut riskier = t.clone();
            riskier.characteristics.criticality = (crit + bump).min(1.0);
            riskier.characteristics.uncertainty = (unc + bump).min(1.0);
            if before == FloorDecision::Delegate {
                prop_assert_eq!(complexity_floor(&riskier, overhead, &th), FloorDecision::Delegate);
            }
        }
    }
}
