//! Scenario files: agents, workload and every overridable module default.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SimError;
use crate::contract::ContractTerms;
use crate::coordination::{DetectConfig, SafetyGate, StabilityPolicy};
use crate::decomposition::DecompositionConfig;
use crate::market::{OverheadCosts, PrivacyGuarantee, Weights};
use crate::reputation::{AuthorityTable, BreakerConfig, ReputationConfig, TrustModel};
use crate::task::{AxisDist, FloorThresholds, TaskNode, TaskProfile};
use crate::verification::{VerificationCosts, PASS_THRESHOLD};
use crate::{Micros, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Delegator,
    #[default]
    Worker,
    Verifier,
    Human,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Honest,
    DataPoisoner {
        corruption: f64,
    },
    ResourceExhauster {
        overspend: f64,
    },
    /// Goes silent `after` ticks into each contract.
    Unresponsive {
        #[serde(default)]
        after: Tick,
    },
    /// Work passes verification; the flaw surfaces `reveal_after` ticks after settlement.
    BackdoorImplanter {
        reveal_after: Tick,
    },
    /// As a delegator, challenges honest completions with probability `rate`.
    ReputationSaboteur {
        rate: f64,
    },
    /// `identities` bidding ids funded from this agent's balance.
    SybilOperator {
        identities: u32,
        #[serde(default = "junk")]
        corruption: f64,
    },
    /// Members deliver corrupted work and vote to pass each other's.
    ColludingRing {
        ring: String,
        #[serde(default = "half")]
        corruption: f64,
    },
    /// Only bids on tasks whose complexity and criticality are at most `threshold`.
    LowRiskGamer {
        threshold: f64,
    },
}

fn junk() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl Policy {
    pub fn is_honest(&self) -> bool {
        matches!(self, Policy::Honest)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Honest => "honest",
            Policy::DataPoisoner { .. } => "data_poisoner",
            Policy::ResourceExhauster { .. } => "resource_exhauster",
            Policy::Unresponsive { .. } => "unresponsive",
            Policy::BackdoorImplanter { .. } => "backdoor_implanter",
            Policy::ReputationSaboteur { .. } => "reputation_saboteur",
            Policy::SybilOperator { .. } => "sybil_operator",
            Policy::ColludingRing { .. } => "colluding_ring",
            Policy::LowRiskGamer { .. } => "low_risk_gamer",
        }
    }

    fn validate(&self) -> Result<(), String> {
        let unit = |n: &str, v: f64| if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(format!("{n} = {v} outside [0,1]")) };
        match self {
            Policy::Honest | Policy::Unresponsive { .. } | Policy::BackdoorImplanter { .. } => Ok(()),
            Policy::DataPoisoner { corruption } => unit("corruption", *corruption),
            Policy::ResourceExhauster { overspend } => {
                if *overspend >= 1.0 && overspend.is_finite() {
                    Ok(())
                } else {
                    Err(format!("overspend = {overspend} must be at least 1"))
                }
            }
            Policy::ReputationSaboteur { rate } => unit("rate", *rate),
            Policy::SybilOperator { identities, corruption } => {
                if !(1..=1000).contains(identities) {
                    return Err(format!("identities = {identities} outside 1..=1000"));
                }
                unit("corruption", *corruption)
            }
            Policy::ColludingRing { ring, corruption } => {
                if ring.is_empty() {
                    return Err("ring name is empty".into());
                }
                unit("corruption", *corruption)
            }
            Policy::LowRiskGamer { threshold } => unit("threshold", *threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub label: String,
    #[serde(default)]
    pub role: Role,
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
    #[serde(default)]
    pub balance: Micros,
    #[serde(default)]
    pub policy: Policy,
    /// Concurrent contracts as worker; concurrent monitored contracts as delegator.
    #[serde(default = "default_capacity")]
    pub capacity: u32,
    #[serde(default = "one")]
    pub price_factor: f64,
    #[serde(default = "one")]
    pub speed_factor: f64,
    #[serde(default)]
    pub privacy: PrivacyGuarantee,
    #[serde(default)]
    pub model_family: Option<String>,
    /// Label of an agent this worker sub-delegates data access to.
    #[serde(default)]
    pub helper: Option<String>,
    /// Track record credited at tick 0 by the system certifier.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior_outcomes: Vec<bool>,
}

fn default_capacity() -> u32 {
    4
}

fn one() -> f64 {
    1.0
}

impl AgentSpec {
    pub fn new(label: &str, role: Role, balance: Micros) -> Self {
        Self {
            label: label.to_string(),
            role,
            capabilities: BTreeSet::new(),
            balance,
            policy: Policy::Honest,
            capacity: default_capacity(),
            price_factor: 1.0,
            speed_factor: 1.0,
            privacy: PrivacyGuarantee::None,
            model_family: None,
            helper: None,
            prior_outcomes: Vec::new(),
        }
    }

    pub fn with_caps<I: IntoIterator<Item = S>, S: Into<String>>(mut self, caps: I) -> Self {
        self.capabilities = caps.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitTask {
    pub arrival: Tick,
    /// Delegator label; round-robin when absent.
    #[serde(default)]
    pub delegator: Option<String>,
    pub task: TaskNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workload {
    pub tasks: u32,
    pub first_arrival: Tick,
    pub arrival_every: Tick,
    pub depth: u32,
    pub branching: u32,
    pub profile: TaskProfile,
    pub explicit: Vec<ExplicitTask>,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            tasks: 0,
            first_arrival: 1,
            arrival_every: 50,
            depth: 1,
            branching: 2,
            profile: TaskProfile::default(),
            explicit: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalKind {
    SpecChange,
    Cancellation,
    ResourceShift,
    Preemption,
    SecurityFlag,
}

/// Environment feed entry targeting a task (every active leaf under it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEvent {
    pub tick: Tick,
    pub task: String,
    pub kind: ExternalKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub window: Tick,
    pub min_stake: Micros,
    pub weights: Weights,
    pub retry_delay: Tick,
    pub max_attempts: u32,
    /// Delegator budget per leaf as a multiple of its estimated cost.
    pub budget_margin: f64,
    pub overhead: OverheadCosts,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            window: 5,
            min_stake: 500_000,
            weights: Weights::default(),
            retry_delay: 20,
            max_attempts: 5,
            budget_margin: 1.5,
            overhead: OverheadCosts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    pub threshold: f64,
    pub panel_size: usize,
    /// Reward pool for a dispute panel, paid by the losing side.
    pub panel_fee: Micros,
    /// Probability that the delegator inspects an optimistic submission itself.
    pub spot_check_rate: f64,
    pub standard_check_rate: f64,
    pub costs: VerificationCosts,
    pub machine_latency: Tick,
    pub human_latency: Tick,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            threshold: PASS_THRESHOLD,
            panel_size: 3,
            panel_fee: 60_000,
            spot_check_rate: 0.5,
            standard_check_rate: 1.0,
            costs: VerificationCosts::default(),
            machine_latency: 1,
            human_latency: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverseerAction {
    /// The human completes the leaf personally after a delay.
    #[default]
    Execute,
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationConfig {
    pub detect: DetectConfig,
    pub gate: SafetyGate,
    pub stability: StabilityPolicy,
    pub overseer_latency: Tick,
    pub overseer_action: OverseerAction,
    pub backup_clause: bool,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            gate: SafetyGate::default(),
            stability: StabilityPolicy::default(),
            overseer_latency: 20,
            overseer_action: OverseerAction::default(),
            backup_clause: true,
        }
    }
}

/// Correlated failures among agents sharing a model family. No empirical
/// correlation structure backs the defaults; off unless configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monoculture {
    pub family: String,
    /// Per-tick probability that every member of the family produces junk.
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub decomposition: DecompositionConfig,
    pub market: MarketConfig,
    pub trust: TrustModel,
    pub reputation: ReputationConfig,
    pub authority: AuthorityTable,
    pub breaker: BreakerConfig,
    pub contract: ContractTerms,
    pub coordination: CoordinationConfig,
    pub verification: VerificationConfig,
    pub floor: FloorThresholds,
    pub monoculture: Option<Monoculture>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            decomposition: DecompositionConfig::default(),
            market: MarketConfig::default(),
            // newcomers start at the prior, so the gate must admit 0.5 at full criticality
            trust: TrustModel { owner: None, base: 0.2, slope: 0.3 },
            reputation: ReputationConfig::default(),
            authority: AuthorityTable::default(),
            breaker: BreakerConfig::default(),
            contract: ContractTerms::default(),
            coordination: CoordinationConfig::default(),
            verification: VerificationConfig::default(),
            floor: FloorThresholds::default(),
            monoculture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: Tick,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub external_events: Vec<ExternalEvent>,
    #[serde(default)]
    pub config: SimConfig,
}

fn err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon < 1 {
            return Err(err("horizon must be at least 1"));
        }
        let mut labels = BTreeSet::new();
        for a in &self.agents {
            if a.label.is_empty() || !labels.insert(a.label.as_str()) {
                return Err(err(format!("agent label {:?} is empty or duplicated", a.label)));
            }
            if a.capacity == 0 {
                return Err(err(format!("agent {} has zero capacity", a.label)));
            }
            if !(a.price_factor > 0.0 && a.price_factor.is_finite() && a.speed_factor > 0.0 && a.speed_factor.is_finite()) {
                return Err(err(format!("agent {} has a non-positive price or speed factor", a.label)));
            }
            a.policy.validate().map_err(|e| err(format!("agent {}: {e}", a.label)))?;
        }
        for a in &self.agents {
            if let Some(h) = &a.helper {
                if !labels.contains(h.as_str()) || h == &a.label {
                    return Err(err(format!("agent {} names unknown helper {h}", a.label)));
                }
            }
        }
        if !self.agents.iter().any(|a| a.role == Role::Delegator) {
            return Err(err("scenario needs at least one delegator"));
        }
        let c = &self.config;
        let panel = c.verification.panel_size;
        if panel < 3 || panel.is_multiple_of(2) {
            return Err(err("panel_size must be odd and at least 3"));
        }
        let verifiers = self.agents.iter().filter(|a| a.role == Role::Verifier).count();
        if verifiers < panel {
            return Err(err(format!("{verifiers} verifiers cannot staff a panel of {panel}")));
        }
        c.market.weights.normalized().map_err(|e| err(e.to_string()))?;
        for (n, v) in [
            ("tau_v", c.decomposition.tau_v),
            ("tau_s", c.decomposition.tau_s),
            ("damping", c.reputation.damping),
            ("prior", c.reputation.prior),
            ("spot_check_rate", c.verification.spot_check_rate),
            ("standard_check_rate", c.verification.standard_check_rate),
            ("threshold", c.verification.threshold),
            ("cancellation_fraction", c.contract.cancellation_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(err(format!("{n} = {v} outside [0,1]")));
            }
        }
        if c.market.window == 0 {
            return Err(err("market window must be positive"));
        }
        if !(c.market.budget_margin >= 1.0) {
            return Err(err("budget_margin must be at least 1"));
        }
        if c.verification.panel_fee == 0 {
            return Err(err("panel_fee must be positive"));
        }
        if let Some(m) = &c.monoculture {
            if !(0.0..=1.0).contains(&m.failure_rate) {
                return Err(err("monoculture failure_rate outside [0,1]"));
            }
        }
        for t in &self.workload.explicit {
            t.task.validate().map_err(|e| err(e.to_string()))?;
            if let Some(d) = &t.delegator {
                if !self.agents.iter().any(|a| &a.label == d && a.role == Role::Delegator) {
                    return Err(err(format!("explicit task names unknown delegator {d}")));
                }
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> crate::crypto::Digest {
        crate::crypto::sha256(&serde_json::to_vec(self).expect("scenario serializes"))
    }
}

/// Replaces the policy of agent `index`, leaving everything else untouched.
pub fn inject(scenario: &Scenario, index: usize, policy: Policy) -> Result<Scenario, SimError> {
    let mut s = scenario.clone();
    let a = s.agents.get_mut(index).ok_or_else(|| err(format!("no agent at index {index}")))?;
    a.policy = policy;
    Ok(s)
}

/// Recursive object merge; `overlay` wins on conflicts.
pub fn merge_json(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Parses a scenario, layering its `config` over an optional base config.
pub fn load_scenario(text: &str, base_config: Option<&Value>) -> Result<Scenario, SimError> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| err(format!("scenario: {e}")))?;
    if let Some(base) = base_config {
        let mut cfg = base.clone();
        if let Some(own) = v.get("config") {
            merge_json(&mut cfg, own);
        }
        v.as_object_mut().ok_or_else(|| err("scenario must be an object"))?.insert("config".into(), cfg);
    }
    let s: Scenario = serde_json::from_value(v).map_err(|e| err(format!("scenario: {e}")))?;
    s.validate()?;
    Ok(s)
}

const CAPS: [&str; 3] = ["code", "data", "analysis"];

/// Baseline population: every capability covered by honest workers, a full
/// verifier panel and one human reviewer.
pub fn honest_population(delegators: usize, workers: usize, verifiers: usize) -> Vec<AgentSpec> {
    let mut agents = Vec::new();
    for i in 0..delegators {
        agents.push(AgentSpec { capacity: 8, ..AgentSpec::new(&format!("delegator-{i}"), Role::Delegator, 100_000_000_000) });
    }
    for i in 0..workers {
        let caps = [CAPS[i % 3], CAPS[(i + 1) % 3]];
        agents.push(AgentSpec::new(&format!("worker-{i}"), Role::Worker, 20_000_000).with_caps(caps));
    }
    for i in 0..verifiers {
        agents.push(AgentSpec::new(&format!("verifier-{i}"), Role::Verifier, 1_000_000));
    }
    agents.push(AgentSpec::new("human-0", Role::Human, 0));
    agents
}

/// Randomised scenario with a handful of adversaries mixed into an honest
/// population. Deterministic in `seed`.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let workers = rng.random_range(6..=9);
    let verifiers = rng.random_range(3..=5);
    let mut agents = honest_population(rng.random_range(2..=3), workers, verifiers);
    for a in agents.iter_mut().filter(|a| a.role == Role::Worker) {
        a.price_factor = rng.random_range(0.8..1.2);
        a.speed_factor = rng.random_range(0.8..1.3);
        a.privacy = [PrivacyGuarantee::None, PrivacyGuarantee::TeeEnclave, PrivacyGuarantee::CryptoProof][rng.random_range(0..3)];
    }
    let adversaries = rng.random_range(0..=3);
    let worker_idx: Vec<usize> = agents.iter().enumerate().filter(|(_, a)| a.role == Role::Worker).map(|(i, _)| i).collect();
    for k in 0..adversaries {
        let i = worker_idx[(k * 2 + 1) % worker_idx.len()];
        agents[i].policy = match rng.random_range(0..6) {
            0 => Policy::DataPoisoner { corruption: rng.random_range(0.3..=1.0) },
            1 => Policy::ResourceExhauster { overspend: rng.random_range(1.5..3.0) },
            2 => Policy::Unresponsive { after: rng.random_range(0..10) },
            3 => Policy::BackdoorImplanter { reveal_after: rng.random_range(20..200) },
            4 => Policy::LowRiskGamer { threshold: 0.4 },
            _ => Policy::SybilOperator { identities: 3, corruption: 1.0 },
        };
    }
    if rng.random_bool(0.3) {
        agents[0].policy = Policy::ReputationSaboteur { rate: 0.5 };
    }
    let mut profile = TaskProfile::default();
    profile.verifiability = AxisDist::Uniform { lo: 0.3, hi: 1.0 };
    Scenario {
        seed,
        horizon: 5_000,
        agents,
        workload: Workload {
            tasks: rng.random_range(30..=36),
            first_arrival: 1,
            arrival_every: rng.random_range(30..=80),
            depth: rng.random_range(1..=2),
            branching: rng.random_range(2..=3),
            profile,
            explicit: Vec::new(),
        },
        external_events: Vec::new(),
        config: SimConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn deep_merge_overlay_wins() {
        let mut base = json!({"market": {"window": 9, "min_stake": 1}, "breaker": {"drop": 0.5}});
        merge_json(&mut base, &json!({"market": {"window": 3}}));
        assert_eq!(base, json!({"market": {"window": 3, "min_stake": 1}, "breaker": {"drop": 0.5}}));
    }

    #[test]
    fn random_scenarios_are_valid_and_stable() {
        for seed in 1..=5 {
            let s = random_scenario(seed);
            s.validate().unwrap();
            assert!(s.agents.len() >= 10 && s.workload.tasks >= 30);
            assert_eq!(s, random_scenario(seed));
        }
    }

    #[test]
    fn inject_replaces_only_policy() {
        let s = random_scenario(3);
        let t = inject(&s, 4, Policy::DataPoisoner { corruption: 1.0 }).unwrap();
        assert_eq!(t.agents[4].policy, Policy::DataPoisoner { corruption: 1.0 });
        let mut back = t.clone();
        back.agents[4].policy = s.agents[4].policy.clone();
        assert_eq!(back, s);
        assert!(inject(&s, 999, Policy::Honest).is_err());
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut s = random_scenario(1);
        s.agents[3].policy = Policy::DataPoisoner { corruption: 1.5 };
        assert!(matches!(s.validate(), Err(SimError::Config(_))));
        let mut s = random_scenario(1);
        s.horizon = 0;
        assert!(s.validate().is_err());
        let mut s = random_scenario(1);
        s.config.verification.panel_size = 4;
        assert!(s.validate().is_err());
    }

    #[test]
    fn policy_wire_form() {
        let p: Policy = serde_json::from_value(json!({"kind": "sybil_operator", "identities": 5})).unwrap();
        assert_eq!(p, Policy::SybilOperator { identities: 5, corruption: 1.0 });
        let a: AgentSpec = serde_json::from_value(json!({"label": "x"})).unwrap();
        assert_eq!((a.role, a.capacity, a.policy), (Role::Worker, 4, Policy::Honest));
    }
}
