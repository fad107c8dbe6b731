//! Event loop and world state. The loop is the only mutator; every stochastic
//! choice draws from one generator seeded by the scenario.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Display;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{seal, LeafInfo, LogLine, Record, RunResult};
use super::scenario::{ExternalKind, OverseerAction, Policy, Role, Scenario, SimConfig};
use super::SimError;
use crate::bank::{Account, Bank, LedgerReason};
use crate::contract::{draft, ContractError, ContractState, DelegationContract, Party};
use crate::coordination::{
    apply_stability, checkpoint, detect, resume, select_response, ResponseAction, ResponseContext, StabilityDecision,
    StateSnapshot, Trigger, TriggerKind, Watch,
};
use crate::crypto::Digest;
use crate::decomposition::{
    finalize, mark_human_nodes, propose, AgentCapability, CapabilityRegistry, TaskSpecification, VerifierOffer,
};
use crate::identity::{
    CapabilityToken, Caveat, KeyRegistry, Operation, PermissionAuthority, RequestContext, RevocationTarget, SecretKey,
};
use crate::market::{delegation_overhead, Bid, BidOutcome, MarketBook, PrivacyGuarantee, RfqParams, RfqStatus};
use crate::monitoring::{unresponsive_at, EventKind, EventPayload, Granularity, ProgressEvent};
use crate::reputation::{breaker_latest, graduated_authority, Autonomy, OutcomeMetadata, ReputationLedger};
use crate::task::{complexity_floor, generate_task, oracle_evaluate, Artifact, FloorDecision, TaskNode};
use crate::verification::{
    issue_completion_credential, schelling_consensus, verify_direct, verify_proof, verify_third_party,
    CertificationRegistry, Mechanism, ProofArtifact, Verdict, VerificationMode, VoteBehavior, AUDITOR_CERT,
    HUMAN_REVIEWER_CERT, MONITOR_CERT,
};
use crate::{AgentId, Micros, Tick};

const ROOT: &str = "root";

/// Runs a scenario to its horizon, then closes out every open position.
pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario.validate()?;
    let mut w = World::new(scenario);
    w.setup()?;
    w.event_loop()?;
    w.close_out()?;
    let rep = std::mem::take(&mut w.rep);
    Ok(RunResult { reputation: rep, ..seal(w.log) })
}

trait OrViolation<T> {
    fn at(self, tick: Tick) -> Result<T, SimError>;
}

impl<T, E: Display> OrViolation<T> for Result<T, E> {
    fn at(self, tick: Tick) -> Result<T, SimError> {
        self.map_err(|e| SimError::InvariantViolation { tick, detail: e.to_string() })
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Arrival(usize),
    Broadcast(String),
    Bid { rfq: String, agent: usize },
    Close(String),
    Work { contract: String, step: u32 },
    Monitor(String),
    /// Delegator inspection of an optimistic submission.
    Check(String),
    Verify(String),
    WindowEnd(String),
    Reveal { agent: usize, seq: u64 },
    Retry { leaf: String, contract: Option<String>, trigger: TriggerKind },
    Overseer(String),
    DirectDone(String),
    External(usize),
}

impl Ev {
    /// Events still processed after the horizon, while open submissions settle.
    fn drains(&self) -> bool {
        matches!(self, Ev::Check(_) | Ev::Verify(_) | Ev::WindowEnd(_))
    }
}

struct AgentRt {
    id: AgentId,
    label: String,
    role: Role,
    policy: Policy,
    caps: BTreeSet<String>,
    capacity: u32,
    price: f64,
    speed: f64,
    privacy: PrivacyGuarantee,
    family: Option<String>,
    helper: Option<usize>,
    /// Sybil identities point at the operator whose balance funds them.
    wallet: Option<usize>,
    group: Option<String>,
    active: u32,
    revoked: bool,
    root_token: Option<CapabilityToken>,
    successes: u64,
    attempts: u64,
}

impl AgentRt {
    fn bids(&self) -> bool {
        self.role == Role::Worker && !(matches!(self.policy, Policy::SybilOperator { .. }) && self.wallet.is_none())
    }

    fn ring(&self) -> Option<&str> {
        match &self.policy {
            Policy::ColludingRing { ring, .. } => Some(ring),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafState {
    Waiting,
    Queued,
    Market,
    Contracted,
    Escalated,
    Done,
    Failed,
}

struct LeafRt {
    task: usize,
    node: TaskNode,
    spec: TaskSpecification,
    modes: Vec<Mechanism>,
    budget: Micros,
    direct: bool,
    locked: bool,
    preds: usize,
    succs: Vec<String>,
    state: LeafState,
    /// Holds one of the delegator's span-of-control slots.
    counted: bool,
    attempts: u32,
    rfq: Option<String>,
    contract: Option<String>,
    backup: Option<(String, Bid)>,
    redelegations: Vec<Tick>,
    tried: BTreeSet<usize>,
    snapshot: Option<(StateSnapshot, AgentId)>,
    pending_default: Option<String>,
}

struct TaskRt {
    id: String,
    arrival: Tick,
    delegator: usize,
    leaves: Vec<String>,
    remaining: usize,
    finished: bool,
    alternatives: usize,
}

struct ContractRt {
    c: DelegationContract,
    leaf: String,
    worker: usize,
    delegator: usize,
    token: CapabilityToken,
    helper: Option<(usize, CapabilityToken)>,
    started: Tick,
    remaining: Tick,
    cadence: Tick,
    level: Granularity,
    from_fraction: f64,
    events: Vec<ProgressEvent>,
    expected_events: u64,
    spend: Micros,
    progress: f64,
    busy: bool,
    silent: bool,
    blocked: bool,
    artifact: Option<Artifact>,
    corruption: f64,
    submitted_at: Option<Tick>,
    raised: BTreeSet<(TriggerKind, bool)>,
}

struct World<'s> {
    sc: &'s Scenario,
    cfg: &'s SimConfig,
    rng: ChaCha8Rng,
    now: Tick,
    queue: BTreeMap<(Tick, u64), Ev>,
    next_ev: u64,
    log: Vec<LogLine>,
    flushed: usize,
    bank: Bank,
    keys: KeyRegistry,
    certs: CertificationRegistry,
    authority: PermissionAuthority,
    book: MarketBook,
    rep: ReputationLedger,
    system: AgentId,
    agents: Vec<AgentRt>,
    by_id: BTreeMap<AgentId, usize>,
    arrivals: Vec<(Tick, Option<usize>, TaskNode)>,
    tasks: Vec<TaskRt>,
    tasks_by_id: BTreeMap<String, usize>,
    leaves: BTreeMap<String, LeafRt>,
    rfqs: BTreeMap<String, String>,
    contracts: BTreeMap<String, ContractRt>,
    next_contract: u64,
    open: Vec<u32>,
    backlog: Vec<VecDeque<String>>,
    coins: BTreeMap<(String, Tick), bool>,
    proof_key: [u8; 32],
    draining: bool,
}

fn relabel(node: &mut TaskNode, id: String) {
    for (k, c) in node.children.iter_mut().enumerate() {
        relabel(c, format!("{id}.{k}"));
    }
    node.task_id = id;
}

fn all_ids<'a>(n: &'a TaskNode, out: &mut Vec<&'a str>) {
    out.push(&n.task_id);
    for c in &n.children {
        all_ids(c, out);
    }
}

fn max_depth_for(a: Autonomy) -> u32 {
    match a {
        Autonomy::Atomic => 1,
        Autonomy::Bounded => 2,
        Autonomy::OpenEnded => 3,
    }
}

impl<'s> World<'s> {
    fn new(sc: &'s Scenario) -> Self {
        Self {
            sc,
            cfg: &sc.config,
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            now: 0,
            queue: BTreeMap::new(),
            next_ev: 0,
            log: Vec::new(),
            flushed: 0,
            bank: Bank::new(),
            keys: KeyRegistry::new(),
            certs: CertificationRegistry::default(),
            authority: PermissionAuthority::new(),
            book: MarketBook::new(),
            rep: ReputationLedger::new(),
            system: AgentId::derive("system"),
            agents: Vec::new(),
            by_id: BTreeMap::new(),
            arrivals: Vec::new(),
            tasks: Vec::new(),
            tasks_by_id: BTreeMap::new(),
            leaves: BTreeMap::new(),
            rfqs: BTreeMap::new(),
            contracts: BTreeMap::new(),
            next_contract: 0,
            open: Vec::new(),
            backlog: Vec::new(),
            coins: BTreeMap::new(),
            proof_key: SecretKey::derive(sc.seed, "proof-circuit").0,
            draining: false,
        }
    }

    fn push(&mut self, at: Tick, ev: Ev) {
        self.next_ev += 1;
        self.queue.insert((at.max(self.now), self.next_ev), ev);
    }

    fn flush(&mut self) {
        let entries = self.bank.entries();
        let fresh: Vec<Record> = entries[self.flushed..]
            .iter()
            .map(|e| Record::Transfer { from: e.from.clone(), to: e.to.clone(), amount: e.amount, reason: e.reason })
            .collect();
        self.flushed = entries.len();
        for r in fresh {
            self.append(r);
        }
    }

    fn append(&mut self, record: Record) {
        let seq = self.log.len() as u64;
        self.log.push(LogLine { seq, tick: self.now, record });
    }

    /// Appends a record after any transfers it caused.
    fn log(&mut self, record: Record) {
        self.flush();
        self.append(record);
    }

    fn id(&self, i: usize) -> AgentId {
        self.agents[i].id.clone()
    }

    fn acct(&self, i: usize) -> Account {
        Account::Agent(self.agents[i].id.clone())
    }

    fn composite(&self, a: &AgentId) -> f64 {
        self.rep.score(a, self.now, &self.cfg.reputation).composite
    }

    fn pay(&mut self, from: usize, to: &Account, amount: Micros, reason: LedgerReason) -> bool {
        let f = self.acct(from);
        self.bank.transfer(self.now, &f, to, amount, reason).is_ok()
    }

    fn human(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.role == Role::Human && !a.revoked)
    }

    fn behavior(&self, voter: usize, producer: usize) -> VoteBehavior {
        match (self.agents[voter].ring(), self.agents[producer].ring()) {
            (Some(a), Some(b)) if a == b => VoteBehavior::AlwaysPass,
            _ => VoteBehavior::Honest,
        }
    }

    /// `k` distinct verifiers, none of them a party to the contract.
    fn pick_verifiers(&mut self, k: usize, exclude: &[usize]) -> Vec<usize> {
        let pool: Vec<usize> = (0..self.agents.len())
            .filter(|i| self.agents[*i].role == Role::Verifier && !self.agents[*i].revoked && !exclude.contains(i))
            .collect();
        if pool.len() < k {
            return Vec::new();
        }
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut self.rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        picked
    }

    fn registry(&self) -> CapabilityRegistry {
        let agents = self
            .agents
            .iter()
            .filter(|a| (a.bids() || a.role == Role::Human) && !a.revoked)
            .map(|a| AgentCapability {
                agent: a.id.clone(),
                capabilities: a.caps.clone(),
                successes: a.successes,
                attempts: a.attempts,
                human: a.role == Role::Human,
            })
            .collect();
        let offer = |mechanism, min_verifiability, handles_subjective| VerifierOffer {
            mechanism,
            min_verifiability,
            handles_subjective,
        };
        CapabilityRegistry {
            agents,
            verifiers: vec![
                offer(Mechanism::Direct, 0.6, false),
                offer(Mechanism::Consensus, 0.5, false),
                offer(Mechanism::ThirdParty, 0.3, true),
                offer(Mechanism::Proof, 0.8, false),
            ],
        }
    }

    fn setup(&mut self) -> Result<(), SimError> {
        let sc = self.sc;
        self.log(Record::RunStart { seed: sc.seed, horizon: sc.horizon, scenario: sc.digest() });
        self.keys.register(self.system.clone(), SecretKey::derive(sc.seed, "system")).at(0)?;
        self.certs = CertificationRegistry::new([self.system.clone()]);
        self.authority.add_root(ROOT, SecretKey::derive(sc.seed, ROOT));

        let mut balances = Vec::new();
        for spec in &sc.agents {
            let base = AgentRt {
                id: AgentId::derive(&spec.label),
                label: spec.label.clone(),
                role: spec.role,
                policy: spec.policy.clone(),
                caps: spec.capabilities.clone(),
                capacity: spec.capacity,
                price: spec.price_factor,
                speed: spec.speed_factor,
                privacy: spec.privacy,
                family: spec.model_family.clone(),
                helper: None,
                wallet: None,
                group: None,
                active: 0,
                revoked: false,
                root_token: None,
                successes: 0,
                attempts: 0,
            };
            let op = self.agents.len();
            if let Policy::SybilOperator { identities, .. } = spec.policy {
                self.agents.push(AgentRt { group: Some(spec.label.clone()), ..base });
                balances.push(spec.balance);
                for j in 0..identities {
                    let label = format!("{}#{j}", spec.label);
                    let a = &self.agents[op];
                    let ident = AgentRt {
                        id: AgentId::derive(&label),
                        label,
                        role: Role::Worker,
                        policy: a.policy.clone(),
                        caps: a.caps.clone(),
                        capacity: a.capacity,
                        price: a.price,
                        speed: a.speed,
                        privacy: a.privacy,
                        family: a.family.clone(),
                        helper: None,
                        wallet: Some(op),
                        group: a.group.clone(),
                        active: 0,
                        revoked: false,
                        root_token: None,
                        successes: 0,
                        attempts: 0,
                    };
                    self.agents.push(ident);
                    balances.push(0);
                }
            } else {
                self.agents.push(base);
                balances.push(spec.balance);
            }
        }
        let index: BTreeMap<String, usize> = self.agents.iter().enumerate().map(|(i, a)| (a.label.clone(), i)).collect();
        for spec in &sc.agents {
            if let Some(h) = &spec.helper {
                self.agents[index[&spec.label]].helper = Some(index[h]);
            }
        }

        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            let (id, label) = (a.id.clone(), a.label.clone());
            if self.by_id.insert(id.clone(), i).is_some() {
                return Err(SimError::Config(format!("agent label {label} collides with another identity")));
            }
            self.keys.register(id.clone(), SecretKey::derive(sc.seed, &label)).at(0)?;
            let a = &self.agents[i];
            let record = Record::Agent {
                agent: id.clone(),
                label,
                role: a.role,
                policy: a.policy.name().to_string(),
                group: a.group.clone(),
            };
            self.log(record);
            self.bank.genesis(0, Account::Agent(id.clone()), balances[i]);
            let certs: &[&str] = match self.agents[i].role {
                Role::Worker => &[MONITOR_CERT],
                Role::Verifier => &[AUDITOR_CERT],
                Role::Human => &[AUDITOR_CERT, HUMAN_REVIEWER_CERT],
                Role::Delegator => &[],
            };
            for kind in certs {
                self.certs.certify(&self.keys, &self.system, &id, kind, 0).at(0)?;
            }
            if self.agents[i].role == Role::Delegator {
                let t = self.authority.mint(ROOT, &id, vec![Caveat::scope(["/tasks"])]).at(0)?;
                self.agents[i].root_token = Some(t);
            }
        }
        self.open = vec![0; self.agents.len()];
        self.backlog = vec![VecDeque::new(); self.agents.len()];

        for spec in &sc.agents {
            let i = index[&spec.label];
            for (k, ok) in spec.prior_outcomes.iter().enumerate() {
                let q = if *ok { 1.0 } else { 0.0 };
                let verdict = Verdict::unsigned(&format!("prior-{k}"), *ok, q, Mechanism::Direct, vec![], 0);
                let vc = issue_completion_credential(&self.keys, &self.system, &self.agents[i].id, Digest::default(), &verdict, 0)
                    .at(0)?;
                let meta = OutcomeMetadata {
                    success: *ok,
                    quality: q,
                    resources_vs_budget: 1.0,
                    deadline_met: *ok,
                    constraints_met: true,
                    transparency_obs: 1.0,
                    safety_obs: 1.0,
                    tick: 0,
                    complexity: 0.5,
                };
                self.rep.record(&self.keys, vc, meta).at(0)?;
            }
            if !spec.prior_outcomes.is_empty() {
                self.log_reputation(i);
            }
        }

        let delegators: Vec<usize> = (0..self.agents.len()).filter(|&i| self.agents[i].role == Role::Delegator).collect();
        let wl = &sc.workload;
        for i in 0..wl.tasks {
            let seed = self.rng.random::<u64>();
            let mut node = generate_task(seed, wl.depth, wl.branching, &wl.profile);
            relabel(&mut node, format!("T{i}"));
            let arrival = wl.first_arrival + u64::from(i) * wl.arrival_every;
            self.arrivals.push((arrival, None, node));
        }
        for t in &wl.explicit {
            let d = t.delegator.as_ref().map(|l| index[l]);
            self.arrivals.push((t.arrival, d, t.task.clone()));
        }
        let mut seen = BTreeSet::new();
        for (_, _, n) in &self.arrivals {
            let mut ids = Vec::new();
            all_ids(n, &mut ids);
            if let Some(dup) = ids.into_iter().find(|id| !seen.insert(id.to_string())) {
                return Err(SimError::Config(format!("task id {dup} appears twice in the workload")));
            }
        }
        for k in 0..self.arrivals.len() {
            if self.arrivals[k].1.is_none() {
                self.arrivals[k].1 = Some(delegators[k % delegators.len()]);
            }
            let at = self.arrivals[k].0;
            self.push(at, Ev::Arrival(k));
        }
        for (k, e) in sc.external_events.iter().enumerate() {
            self.push(e.tick, Ev::External(k));
        }
        self.after_handler()
    }

    fn event_loop(&mut self) -> Result<(), SimError> {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.sc.horizon {
                break;
            }
            let ((t, _), ev) = entry.remove_entry();
            self.now = t;
            self.handle(ev)?;
            self.after_handler()?;
        }
        Ok(())
    }

    /// Sybil identities hand everything back to their operator, transfers
    /// reach the log, and the books must still balance.
    fn after_handler(&mut self) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            if let Some(op) = self.agents[i].wallet {
                let (from, to) = (self.acct(i), self.acct(op));
                self.bank.sweep(self.now, &from, &to, LedgerReason::Fund);
            }
        }
        self.flush();
        if self.bank.total() != self.bank.supply() {
            return Err(SimError::InvariantViolation {
                tick: self.now,
                detail: format!("holdings {} differ from supply {}", self.bank.total(), self.bank.supply()),
            });
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrival(k) => self.on_arrival(k),
            Ev::Broadcast(leaf) => {
                let l = &self.leaves[&leaf];
                if l.state == LeafState::Market && l.rfq.is_none() && l.contract.is_none() {
                    self.broadcast(&leaf)
                } else {
                    Ok(())
                }
            }
            Ev::Bid { rfq, agent } => self.on_bid(&rfq, agent),
            Ev::Close(rfq) => self.on_close(&rfq),
            Ev::Work { contract, step } => self.on_work(&contract, step),
            Ev::Monitor(c) => self.monitor(&c),
            Ev::Check(c) => self.on_check(&c),
            Ev::Verify(c) => self.on_verify(&c),
            Ev::WindowEnd(c) => self.on_window_end(&c),
            Ev::Reveal { agent, seq } => self.on_reveal(agent, seq),
            Ev::Retry { leaf, contract, trigger } => self.on_retry(&leaf, contract, trigger),
            Ev::Overseer(leaf) => self.on_overseer(&leaf),
            Ev::DirectDone(leaf) => self.leaf_finished(&leaf, true, "direct"),
            Ev::External(k) => self.on_external(k),
        }
    }

    fn on_arrival(&mut self, k: usize) -> Result<(), SimError> {
        let (_, d, node) = self.arrivals[k].clone();
        let d = d.expect("delegators assigned at setup");
        let ti = self.tasks.len();
        self.tasks.push(TaskRt {
            id: node.task_id.clone(),
            arrival: self.now,
            delegator: d,
            leaves: Vec::new(),
            remaining: 0,
            finished: false,
            alternatives: 0,
        });
        self.tasks_by_id.insert(node.task_id.clone(), ti);
        self.log(Record::TaskArrival { task: node.task_id.clone(), delegator: self.id(d), nodes: node.node_count() });

        let registry = self.registry();
        let dc = &self.cfg.decomposition;
        let proposals = match propose(&node, &registry, dc) {
            Ok(p) => p,
            Err(e) => {
                self.log(Record::TaskRejected { task: node.task_id.clone(), reason: e.to_string() });
                self.tasks[ti].finished = true;
                self.log(Record::TaskDone { task: node.task_id.clone(), ok: false, makespan: 0 });
                return Ok(());
            }
        };
        let best = mark_human_nodes(&proposals[0], &dc.human, &registry, dc.tau_s);
        let bidders = self.agents.iter().filter(|a| a.bids()).count();
        let mut infos = Vec::new();
        for plan in &best.leaves {
            let c = &plan.task.characteristics;
            let budget = ((c.cost_est as f64 * self.cfg.market.budget_margin).round() as Micros).max(1);
            let mut spec = finalize(plan, budget);
            if spec.human_required {
                spec.verification_policy.escrow_trigger = true;
            }
            let mode = spec.verification_policy.mode;
            let overhead = delegation_overhead(&self.cfg.market.overhead, bidders, true, Some(mode));
            let direct = complexity_floor(&plan.task, overhead, &self.cfg.floor) == FloorDecision::ExecuteDirectly;
            let locked = self.cfg.coordination.gate.locks(c);
            infos.push(LeafInfo {
                leaf: plan.task_id.clone(),
                verifiability: c.verifiability,
                human_required: spec.human_required,
                mode,
                direct,
                locked,
            });
            self.leaves.insert(
                plan.task_id.clone(),
                LeafRt {
                    task: ti,
                    node: plan.task.clone(),
                    spec,
                    modes: plan.candidate_verification_modes.clone(),
                    budget,
                    direct,
                    locked,
                    preds: 0,
                    succs: Vec::new(),
                    state: LeafState::Waiting,
                    counted: false,
                    attempts: 0,
                    rfq: None,
                    contract: None,
                    backup: None,
                    redelegations: Vec::new(),
                    tried: BTreeSet::new(),
                    snapshot: None,
                    pending_default: None,
                },
            );
            self.tasks[ti].leaves.push(plan.task_id.clone());
        }
        for (a, b) in &best.dag {
            self.leaves.get_mut(b).expect("dag names leaves").preds += 1;
            self.leaves.get_mut(a).expect("dag names leaves").succs.push(b.clone());
        }
        let t = &mut self.tasks[ti];
        t.remaining = t.leaves.len();
        t.alternatives = proposals.len() - 1;
        self.log(Record::Decomposition {
            task: node.task_id.clone(),
            proposal: best.proposal_id.clone(),
            alternatives: proposals.len() - 1,
            leaves: infos,
        });
        let ready: Vec<String> = best.leaves.iter().map(|l| l.task_id.clone()).filter(|l| self.leaves[l].preds == 0).collect();
        for l in ready {
            self.ready(&l)?;
        }
        Ok(())
    }

    fn ready(&mut self, leaf: &str) -> Result<(), SimError> {
        let l = &self.leaves[leaf];
        if self.tasks[l.task].finished {
            return Ok(());
        }
        if l.direct {
            let at = self.now + l.node.characteristics.duration_est;
            self.leaves.get_mut(leaf).expect("leaf").state = LeafState::Contracted;
            self.push(at, Ev::DirectDone(leaf.to_string()));
            return Ok(());
        }
        let d = self.tasks[l.task].delegator;
        if self.open[d] < self.agents[d].capacity {
            self.open[d] += 1;
            let l = self.leaves.get_mut(leaf).expect("leaf");
            l.state = LeafState::Market;
            l.counted = true;
            self.broadcast(leaf)
        } else {
            self.leaves.get_mut(leaf).expect("leaf").state = LeafState::Queued;
            self.backlog[d].push_back(leaf.to_string());
            Ok(())
        }
    }

    fn eligible(&self, leaf: &LeafRt) -> Vec<usize> {
        let c = &leaf.spec.characteristics;
        let scope = &leaf.spec.resource_boundaries.capability_scope;
        let needs_monitor = leaf.spec.required_certifications.contains(MONITOR_CERT);
        (0..self.agents.len())
            .filter(|&i| {
                let a = &self.agents[i];
                a.bids()
                    && !a.revoked
                    && a.active < a.capacity
                    && !leaf.tried.contains(&i)
                    && scope.is_subset(&a.caps)
                    && match a.policy {
                        Policy::LowRiskGamer { threshold } => c.complexity <= threshold && c.criticality <= threshold,
                        _ => true,
                    }
                    && (!needs_monitor || self.certs.is_certified(&self.keys, &a.id, MONITOR_CERT))
            })
            .collect()
    }

    fn broadcast(&mut self, leaf: &str) -> Result<(), SimError> {
        if self.draining {
            return self.leaf_finished(leaf, false, "horizon");
        }
        let now = self.now;
        let d = self.tasks[self.leaves[leaf].task].delegator;
        if !self.pay(d, &Account::Treasury, self.cfg.market.overhead.rfq_fee, LedgerReason::Fee) {
            return self.leaf_finished(leaf, false, "insufficient_funds");
        }
        let m = &self.cfg.market;
        let params = RfqParams { window: m.window, min_stake: m.min_stake, weights: m.weights };
        let spec = self.leaves[leaf].spec.clone();
        let rfq = self.book.broadcast_rfq(&self.id(d), spec, now, &params).at(now)?;
        let l = self.leaves.get_mut(leaf).expect("leaf");
        l.attempts += 1;
        l.rfq = Some(rfq.rfq_id.clone());
        let attempt = l.attempts;
        self.rfqs.insert(rfq.rfq_id.clone(), leaf.to_string());
        self.log(Record::Rfq {
            rfq: rfq.rfq_id.clone(),
            leaf: leaf.to_string(),
            delegator: self.id(d),
            deadline: rfq.deadline_for_bids,
            min_stake: rfq.min_stake,
            attempt,
        });
        for a in self.eligible(&self.leaves[leaf]) {
            let at = now + self.rng.random_range(0..self.cfg.market.window);
            self.push(at, Ev::Bid { rfq: rfq.rfq_id.clone(), agent: a });
        }
        self.push(rfq.deadline_for_bids, Ev::Close(rfq.rfq_id));
        Ok(())
    }

    fn on_bid(&mut self, rfq: &str, a: usize) -> Result<(), SimError> {
        let now = self.now;
        let Some(entry) = self.book.get(rfq) else { return Ok(()) };
        if entry.status != RfqStatus::Open || self.agents[a].revoked {
            return Ok(());
        }
        let deadline = entry.rfq.deadline_for_bids;
        let c = entry.rfq.spec.characteristics.clone();
        let stake = self.cfg.market.min_stake;
        if let Some(op) = self.agents[a].wallet {
            let have = self.bank.agent_balance(&self.agents[a].id);
            if have < stake {
                let to = self.acct(a);
                let _ = self.pay(op, &to, stake - have, LedgerReason::Fund);
            }
        }
        let ag = &self.agents[a];
        let noise: f64 = self.rng.random_range(0.95..1.05);
        let bid = Bid {
            agent_id: ag.id.clone(),
            estimated_cost: ((c.cost_est as f64 * ag.price * noise).round() as Micros).max(1),
            estimated_duration: ((c.duration_est as f64 * ag.speed).ceil() as Tick).max(1),
            privacy_guarantee: ag.privacy,
            reputation_bond: stake,
            expiry: deadline + 50,
            signature: Digest::default(),
        }
        .sign(&self.keys, rfq)
        .at(now)?;
        let (cost, bond) = (bid.estimated_cost, bid.reputation_bond);
        let outcome = self.book.submit_bid(&mut self.bank, &self.keys, rfq, bid, now).at(now)?;
        let rejected = match outcome {
            BidOutcome::Accepted => None,
            BidOutcome::Rejected(r) => Some(r),
        };
        self.log(Record::Bid { rfq: rfq.to_string(), agent: self.id(a), cost, bond, rejected });
        Ok(())
    }

    fn on_close(&mut self, rfq: &str) -> Result<(), SimError> {
        let now = self.now;
        let Some(leaf) = self.rfqs.remove(rfq) else { return Ok(()) };
        let entry = self.book.get(rfq).expect("rfq exists");
        if entry.status != RfqStatus::Open {
            return Ok(());
        }
        let bids = entry.bids.clone();
        let prior = self.cfg.reputation.prior;
        let reps: BTreeMap<AgentId, f64> = bids.iter().map(|b| (b.agent_id.clone(), self.composite(&b.agent_id))).collect();
        let threshold = self.cfg.trust.threshold(self.leaves[&leaf].spec.characteristics.criticality);
        let award = self
            .book
            .award(&mut self.bank, rfq, |a| reps.get(a).copied().unwrap_or(prior), threshold, now)
            .at(now)?;
        let winner = award.selection.winner.as_ref().map(|w| w.bid.clone());
        let d = self.tasks[self.leaves[&leaf].task].delegator;
        let oh = &self.cfg.market.overhead;
        let fee = oh.bid_eval * bids.len() as Micros + if winner.is_some() { oh.contract } else { 0 };
        self.pay(d, &Account::Treasury, fee, LedgerReason::Fee);

        let backup = match (&winner, self.cfg.coordination.backup_clause) {
            (Some(w), true) => {
                let mut ranked: Vec<&(AgentId, f64)> = award.selection.scores.iter().filter(|(a, _)| a != &w.agent_id).collect();
                ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(&y.0)));
                let from_front = ranked.first().map(|(a, _)| a.clone());
                let fallback = || {
                    bids.iter()
                        .filter(|b| b.agent_id != w.agent_id && reps.get(&b.agent_id).copied().unwrap_or(prior) >= threshold)
                        .min_by_key(|b| (b.estimated_cost, b.agent_id.clone()))
                        .map(|b| b.agent_id.clone())
                };
                from_front.or_else(fallback).and_then(|a| bids.iter().find(|b| b.agent_id == a).cloned())
            }
            _ => None,
        };
        self.log(Record::Award {
            rfq: rfq.to_string(),
            leaf: leaf.clone(),
            winner: winner.as_ref().map(|w| w.agent_id.clone()),
            backup: backup.as_ref().map(|b| b.agent_id.clone()),
            excluded: award.selection.excluded.clone(),
            threshold,
        });
        let l = self.leaves.get_mut(&leaf).expect("leaf");
        l.rfq = None;
        match winner {
            None => {
                if l.attempts < self.cfg.market.max_attempts {
                    let at = now + self.cfg.market.retry_delay.max(1);
                    self.push(at, Ev::Broadcast(leaf));
                    Ok(())
                } else {
                    self.leaf_finished(&leaf, false, "no_match")
                }
            }
            Some(bid) => {
                l.backup = backup.map(|b| (rfq.to_string(), b));
                self.form_contract(&leaf, bid, rfq)
            }
        }
    }

    fn log_state(&mut self, cid: &str, from: ContractState) {
        let to = self.contracts[cid].c.state;
        self.log(Record::State { contract: cid.to_string(), from, to });
    }

    fn release_worker(&mut self, cid: &str) {
        let k = self.contracts.get_mut(cid).expect("contract");
        if k.busy {
            k.busy = false;
            self.agents[k.worker].active -= 1;
        }
    }

    /// Closes a defaulted predecessor once the replacement price is known.
    fn finish_default(&mut self, leaf: &str, new_price: Micros) -> Result<(), SimError> {
        let Some(old) = self.leaves.get_mut(leaf).expect("leaf").pending_default.take() else { return Ok(()) };
        let k = self.contracts.get_mut(&old).expect("contract");
        if k.c.state != ContractState::Defaulted {
            return Ok(());
        }
        k.c.default_and_reauction(&mut self.bank, new_price, self.now).at(self.now)?;
        self.log_state(&old, ContractState::Defaulted);
        Ok(())
    }

    fn form_contract(&mut self, leaf: &str, bid: Bid, rfq: &str) -> Result<(), SimError> {
        let now = self.now;
        self.finish_default(leaf, bid.estimated_cost)?;
        let l = &self.leaves[leaf];
        let d = self.tasks[l.task].delegator;
        let w = self.by_id[&bid.agent_id];
        self.next_contract += 1;
        let cid = format!("c-{}", self.next_contract);
        let mut terms = self.cfg.contract.clone();
        terms.backup_agent = l.backup.as_ref().map(|(_, b)| b.agent_id.clone());
        let mut c = draft(&cid, rfq, &self.id(d), &bid, l.spec.clone(), &terms, now);

        let crit = l.spec.characteristics.criticality;
        let grant = graduated_authority(&self.cfg.authority, self.composite(&bid.agent_id), crit);
        let level = l.spec.reporting.granularity.max(grant.monitoring_floor);
        let cadence = l.spec.reporting.cadence.max(1);
        let mode = l.spec.verification_policy.mode;
        let budget = l.budget;
        let from_fraction = match &l.snapshot {
            Some((snap, author)) => match resume(&self.keys, snap, author, &bid.agent_id) {
                Ok(r) => r.from_fraction,
                Err(_) => 0.0,
            },
            None => 0.0,
        };
        self.log(Record::Contract {
            contract: cid.clone(),
            leaf: leaf.to_string(),
            delegator: self.id(d),
            delegatee: bid.agent_id.clone(),
            escrow: c.escrow_amount,
            stake: c.delegatee_stake,
            mode,
            autonomy: grant.autonomy,
            granularity: level,
        });
        if c.fund(&mut self.bank, now).is_err() {
            c.cancel(&mut self.bank, Party::Delegatee, false, now).at(now)?;
            self.log(Record::State { contract: cid, from: ContractState::Drafted, to: ContractState::Cancelled });
            return self.leaf_finished(leaf, false, "funding_failed");
        }
        self.log(Record::State { contract: cid.clone(), from: ContractState::Drafted, to: ContractState::Funded });
        c.start(now).at(now)?;
        self.log(Record::State { contract: cid.clone(), from: ContractState::Funded, to: ContractState::Active });

        if from_fraction > 0.0 {
            self.log(Record::Resume { contract: cid.clone(), agent: bid.agent_id.clone(), from_fraction });
        }
        let remaining = ((bid.estimated_duration as f64 * (1.0 - from_fraction)).ceil() as Tick).max(1);
        let expiry = now + 2 * remaining + 4 * cadence + 10;
        let root = self.agents[d].root_token.clone().expect("delegators hold a root token");
        let token = self
            .authority
            .delegate(
                &root,
                vec![
                    Caveat::scope([format!("/tasks/{leaf}")]),
                    Caveat::MaxDepth(max_depth_for(grant.autonomy)),
                    Caveat::Expiry(expiry),
                    Caveat::SpendCap(budget),
                ],
                &bid.agent_id,
            )
            .at(now)?;
        let helper = match self.agents[w].helper {
            Some(h) if !self.agents[h].revoked => {
                let cap = (grant.spend_cap_multiplier * budget as f64).floor() as Micros;
                let ht = self
                    .authority
                    .delegate(&token, vec![Caveat::ops([Operation::Read]), Caveat::SpendCap(cap)], &self.agents[h].id)
                    .at(now)?;
                Some((h, ht))
            }
            _ => None,
        };
        self.contracts.insert(
            cid.clone(),
            ContractRt {
                c,
                leaf: leaf.to_string(),
                worker: w,
                delegator: d,
                token,
                helper,
                started: now,
                remaining,
                cadence,
                level,
                from_fraction,
                events: Vec::new(),
                expected_events: remaining.div_ceil(cadence) + 1,
                spend: 0,
                progress: from_fraction,
                busy: true,
                silent: false,
                blocked: false,
                artifact: None,
                corruption: 0.0,
                submitted_at: None,
                raised: BTreeSet::new(),
            },
        );
        self.agents[w].active += 1;
        let l = self.leaves.get_mut(leaf).expect("leaf");
        l.contract = Some(cid.clone());
        l.state = LeafState::Contracted;
        self.push(now, Ev::Work { contract: cid.clone(), step: 0 });
        self.push(unresponsive_at(now, cadence), Ev::Monitor(cid));
        Ok(())
    }

    fn emit(&mut self, cid: &str, kind: EventKind, progress: f64, spend: Micros) -> Result<(), SimError> {
        let now = self.now;
        let k = &self.contracts[cid];
        let worker = self.agents[k.worker].id.clone();
        let payload = EventPayload { progress, spend, ..Default::default() };
        let ev = ProgressEvent::signed(&self.keys, now, &k.leaf, &worker, kind, k.level, payload).at(now)?;
        if !ev.verify(&self.keys) {
            return Err(SimError::InvariantViolation { tick: now, detail: format!("unverifiable event on {cid}") });
        }
        self.contracts.get_mut(cid).expect("contract").events.push(ev);
        self.log(Record::Progress { contract: cid.to_string(), agent: worker, event: kind, progress, spend });
        Ok(())
    }

    fn check_token(&mut self, holder: usize, token: &CapabilityToken, req: RequestContext) -> bool {
        let decision = self.authority.verify(token, &req);
        let lineage = self.authority.lineage(token);
        self.log(Record::Token {
            token: token.token_id.clone(),
            holder: self.id(holder),
            lineage,
            allow: decision.is_allow(),
            reason: decision.deny_reason(),
        });
        decision.is_allow()
    }

    fn on_work(&mut self, cid: &str, step: u32) -> Result<(), SimError> {
        let now = self.now;
        let k = &self.contracts[cid];
        if k.c.state != ContractState::Active || k.silent || k.blocked {
            return Ok(());
        }
        let w = k.worker;
        if let Policy::Unresponsive { after } = self.agents[w].policy {
            if now >= k.started + after {
                self.contracts.get_mut(cid).expect("contract").silent = true;
                return Ok(());
            }
        }
        let offset = now - k.started;
        let last = offset >= k.remaining;
        let progress = k.from_fraction + (1.0 - k.from_fraction) * (offset as f64 / k.remaining as f64).min(1.0);
        let spend = match self.agents[w].policy {
            Policy::ResourceExhauster { overspend } => (self.leaves[&k.leaf].budget as f64 * overspend * progress) as Micros,
            _ => (k.c.escrow_amount as f64 * progress) as Micros,
        };
        let leaf = k.leaf.clone();
        let resource = format!("/tasks/{leaf}");
        let token = k.token.clone();
        let helper = k.helper.clone();
        let req = RequestContext { resource: resource.clone(), operation: Operation::Execute, now, depth: 1, spend };
        if !self.check_token(w, &token, req) {
            let prev = self.contracts[cid].progress;
            self.emit(cid, EventKind::TaskBlocked, prev, spend)?;
            self.contracts.get_mut(cid).expect("contract").blocked = true;
            return self.monitor(cid);
        }
        if let Some((h, ht)) = helper {
            let req = RequestContext { resource, operation: Operation::Read, now, depth: 2, spend: 0 };
            self.check_token(h, &ht, req);
        }
        let kind = if last {
            EventKind::TaskCompleted
        } else if step == 0 {
            EventKind::TaskStarted
        } else {
            EventKind::CheckpointReached
        };
        self.emit(cid, kind, progress, spend)?;
        let k = self.contracts.get_mut(cid).expect("contract");
        k.progress = progress;
        k.spend = spend;
        let (started, remaining, cadence, worker) = (k.started, k.remaining, k.cadence, k.worker);
        if kind == EventKind::CheckpointReached {
            let author = self.id(worker);
            let snap = checkpoint(&self.keys, &author, &leaf, progress, Vec::new(), now).at(now)?;
            self.leaves.get_mut(&leaf).expect("leaf").snapshot = Some((snap, author.clone()));
            self.log(Record::Snapshot { contract: cid.to_string(), agent: author, fraction: progress });
        }
        if last {
            self.monitor(cid)?;
            if self.contracts[cid].c.state == ContractState::Active {
                self.submit(cid)?;
            }
            return Ok(());
        }
        self.push((now + cadence).min(started + remaining), Ev::Work { contract: cid.to_string(), step: step + 1 });
        self.push(unresponsive_at(now, cadence), Ev::Monitor(cid.to_string()));
        self.monitor(cid)
    }

    fn monitor(&mut self, cid: &str) -> Result<(), SimError> {
        let k = &self.contracts[cid];
        if k.c.state != ContractState::Active {
            return Ok(());
        }
        let watch = Watch {
            task_id: &k.leaf,
            started_at: k.started,
            cadence: k.cadence,
            budget: self.leaves[&k.leaf].budget,
            duration_est: k.remaining,
            events: &k.events,
            verdicts: &[],
        };
        let triggers = detect(&watch, &[], self.now, &self.cfg.coordination.detect);
        let leaf = k.leaf.clone();
        self.handle_triggers(Some(cid), &leaf, triggers)
    }

    fn handle_triggers(&mut self, cid: Option<&str>, leaf: &str, triggers: Vec<Trigger>) -> Result<(), SimError> {
        let severe = self.cfg.coordination.gate.severe;
        for t in triggers {
            if let Some(cid) = cid {
                let k = self.contracts.get_mut(cid).expect("contract");
                if !k.raised.insert((t.kind, t.severity >= severe)) {
                    continue;
                }
            }
            if t.validate().is_err() {
                continue;
            }
            self.log(Record::Trigger {
                leaf: leaf.to_string(),
                contract: cid.map(str::to_string),
                trigger: t.kind,
                internal: t.kind.is_internal(),
                severity: t.severity,
            });
            if self.respond(leaf, cid.map(str::to_string), &t)? != ResponseAction::AdjustParams {
                break;
            }
        }
        Ok(())
    }

    fn usable_backup(&self, leaf: &LeafRt) -> Option<AgentId> {
        let (_, bid) = leaf.backup.as_ref()?;
        let i = self.by_id[&bid.agent_id];
        let a = &self.agents[i];
        (!a.revoked && !leaf.tried.contains(&i) && a.active < a.capacity).then(|| a.id.clone())
    }

    fn respond(&mut self, leaf: &str, cid: Option<String>, t: &Trigger) -> Result<ResponseAction, SimError> {
        let l = &self.leaves[leaf];
        if matches!(l.state, LeafState::Done | LeafState::Failed | LeafState::Escalated) {
            return Ok(ResponseAction::AdjustParams);
        }
        let backup = self.usable_backup(l);
        let ctx = ResponseContext {
            characteristics: &l.node.characteristics,
            backup: backup.as_ref(),
            alternatives: self.tasks[l.task].alternatives,
            human_available: self.human().is_some(),
        };
        let plan = select_response(t, &ctx, &self.cfg.coordination.gate);
        self.log(Record::Response {
            leaf: leaf.to_string(),
            trigger: t.kind,
            action: plan.action,
            urgency: plan.urgency,
            locked: l.locked,
            uses_backup: plan.uses_backup,
        });
        let misconduct = t.kind.is_internal() || t.kind == TriggerKind::SecurityFlag;
        match plan.action {
            ResponseAction::AdjustParams => {}
            ResponseAction::ReDelegateSubtask => self.redelegate(leaf, cid, plan.uses_backup, t.kind)?,
            ResponseAction::ReDecompose => self.redelegate(leaf, cid, false, t.kind)?,
            ResponseAction::Escalate => self.escalate(leaf, cid.as_deref(), misconduct)?,
            ResponseAction::Terminate => {
                if let Some(cid) = &cid {
                    let by = if misconduct { Party::Delegatee } else { Party::Delegator };
                    self.cancel_contract(cid, by, misconduct)?;
                }
                if t.kind == TriggerKind::SecurityFlag && !self.leaves[leaf].locked {
                    if let Some(cid) = &cid {
                        let w = self.contracts[cid].worker;
                        self.leaves.get_mut(leaf).expect("leaf").tried.insert(w);
                    }
                    self.redelegate(leaf, None, false, t.kind)?;
                } else {
                    let via = if t.kind == TriggerKind::Cancellation { "cancelled" } else { "terminated" };
                    self.leaf_finished(leaf, false, via)?;
                }
            }
        }
        Ok(plan.action)
    }

    fn cancel_contract(&mut self, cid: &str, by: Party, slash: bool) -> Result<(), SimError> {
        let from = self.contracts[cid].c.state;
        if !matches!(from, ContractState::Drafted | ContractState::Funded | ContractState::Active) {
            return Ok(());
        }
        let k = self.contracts.get_mut(cid).expect("contract");
        k.c.cancel(&mut self.bank, by, slash, self.now).at(self.now)?;
        self.log_state(cid, from);
        self.release_worker(cid);
        Ok(())
    }

    /// Marks an active contract defaulted, pays verified progress and books a
    /// failure against the delegatee. Settlement waits for the replacement price.
    fn default_contract(&mut self, cid: &str) -> Result<(), SimError> {
        let now = self.now;
        let k = self.contracts.get_mut(cid).expect("contract");
        k.c.mark_default(now).at(now)?;
        let fraction = k.progress;
        match k.c.checkpoint_compensation(&mut self.bank, fraction, now) {
            Ok(_) | Err(ContractError::Unsupported) => {}
            Err(e) => return Err(e).at(now),
        }
        self.log_state(cid, ContractState::Active);
        self.release_worker(cid);
        let leaf = self.contracts[cid].leaf.clone();
        self.leaves.get_mut(&leaf).expect("leaf").pending_default = Some(cid.to_string());
        self.record_outcome(cid, false, 0.0)?;
        Ok(())
    }

    fn redelegate(&mut self, leaf: &str, cid: Option<String>, use_backup: bool, kind: TriggerKind) -> Result<(), SimError> {
        let now = self.now;
        if self.draining {
            if let Some(cid) = &cid {
                self.cancel_contract(cid, Party::Delegatee, false)?;
            }
            return self.leaf_finished(leaf, false, "horizon");
        }
        let decision = apply_stability(&self.cfg.coordination.stability, &self.leaves[leaf].redelegations, now);
        self.log(Record::Stability { leaf: leaf.to_string(), decision });
        match decision {
            StabilityDecision::Defer { until } => {
                self.push(until, Ev::Retry { leaf: leaf.to_string(), contract: cid, trigger: kind });
                Ok(())
            }
            StabilityDecision::Abort { .. } => self.escalate(leaf, cid.as_deref(), true),
            StabilityDecision::Proceed { nth, fee } => {
                let d = self.tasks[self.leaves[leaf].task].delegator;
                self.pay(d, &Account::Treasury, fee, LedgerReason::Fee);
                let current = cid.or_else(|| self.leaves[leaf].contract.clone());
                let mut from = None;
                if let Some(cid) = &current {
                    if self.contracts[cid].c.state == ContractState::Active {
                        self.default_contract(cid)?;
                    }
                    let w = self.contracts[cid].worker;
                    from = Some(w);
                    self.leaves.get_mut(leaf).expect("leaf").tried.insert(w);
                }
                let backup = if use_backup { self.usable_backup(&self.leaves[leaf]) } else { None };
                let l = self.leaves.get_mut(leaf).expect("leaf");
                if matches!(l.state, LeafState::Done | LeafState::Failed | LeafState::Escalated) {
                    return Ok(());
                }
                l.redelegations.push(now);
                l.attempts = 0;
                l.contract = None;
                l.state = LeafState::Market;
                let backup_bid = if backup.is_some() { l.backup.take() } else { None };
                let from_id = from.map(|w| self.id(w)).unwrap_or_else(|| self.system.clone());
                self.log(Record::Redelegate { leaf: leaf.to_string(), from: from_id, to: backup.clone(), nth, fee });
                if let Some((rfq, bid)) = backup_bid {
                    let b = self.by_id[&bid.agent_id];
                    if self.pay(b, &Account::BondPool, bid.reputation_bond, LedgerReason::Bond) {
                        return self.form_contract(leaf, bid, &rfq);
                    }
                }
                self.broadcast(leaf)
            }
        }
    }

    fn escalate(&mut self, leaf: &str, cid: Option<&str>, slash: bool) -> Result<(), SimError> {
        if let Some(cid) = cid {
            let by = if slash { Party::Delegatee } else { Party::Delegator };
            self.cancel_contract(cid, by, slash)?;
        }
        self.finish_default(leaf, 0)?;
        self.log(Record::Escalate { leaf: leaf.to_string() });
        if self.human().is_some() && !self.draining {
            self.leaves.get_mut(leaf).expect("leaf").state = LeafState::Escalated;
            let at = self.now + self.cfg.coordination.overseer_latency;
            self.push(at, Ev::Overseer(leaf.to_string()));
            Ok(())
        } else {
            self.leaf_finished(leaf, false, "no_overseer")
        }
    }

    fn on_overseer(&mut self, leaf: &str) -> Result<(), SimError> {
        let action = self.cfg.coordination.overseer_action;
        self.log(Record::HumanDecision { leaf: leaf.to_string(), action });
        self.leaves.get_mut(leaf).expect("leaf").state = LeafState::Contracted;
        match action {
            OverseerAction::Execute => self.leaf_finished(leaf, true, "human"),
            OverseerAction::Terminate => self.leaf_finished(leaf, false, "human_terminated"),
        }
    }

    fn on_retry(&mut self, leaf: &str, cid: Option<String>, kind: TriggerKind) -> Result<(), SimError> {
        let l = &self.leaves[leaf];
        if matches!(l.state, LeafState::Done | LeafState::Failed | LeafState::Escalated) {
            return Ok(());
        }
        let Some(cid) = cid else { return self.redelegate(leaf, None, false, kind) };
        if l.contract.as_deref() != Some(cid.as_str()) {
            return Ok(());
        }
        let use_backup = self.usable_backup(l).is_some();
        match self.contracts[&cid].c.state {
            ContractState::Active => self.redelegate(leaf, Some(cid), use_backup, kind),
            ContractState::Settled => self.redelegate(leaf, None, use_backup, kind),
            _ => Ok(()),
        }
    }

    fn corruption(&mut self, w: usize) -> f64 {
        let base = match self.agents[w].policy {
            Policy::DataPoisoner { corruption }
            | Policy::SybilOperator { corruption, .. }
            | Policy::ColludingRing { corruption, .. } => corruption,
            _ => 0.0,
        };
        if let (Some(m), Some(f)) = (&self.cfg.monoculture, &self.agents[w].family) {
            if &m.family == f {
                let key = (f.clone(), self.now);
                let rate = m.failure_rate;
                let rng = &mut self.rng;
                if *self.coins.entry(key).or_insert_with(|| rng.random_bool(rate)) {
                    return 1.0;
                }
            }
        }
        base
    }

    fn submit(&mut self, cid: &str) -> Result<(), SimError> {
        let now = self.now;
        let w = self.contracts[cid].worker;
        let corruption = self.corruption(w);
        let k = self.contracts.get_mut(cid).expect("contract");
        let node = &self.leaves[&k.leaf].node;
        k.artifact = Some(Artifact::produce(node, &self.agents[w].id, corruption, 1.0));
        k.corruption = corruption;
        k.submitted_at = Some(now);
        let window_end = k.c.submit_outcome(now).at(now)?;
        let gated = k.c.verification_policy.escrow_trigger;
        let human = k.c.spec.human_required;
        self.log_state(cid, ContractState::Active);
        self.release_worker(cid);
        let v = &self.cfg.verification;
        if gated {
            let lat = if human { v.human_latency } else { v.machine_latency };
            self.push(now + lat, Ev::Verify(cid.to_string()));
        } else {
            let at = (now + v.machine_latency).min(window_end.saturating_sub(1)).max(now);
            self.push(at, Ev::Check(cid.to_string()));
            self.push(window_end, Ev::WindowEnd(cid.to_string()));
        }
        Ok(())
    }

    fn log_verdict(&mut self, cid: &str, mechanism: &str, pass: bool, quality: f64) {
        let k = &self.contracts[cid];
        self.log(Record::Verdict {
            leaf: k.leaf.clone(),
            contract: cid.to_string(),
            producer: self.agents[k.worker].id.clone(),
            mechanism: mechanism.to_string(),
            mode: k.c.verification_policy.mode,
            pass,
            quality,
            corrupted: k.corruption > 0.0,
        });
    }

    fn on_verify(&mut self, cid: &str) -> Result<(), SimError> {
        let now = self.now;
        let k = &self.contracts[cid];
        if k.c.state != ContractState::Submitted {
            return Ok(());
        }
        let (w, d) = (k.worker, k.delegator);
        let l = &self.leaves[&k.leaf];
        let node = l.node.clone();
        let modes = l.modes.clone();
        let human_required = l.spec.human_required;
        let art = k.artifact.clone().expect("submitted contracts carry an artifact");
        let v = self.cfg.verification.clone();
        let reviewer = if human_required {
            self.human().filter(|&h| self.certs.is_certified(&self.keys, &self.agents[h].id, HUMAN_REVIEWER_CERT))
        } else {
            None
        };
        let (verdict, payee, fee) = if let Some(h) = reviewer {
            let b = self.behavior(h, w);
            let vd = verify_third_party(&self.keys, &self.certs, &self.id(h), b, &node, &art, v.threshold, v.costs.audit)
                .at(now)?;
            (vd, self.acct(h), v.costs.audit)
        } else if let Some(&p) = modes.contains(&Mechanism::Proof).then(|| self.pick_verifiers(1, &[w, d])).as_ref().and_then(|p| p.first()) {
            let proof = ProofArtifact::for_artifact(&self.proof_key, &node, &art);
            let vd = verify_proof(
                &self.keys,
                &self.id(p),
                &proof,
                &node.structural_hash(),
                &node.truth_digest(),
                &self.proof_key,
                v.costs.proof_check,
            )
            .at(now)?;
            (vd, self.acct(p), v.costs.proof_check)
        } else if let Some(&a) = modes.contains(&Mechanism::ThirdParty).then(|| self.pick_verifiers(1, &[w, d])).as_ref().and_then(|p| p.first()) {
            let b = self.behavior(a, w);
            let vd = verify_third_party(&self.keys, &self.certs, &self.id(a), b, &node, &art, v.threshold, v.costs.audit)
                .at(now)?;
            (vd, self.acct(a), v.costs.audit)
        } else {
            let panel = if modes.contains(&Mechanism::Consensus) { self.pick_verifiers(v.panel_size, &[w, d]) } else { Vec::new() };
            if panel.is_empty() {
                let vd = verify_direct(&self.keys, &self.id(d), Some(&node), &art, v.threshold, v.costs.direct).at(now)?;
                (vd, Account::Treasury, v.costs.direct)
            } else {
                let voters: Vec<(AgentId, VoteBehavior)> = panel.iter().map(|&p| (self.id(p), self.behavior(p, w))).collect();
                let out = schelling_consensus(&self.keys, &voters, &node, &art, v.panel_fee, v.threshold).at(now)?;
                for (a, amt) in &out.rewards {
                    self.pay(d, &Account::Agent(a.clone()), *amt, LedgerReason::Reward);
                }
                self.log(Record::Panel { contract: cid.to_string(), pass: out.verdict.pass, rewards: out.rewards.clone() });
                (out.verdict, Account::Treasury, 0)
            }
        };
        self.pay(d, &payee, fee, LedgerReason::Fee);
        self.log_verdict(cid, verdict.mechanism.as_str(), verdict.pass, verdict.quality);
        let k = self.contracts.get_mut(cid).expect("contract");
        k.c.settle(&mut self.bank, verdict.pass, &BTreeMap::new(), now).at(now)?;
        self.log_state(cid, ContractState::Submitted);
        self.after_settlement(cid, verdict.pass, verdict.quality)
    }

    fn on_check(&mut self, cid: &str) -> Result<(), SimError> {
        let now = self.now;
        let k = &self.contracts[cid];
        if k.c.state != ContractState::Submitted {
            return Ok(());
        }
        let (w, d) = (k.worker, k.delegator);
        let v = self.cfg.verification.clone();
        let rate = if k.c.verification_policy.mode == VerificationMode::Spot { v.spot_check_rate } else { v.standard_check_rate };
        let node = self.leaves[&k.leaf].node.clone();
        let art = k.artifact.clone().expect("submitted contracts carry an artifact");
        let mut sincere = None;
        if self.rng.random_bool(rate) {
            self.pay(d, &Account::Treasury, v.costs.direct, LedgerReason::Fee);
            if oracle_evaluate(&node, &art).at(now)? < v.threshold {
                sincere = Some(true);
            }
        }
        if sincere.is_none() {
            if let Policy::ReputationSaboteur { rate } = self.agents[d].policy {
                if self.rng.random_bool(rate) {
                    sincere = Some(false);
                }
            }
        }
        let Some(sincere) = sincere else { return Ok(()) };
        let k = self.contracts.get_mut(cid).expect("contract");
        let bond = k.c.dispute_bond;
        let challenger = self.agents[d].id.clone();
        if k.c.challenge(&mut self.bank, &challenger, bond, now).is_err() {
            return Ok(());
        }
        self.log(Record::Challenge { contract: cid.to_string(), challenger, bond, sincere });
        self.log_state(cid, ContractState::Submitted);

        let panel = self.pick_verifiers(v.panel_size, &[w, d]);
        let (pass, quality, rewards) = if panel.is_empty() {
            let vd = verify_direct(&self.keys, &self.system, Some(&node), &art, v.threshold, 0).at(now)?;
            self.log_verdict(cid, Mechanism::Direct.as_str(), vd.pass, vd.quality);
            (vd.pass, vd.quality, BTreeMap::new())
        } else {
            let voters: Vec<(AgentId, VoteBehavior)> = panel.iter().map(|&p| (self.id(p), self.behavior(p, w))).collect();
            let pool = v.panel_fee.min(bond).min(self.contracts[cid].c.held.stake).max(1);
            let out = schelling_consensus(&self.keys, &voters, &node, &art, pool, v.threshold).at(now)?;
            self.log_verdict(cid, Mechanism::Consensus.as_str(), out.verdict.pass, out.verdict.quality);
            self.log(Record::Panel { contract: cid.to_string(), pass: out.verdict.pass, rewards: out.rewards.clone() });
            (out.verdict.pass, out.verdict.quality, out.rewards)
        };
        let k = self.contracts.get_mut(cid).expect("contract");
        k.c.arbitrate(pass, now).at(now)?;
        self.log_state(cid, ContractState::Disputed);
        let k = self.contracts.get_mut(cid).expect("contract");
        k.c.settle(&mut self.bank, pass, &rewards, now).at(now)?;
        self.log_state(cid, ContractState::Arbitrated);
        self.after_settlement(cid, pass, quality)
    }

    fn on_window_end(&mut self, cid: &str) -> Result<(), SimError> {
        let now = self.now;
        let k = self.contracts.get_mut(cid).expect("contract");
        if k.c.state != ContractState::Submitted || k.c.verification_policy.escrow_trigger {
            return Ok(());
        }
        k.c.settle_optimistic(&mut self.bank, now).at(now)?;
        let quality = k.artifact.as_ref().map_or(1.0, |a| a.quality_hint);
        self.log_verdict(cid, "optimistic", true, quality);
        self.log_state(cid, ContractState::Submitted);
        self.after_settlement(cid, true, quality)
    }

    fn log_reputation(&mut self, i: usize) {
        let id = self.id(i);
        let s = self.rep.score(&id, self.now, &self.cfg.reputation);
        self.log(Record::Reputation { agent: id, composite: s.composite, samples: s.sample_count });
    }

    fn record_outcome(&mut self, cid: &str, success: bool, quality: f64) -> Result<u64, SimError> {
        let now = self.now;
        let k = &self.contracts[cid];
        let l = &self.leaves[&k.leaf];
        let (w, d) = (k.worker, k.delegator);
        let verdict = Verdict::unsigned(&k.leaf, success, quality.clamp(0.0, 1.0), Mechanism::Direct, Vec::new(), 0);
        let vc = issue_completion_credential(&self.keys, &self.agents[d].id, &self.agents[w].id, k.c.spec.digest(), &verdict, now)
            .at(now)?;
        let meta = OutcomeMetadata {
            success,
            quality: quality.clamp(0.0, 1.0),
            resources_vs_budget: k.spend as f64 / l.budget.max(1) as f64,
            deadline_met: k.submitted_at.is_some_and(|s| s <= k.started + 2 * k.remaining),
            constraints_met: !k.blocked,
            transparency_obs: (k.events.len() as f64 / k.expected_events.max(1) as f64).min(1.0),
            safety_obs: if k.blocked { 0.5 } else { 1.0 },
            tick: now,
            complexity: l.node.characteristics.complexity.clamp(0.0, 1.0),
        };
        let seq = self.rep.record(&self.keys, vc, meta).at(now)?;
        let a = &mut self.agents[w];
        a.attempts += 1;
        if success {
            a.successes += 1;
        }
        self.log_reputation(w);
        self.breaker_check(w, false)?;
        Ok(seq)
    }

    fn breaker_check(&mut self, w: usize, anomaly: bool) -> Result<(), SimError> {
        if self.agents[w].revoked {
            return Ok(());
        }
        let id = self.id(w);
        let traj = self.rep.trajectory(&id, self.now, &self.cfg.reputation);
        let trip = breaker_latest(&traj, self.cfg.reputation.prior, &self.cfg.breaker);
        if trip.is_none() && !anomaly {
            return Ok(());
        }
        self.agents[w].revoked = true;
        self.log(Record::BreakerTrip { agent: id.clone(), drop: trip.map_or(0.0, |t| t.drop), anomaly });
        let tokens = match self.authority.revoke(RevocationTarget::Agent(id.clone()), self.now) {
            Ok(n) => n.affected_tokens,
            Err(_) => Vec::new(),
        };
        self.log(Record::Revocation { agent: id.clone(), tokens });
        let active: Vec<(String, String)> = self
            .contracts
            .iter()
            .filter(|(_, k)| k.worker == w && k.c.state == ContractState::Active)
            .map(|(c, k)| (c.clone(), k.leaf.clone()))
            .collect();
        for (cid, leaf) in active {
            // confirm the revocation reaches every token under this contract before terminating
            let k = &self.contracts[&cid];
            let resource = format!("/tasks/{leaf}");
            let mut probes = vec![(w, k.token.clone(), Operation::Execute, 1)];
            probes.extend(k.helper.clone().map(|(h, t)| (h, t, Operation::Read, 2)));
            for (holder, token, operation, depth) in probes {
                let req = RequestContext { resource: resource.clone(), operation, now: self.now, depth, spend: 0 };
                self.check_token(holder, &token, req);
            }
            let t = Trigger::new(TriggerKind::SecurityFlag, &leaf, self.now, vec![format!("breaker:{id}")]);
            self.handle_triggers(Some(&cid), &leaf, vec![t])?;
        }
        Ok(())
    }

    fn after_settlement(&mut self, cid: &str, pass: bool, quality: f64) -> Result<(), SimError> {
        let now = self.now;
        let seq = self.record_outcome(cid, pass, quality)?;
        let k = &self.contracts[cid];
        let (w, leaf) = (k.worker, k.leaf.clone());
        if pass {
            if let Policy::BackdoorImplanter { reveal_after } = self.agents[w].policy {
                self.push(now + reveal_after.max(1), Ev::Reveal { agent: w, seq });
            }
            return self.leaf_finished(&leaf, true, "contract");
        }
        self.leaves.get_mut(&leaf).expect("leaf").tried.insert(w);
        if self.draining {
            return self.leaf_finished(&leaf, false, "horizon");
        }
        let k = &self.contracts[cid];
        let verdicts = [(now, false)];
        let watch = Watch {
            task_id: &leaf,
            started_at: k.started,
            cadence: k.cadence,
            budget: self.leaves[&leaf].budget,
            duration_est: k.remaining,
            events: &k.events,
            verdicts: &verdicts,
        };
        let triggers: Vec<Trigger> = detect(&watch, &[], now, &self.cfg.coordination.detect)
            .into_iter()
            .filter(|t| t.kind == TriggerKind::VerificationFailure)
            .collect();
        self.handle_triggers(Some(cid), &leaf, triggers)
    }

    fn on_reveal(&mut self, w: usize, seq: u64) -> Result<(), SimError> {
        let now = self.now;
        self.rep.retroactive_update(seq, false, 0.0, now, "latent flaw surfaced").at(now)?;
        self.log(Record::Correction { agent: self.id(w), corrects: seq });
        self.log_reputation(w);
        self.breaker_check(w, true)
    }

    fn leaf_finished(&mut self, leaf: &str, ok: bool, via: &str) -> Result<(), SimError> {
        let l = &self.leaves[leaf];
        if matches!(l.state, LeafState::Done | LeafState::Failed) {
            return Ok(());
        }
        self.finish_default(leaf, 0)?;
        if let Some(rfq) = self.leaves.get_mut(leaf).expect("leaf").rfq.take() {
            self.rfqs.remove(&rfq);
            if self.book.withdraw(&mut self.bank, &rfq, self.now).is_ok() {
                self.log(Record::Withdraw { rfq });
            }
        }
        let l = self.leaves.get_mut(leaf).expect("leaf");
        l.state = if ok { LeafState::Done } else { LeafState::Failed };
        let (ti, counted, succs) = (l.task, l.counted, l.succs.clone());
        l.counted = false;
        let task_id = self.tasks[ti].id.clone();
        self.log(Record::LeafDone { leaf: leaf.to_string(), task: task_id.clone(), ok, via: via.to_string() });
        let d = self.tasks[ti].delegator;
        if counted {
            self.open[d] -= 1;
            while let Some(next) = self.backlog[d].pop_front() {
                let n = &self.leaves[&next];
                if n.state == LeafState::Queued && !self.tasks[n.task].finished {
                    self.open[d] += 1;
                    let n = self.leaves.get_mut(&next).expect("leaf");
                    n.state = LeafState::Market;
                    n.counted = true;
                    self.broadcast(&next)?;
                    break;
                }
            }
        }
        let t = &mut self.tasks[ti];
        if t.finished {
            return Ok(());
        }
        let makespan = self.now - t.arrival;
        if !ok {
            t.finished = true;
            self.log(Record::TaskDone { task: task_id, ok: false, makespan });
            return Ok(());
        }
        t.remaining -= 1;
        if t.remaining == 0 {
            t.finished = true;
            self.log(Record::TaskDone { task: task_id, ok: true, makespan });
            return Ok(());
        }
        for s in succs {
            let n = self.leaves.get_mut(&s).expect("leaf");
            n.preds -= 1;
            if n.preds == 0 && n.state == LeafState::Waiting {
                self.ready(&s)?;
            }
        }
        Ok(())
    }

    fn on_external(&mut self, k: usize) -> Result<(), SimError> {
        let e = &self.sc.external_events[k];
        let Some(&ti) = self.tasks_by_id.get(&e.task) else { return Ok(()) };
        if self.tasks[ti].finished {
            return Ok(());
        }
        let kind = match e.kind {
            ExternalKind::SpecChange => TriggerKind::SpecChange,
            ExternalKind::Cancellation => TriggerKind::Cancellation,
            ExternalKind::ResourceShift => TriggerKind::ResourceShift,
            ExternalKind::Preemption => TriggerKind::Preemption,
            ExternalKind::SecurityFlag => TriggerKind::SecurityFlag,
        };
        for leaf in self.tasks[ti].leaves.clone() {
            let l = &self.leaves[&leaf];
            if matches!(l.state, LeafState::Done | LeafState::Failed) {
                continue;
            }
            let active = l.contract.clone().filter(|c| self.contracts[c].c.state == ContractState::Active);
            let t = Trigger::new(kind, &leaf, self.now, vec![format!("external:{kind:?}@{}", self.now)]);
            match active {
                Some(cid) => self.handle_triggers(Some(&cid), &leaf, vec![t])?,
                None if kind == TriggerKind::Cancellation => {
                    self.log(Record::Trigger { leaf: leaf.clone(), contract: None, trigger: kind, internal: false, severity: 0.0 });
                    self.leaf_finished(&leaf, false, "cancelled")?;
                }
                None => {}
            }
        }
        Ok(())
    }

    fn close_out(&mut self) -> Result<(), SimError> {
        self.now = self.now.max(self.sc.horizon);
        self.draining = true;
        let mut closed = 0;
        let ids: Vec<String> = self.contracts.keys().cloned().collect();
        for cid in &ids {
            let state = self.contracts[cid].c.state;
            if matches!(state, ContractState::Drafted | ContractState::Funded | ContractState::Active) {
                self.cancel_contract(cid, Party::Delegatee, false)?;
                let leaf = self.contracts[cid].leaf.clone();
                self.leaf_finished(&leaf, false, "horizon")?;
                closed += 1;
            }
        }
        for cid in &ids {
            if self.contracts[cid].c.state == ContractState::Defaulted {
                let k = self.contracts.get_mut(cid).expect("contract");
                k.c.default_and_reauction(&mut self.bank, 0, self.now).at(self.now)?;
                self.log_state(cid, ContractState::Defaulted);
                closed += 1;
            }
        }
        let open: Vec<(String, String)> = std::mem::take(&mut self.rfqs).into_iter().collect();
        let rfqs = open.len();
        for (rfq, leaf) in open {
            self.leaves.get_mut(&leaf).expect("leaf").rfq = None;
            if self.book.withdraw(&mut self.bank, &rfq, self.now).is_ok() {
                self.log(Record::Withdraw { rfq });
            }
            self.leaf_finished(&leaf, false, "horizon")?;
        }
        self.after_handler()?;
        while let Some(((t, _), ev)) = self.queue.pop_first() {
            if !ev.drains() {
                continue;
            }
            self.now = self.now.max(t);
            self.handle(ev)?;
            self.after_handler()?;
        }
        self.log(Record::CloseOut { contracts: closed, rfqs });
        let stranded = self.bank.sum_where(|a| matches!(a, Account::BondPool | Account::Escrow(_)));
        if stranded != 0 {
            return Err(SimError::InvariantViolation {
                tick: self.now,
                detail: format!("{stranded} micro-units stranded in bonds or escrow after close-out"),
            });
        }
        Ok(())
    }
}
