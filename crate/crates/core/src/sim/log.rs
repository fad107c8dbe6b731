//! JSON-lines event log. Metrics are derived from the log alone so a replay
//! needs nothing but the file.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scenario::{OverseerAction, Role};
use super::SimError;
use crate::bank::{Account, LedgerReason};
use crate::contract::ContractState;
use crate::coordination::{ResponseAction, StabilityDecision, TriggerKind, Urgency};
use crate::crypto::{sha256, Digest};
use crate::identity::{AgentId, DenyReason};
use crate::market::RejectReason;
use crate::monitoring::{EventKind, Granularity};
use crate::reputation::{Autonomy, ReputationLedger};
use crate::verification::VerificationMode;
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafInfo {
    pub leaf: String,
    pub verifiability: f64,
    pub human_required: bool,
    pub mode: VerificationMode,
    pub direct: bool,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    RunStart {
        seed: u64,
        horizon: Tick,
        scenario: Digest,
    },
    Agent {
        agent: AgentId,
        label: String,
        role: Role,
        policy: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<String>,
    },
    Transfer {
        from: Account,
        to: Account,
        amount: Micros,
        reason: LedgerReason,
    },
    TaskArrival {
        task: String,
        delegator: AgentId,
        nodes: usize,
    },
    Decomposition {
        task: String,
        proposal: String,
        alternatives: usize,
        leaves: Vec<LeafInfo>,
    },
    TaskRejected {
        task: String,
        reason: String,
    },
    Rfq {
        rfq: String,
        leaf: String,
        delegator: AgentId,
        deadline: Tick,
        min_stake: Micros,
        attempt: u32,
    },
    Bid {
        rfq: String,
        agent: AgentId,
        cost: Micros,
        bond: Micros,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rejected: Option<RejectReason>,
    },
    Award {
        rfq: String,
        leaf: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        winner: Option<AgentId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backup: Option<AgentId>,
        excluded: Vec<AgentId>,
        threshold: f64,
    },
    /// RFQ abandoned without award; every bond refunded.
    Withdraw {
        rfq: String,
    },
    Contract {
        contract: String,
        leaf: String,
        delegator: AgentId,
        delegatee: AgentId,
        escrow: Micros,
        stake: Micros,
        mode: VerificationMode,
        autonomy: Autonomy,
        granularity: Granularity,
    },
    State {
        contract: String,
        from: ContractState,
        to: ContractState,
    },
    Token {
        token: String,
        holder: AgentId,
        lineage: Vec<AgentId>,
        allow: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<DenyReason>,
    },
    Progress {
        contract: String,
        agent: AgentId,
        event: EventKind,
        progress: f64,
        spend: Micros,
    },
    Snapshot {
        contract: String,
        agent: AgentId,
        fraction: f64,
    },
    Resume {
        contract: String,
        agent: AgentId,
        from_fraction: f64,
    },
    Trigger {
        leaf: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contract: Option<String>,
        trigger: TriggerKind,
        internal: bool,
        severity: f64,
    },
    Response {
        leaf: String,
        trigger: TriggerKind,
        action: ResponseAction,
        urgency: Urgency,
        locked: bool,
        uses_backup: bool,
    },
    Stability {
        leaf: String,
        decision: StabilityDecision,
    },
    Redelegate {
        leaf: String,
        from: AgentId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<AgentId>,
        nth: u32,
        fee: Micros,
    },
    Escalate {
        leaf: String,
    },
    HumanDecision {
        leaf: String,
        action: OverseerAction,
    },
    Verdict {
        leaf: String,
        contract: String,
        producer: AgentId,
        mechanism: String,
        mode: VerificationMode,
        pass: bool,
        quality: f64,
        /// Ground truth known only to the simulator.
        corrupted: bool,
    },
    Challenge {
        contract: String,
        challenger: AgentId,
        bond: Micros,
        /// Whether the challenger's own inspection actually failed the work.
        sincere: bool,
    },
    Panel {
        contract: String,
        pass: bool,
        rewards: BTreeMap<AgentId, Micros>,
    },
    Reputation {
        agent: AgentId,
        composite: f64,
        samples: u64,
    },
    Correction {
        agent: AgentId,
        corrects: u64,
    },
    BreakerTrip {
        agent: AgentId,
        drop: f64,
        anomaly: bool,
    },
    Revocation {
        agent: AgentId,
        tokens: Vec<String>,
    },
    LeafDone {
        leaf: String,
        task: String,
        ok: bool,
        via: String,
    },
    TaskDone {
        task: String,
        ok: bool,
        makespan: Tick,
    },
    CloseOut {
        contracts: usize,
        rfqs: usize,
    },
    RunEnd {
        digest: Digest,
        metrics: Metrics,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub seq: u64,
    pub tick: Tick,
    #[serde(flatten)]
    pub record: Record,
}

impl LogLine {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log lines serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tasks_total: u64,
    pub tasks_completed: u64,
    pub completion_rate: f64,
    /// Net outflow from delegator accounts.
    pub total_cost: i64,
    pub mean_makespan: f64,
    pub contracts: u64,
    pub settled: u64,
    pub redelegation_count: u64,
    pub oscillation_max_per_task: u64,
    /// Internal triggers raised by monitoring or verification.
    pub breach_detections: u64,
    pub challenges: u64,
    pub adversary_earnings: i64,
    pub honest_earnings: i64,
    pub earnings: BTreeMap<AgentId, i64>,
    pub auctions_won: BTreeMap<AgentId, u64>,
    pub reputation: BTreeMap<AgentId, Vec<(Tick, f64)>>,
}

/// Hash of the concatenated canonical lines, each terminated by a newline.
pub fn log_digest<'a>(lines: impl IntoIterator<Item = &'a str>) -> Digest {
    let mut buf = Vec::new();
    for l in lines {
        buf.extend_from_slice(l.as_bytes());
        buf.push(b'\n');
    }
    sha256(&buf)
}

pub fn compute_metrics(log: &[LogLine]) -> Metrics {
    let mut m = Metrics::default();
    let mut roles: BTreeMap<AgentId, (Role, bool)> = BTreeMap::new();
    let mut net: BTreeMap<AgentId, i128> = BTreeMap::new();
    let mut redelegations: BTreeMap<&str, u64> = BTreeMap::new();
    let mut makespans = Vec::new();
    let mut tasks = BTreeSet::new();
    for l in log {
        match &l.record {
            Record::Agent { agent, role, policy, .. } => {
                roles.insert(agent.clone(), (*role, policy == "honest"));
                net.entry(agent.clone()).or_default();
            }
            Record::Transfer { from, to, amount, reason } => {
                let a = i128::from(*amount);
                if let Account::Agent(x) = from {
                    *net.entry(x.clone()).or_default() -= a;
                }
                if let Account::Agent(x) = to {
                    if *reason != LedgerReason::Genesis {
                        *net.entry(x.clone()).or_default() += a;
                    }
                }
            }
            Record::TaskArrival { task, .. } => {
                tasks.insert(task.as_str());
            }
            Record::TaskDone { ok, makespan, .. } => {
                if *ok {
                    m.tasks_completed += 1;
                    makespans.push(*makespan);
                }
            }
            Record::Contract { .. } => m.contracts += 1,
            Record::State { to: ContractState::Settled, .. } => m.settled += 1,
            Record::Redelegate { leaf, .. } => {
                m.redelegation_count += 1;
                *redelegations.entry(leaf.as_str()).or_default() += 1;
            }
            Record::Trigger { internal: true, .. } => m.breach_detections += 1,
            Record::Challenge { .. } => m.challenges += 1,
            Record::Award { winner: Some(w), .. } => *m.auctions_won.entry(w.clone()).or_default() += 1,
            Record::Reputation { agent, composite, .. } => {
                m.reputation.entry(agent.clone()).or_default().push((l.tick, *composite));
            }
            _ => {}
        }
    }
    m.tasks_total = tasks.len() as u64;
    m.completion_rate = if m.tasks_total == 0 { 1.0 } else { m.tasks_completed as f64 / m.tasks_total as f64 };
    m.mean_makespan =
        if makespans.is_empty() { 0.0 } else { makespans.iter().sum::<Tick>() as f64 / makespans.len() as f64 };
    m.oscillation_max_per_task = redelegations.values().copied().max().unwrap_or(0);
    for (agent, change) in &net {
        let change = *change as i64;
        m.earnings.insert(agent.clone(), change);
        match roles.get(agent) {
            Some((Role::Delegator, _)) => m.total_cost -= change,
            Some((_, true)) => m.honest_earnings += change,
            Some((_, false)) => m.adversary_earnings += change,
            None => {}
        }
        if let Some((Role::Delegator, false)) = roles.get(agent) {
            m.adversary_earnings += change;
        }
    }
    m
}

/// A finished run: every line including the trailer, plus the parsed form.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub event_log: Vec<String>,
    pub records: Vec<LogLine>,
    pub event_log_digest: Digest,
    pub metrics: Metrics,
    /// Reputation ledger as it stood at close-out. Not part of the log, so
    /// empty after a replay.
    pub reputation: ReputationLedger,
}

impl RunResult {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for l in &self.event_log {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Seals a body of records with the `run_end` trailer.
pub fn seal(records: Vec<LogLine>) -> RunResult {
    let event_log: Vec<String> = records.iter().map(LogLine::to_line).collect();
    let digest = log_digest(event_log.iter().map(String::as_str));
    let metrics = compute_metrics(&records);
    let tick = records.last().map_or(0, |l| l.tick);
    let trailer = LogLine {
        seq: records.len() as u64,
        tick,
        record: Record::RunEnd { digest, metrics: metrics.clone() },
    };
    let mut event_log = event_log;
    event_log.push(trailer.to_line());
    let mut records = records;
    records.push(trailer);
    RunResult { event_log, records, event_log_digest: digest, metrics, reputation: ReputationLedger::new() }
}

fn mismatch(msg: impl Into<String>) -> SimError {
    SimError::ReplayMismatch(msg.into())
}

/// Recomputes digest and metrics from the text of a log and checks them
/// against its trailer. Any edited, reordered or non-canonical line fails.
pub fn replay(text: &str) -> Result<RunResult, SimError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let (trailer, body) = lines.split_last().ok_or_else(|| mismatch("empty log"))?;
    let mut records = Vec::with_capacity(body.len());
    for (i, l) in body.iter().enumerate() {
        let rec: LogLine = serde_json::from_str(l).map_err(|e| mismatch(format!("line {}: {e}", i + 1)))?;
        if rec.seq != i as u64 {
            return Err(mismatch(format!("line {}: sequence {} out of order", i + 1, rec.seq)));
        }
        if rec.to_line() != *l {
            return Err(mismatch(format!("line {}: not in canonical form", i + 1)));
        }
        if matches!(rec.record, Record::RunEnd { .. }) {
            return Err(mismatch(format!("line {}: trailer before end of log", i + 1)));
        }
        records.push(rec);
    }
    let end: LogLine = serde_json::from_str(trailer).map_err(|e| mismatch(format!("trailer: {e}")))?;
    let Record::RunEnd { digest, metrics } = &end.record else {
        return Err(mismatch("last line is not a run_end trailer"));
    };
    let result = seal(records);
    if result.event_log_digest != *digest {
        return Err(mismatch(format!(
            "digest {} does not match trailer {}",
            result.event_log_digest.to_hex(),
            digest.to_hex()
        )));
    }
    if result.metrics != *metrics {
        return Err(mismatch("recomputed metrics differ from trailer"));
    }
    if result.event_log.last().map(String::as_str) != Some(*trailer) {
        return Err(mismatch("trailer not in canonical form"));
    }
    Ok(result)
}

/// Flat metrics table: one `name,value` row per scalar.
pub fn metrics_csv(m: &Metrics) -> String {
    let rows: [(&str, String); 13] = [
        ("tasks_total", m.tasks_total.to_string()),
        ("tasks_completed", m.tasks_completed.to_string()),
        ("completion_rate", m.completion_rate.to_string()),
        ("total_cost", m.total_cost.to_string()),
        ("mean_makespan", m.mean_makespan.to_string()),
        ("contracts", m.contracts.to_string()),
        ("settled", m.settled.to_string()),
        ("redelegation_count", m.redelegation_count.to_string()),
        ("oscillation_max_per_task", m.oscillation_max_per_task.to_string()),
        ("breach_detections", m.breach_detections.to_string()),
        ("challenges", m.challenges.to_string()),
        ("adversary_earnings", m.adversary_earnings.to_string()),
        ("honest_earnings", m.honest_earnings.to_string()),
    ];
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        s.push_str(k);
        s.push(',');
        s.push_str(&v);
        s.push('\n');
    }
    s
}
