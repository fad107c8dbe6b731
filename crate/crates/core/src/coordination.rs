//! Adaptive coordination: trigger detection over monitoring streams,
//! response selection behind a reversibility/criticality gate, anti-oscillation
//! controls for re-delegation, and signed progress snapshots.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{Digest, Signature};
use crate::identity::{AgentId, IdentityError, KeyRegistry};
use crate::monitoring::{unresponsive_at, EventKind, ProgressEvent};
use crate::task::TaskCharacteristics;
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoordinationError {
    #[error("snapshot for {0} failed integrity check")]
    CorruptSnapshot(String),
    #[error("internal trigger {0:?} carries no evidence")]
    MissingEvidence(TriggerKind),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    SpecChange,
    Cancellation,
    ResourceShift,
    Preemption,
    SecurityFlag,
    PerfDegradation,
    BudgetOverrun,
    VerificationFailure,
    Unresponsive,
}

impl TriggerKind {
    pub fn is_internal(self) -> bool {
        matches!(
            self,
            TriggerKind::PerfDegradation
                | TriggerKind::BudgetOverrun
                | TriggerKind::VerificationFailure
                | TriggerKind::Unresponsive
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub task_id: String,
    pub evidence: Vec<String>,
    pub tick: Tick,
    /// 0 for mild, 1 for total failure; only meaningful for PerfDegradation.
    #[serde(default)]
    pub severity: f64,
}

impl Trigger {
    pub fn new(kind: TriggerKind, task_id: &str, tick: Tick, evidence: Vec<String>) -> Self {
        Self { kind, task_id: task_id.to_string(), evidence, tick, severity: 0.0 }
    }

    pub fn validate(&self) -> Result<(), CoordinationError> {
        if self.kind.is_internal() && self.evidence.is_empty() {
            return Err(CoordinationError::MissingEvidence(self.kind));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Minimum acceptable share of the expected progress velocity.
    pub slo_fraction: f64,
    /// Grace period for slow progress, in reporting cadences.
    pub grace_cadences: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { slo_fraction: 0.5, grace_cadences: 3 }
    }
}

/// What `detect` needs to know about one running contract.
#[derive(Debug, Clone)]
pub struct Watch<'a> {
    pub task_id: &'a str,
    pub started_at: Tick,
    pub cadence: Tick,
    pub budget: Micros,
    pub duration_est: Tick,
    pub events: &'a [ProgressEvent],
    /// (tick, pass) verification outcomes for this task.
    pub verdicts: &'a [(Tick, bool)],
}

fn event_ref(e: &ProgressEvent) -> String {
    format!("event:{}@{}", e.kind.as_str(), e.tick)
}

/// Internal triggers currently raised for `w`, followed by any external ones
/// for the same task. Pure function of its inputs.
pub fn detect(w: &Watch<'_>, external: &[Trigger], now: Tick, cfg: &DetectConfig) -> Vec<Trigger> {
    let mut out = Vec::new();
    let done = w.events.iter().any(|e| e.kind == EventKind::TaskCompleted);

    let spend = w.events.iter().map(|e| e.payload.spend).max().unwrap_or(0);
    if spend > w.budget {
        let e = w.events.iter().find(|e| e.payload.spend == spend).expect("max came from an event");
        let mut t = Trigger::new(TriggerKind::BudgetOverrun, w.task_id, e.tick, vec![event_ref(e)]);
        t.severity = ((spend - w.budget) as f64 / w.budget.max(1) as f64).min(1.0);
        out.push(t);
    }

    if !done {
        let last = w.events.iter().map(|e| e.tick).max().unwrap_or(w.started_at).max(w.started_at);
        let at = unresponsive_at(last, w.cadence);
        if now >= at {
            let evidence = match w.events.last() {
                Some(e) => vec![event_ref(e), format!("silent:{}..{}", last, at)],
                None => vec![format!("contract_started@{}", w.started_at), format!("silent:{}..{}", last, at)],
            };
            out.push(Trigger::new(TriggerKind::Unresponsive, w.task_id, at, evidence));
        }

        let grace = cfg.grace_cadences * w.cadence;
        let elapsed = now.saturating_sub(w.started_at);
        if elapsed >= grace && elapsed > 0 && w.duration_est > 0 {
            let progress = w.events.iter().map(|e| e.payload.progress).fold(0.0, f64::max);
            let velocity = progress / elapsed as f64;
            let expected = 1.0 / w.duration_est as f64;
            let ratio = velocity / expected;
            if ratio < cfg.slo_fraction {
                let mut t = Trigger::new(
                    TriggerKind::PerfDegradation,
                    w.task_id,
                    now,
                    vec![format!("velocity_ratio:{ratio:.4}@{now}")],
                );
                t.severity = (1.0 - ratio / cfg.slo_fraction).clamp(0.0, 1.0);
                out.push(t);
            }
        }
    }

    for (tick, pass) in w.verdicts {
        if !pass {
            out.push(Trigger::new(
                TriggerKind::VerificationFailure,
                w.task_id,
                *tick,
                vec![format!("verdict:fail@{tick}")],
            ));
        }
    }

    out.extend(external.iter().filter(|t| t.task_id == w.task_id && !t.kind.is_internal()).cloned());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseAction {
    AdjustParams,
    ReDelegateSubtask,
    ReDecompose,
    Escalate,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    Immediate,
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePlan {
    pub action: ResponseAction,
    pub urgency: Urgency,
    pub target: String,
    pub uses_backup: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backup: Option<AgentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyGate {
    /// Reversibility below this counts as irreversible.
    pub rho: f64,
    /// Criticality above this counts as critical.
    pub kappa: f64,
    /// PerfDegradation severity at or above this re-delegates instead of tuning.
    pub severe: f64,
}

impl Default for SafetyGate {
    fn default() -> Self {
        Self { rho: 0.3, kappa: 0.7, severe: 0.5 }
    }
}

impl SafetyGate {
    pub fn locks(&self, c: &TaskCharacteristics) -> bool {
        c.reversibility < self.rho && c.criticality > self.kappa
    }
}

#[derive(Debug, Clone)]
pub struct ResponseContext<'a> {
    pub characteristics: &'a TaskCharacteristics,
    pub backup: Option<&'a AgentId>,
    /// Retained alternative proposals for the affected subtree.
    pub alternatives: usize,
    /// A human overseer is reachable, from the grant or the scenario.
    pub human_available: bool,
}

pub fn select_response(trigger: &Trigger, ctx: &ResponseContext<'_>, gate: &SafetyGate) -> ResponsePlan {
    use ResponseAction as R;
    let target = trigger.task_id.clone();
    let plan = |action, urgency| ResponsePlan { action, urgency, target: target.clone(), uses_backup: false, backup: None };

    if trigger.kind == TriggerKind::SecurityFlag {
        return plan(R::Terminate, Urgency::Immediate);
    }
    if gate.locks(ctx.characteristics) && trigger.kind != TriggerKind::ResourceShift {
        let action = if ctx.human_available { R::Escalate } else { R::Terminate };
        return plan(action, Urgency::Immediate);
    }
    let redelegate = || ResponsePlan {
        action: R::ReDelegateSubtask,
        urgency: Urgency::Immediate,
        target: target.clone(),
        uses_backup: ctx.backup.is_some(),
        backup: ctx.backup.cloned(),
    };
    match trigger.kind {
        TriggerKind::SecurityFlag => unreachable!("handled above"),
        TriggerKind::Cancellation => plan(R::Terminate, Urgency::Scheduled),
        TriggerKind::SpecChange => plan(R::ReDecompose, Urgency::Scheduled),
        TriggerKind::ResourceShift => {
            if gate.locks(ctx.characteristics) {
                let action = if ctx.human_available { R::Escalate } else { R::Terminate };
                plan(action, Urgency::Immediate)
            } else {
                plan(R::AdjustParams, Urgency::Scheduled)
            }
        }
        TriggerKind::PerfDegradation if trigger.severity < gate.severe => plan(R::AdjustParams, Urgency::Scheduled),
        TriggerKind::VerificationFailure if ctx.backup.is_none() && ctx.alternatives > 0 => {
            // an alternative decomposition is cheaper to activate than a fresh auction
            plan(R::ReDecompose, Urgency::Immediate)
        }
        TriggerKind::PerfDegradation
        | TriggerKind::VerificationFailure
        | TriggerKind::Unresponsive
        | TriggerKind::BudgetOverrun
        | TriggerKind::Preemption => redelegate(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityPolicy {
    pub rebid_cooldown: Tick,
    /// Fee for the first re-delegation; each further one doubles it.
    pub base_fee: Micros,
    pub max_redelegations: Option<u32>,
}

impl Default for StabilityPolicy {
    fn default() -> Self {
        Self { rebid_cooldown: 10, base_fee: 10_000, max_redelegations: Some(4) }
    }
}

impl StabilityPolicy {
    /// Fee charged for the `n`-th re-delegation (1-based); non-decreasing in `n`.
    pub fn fee(&self, n: u32) -> Micros {
        let shift = n.saturating_sub(1).min(40);
        self.base_fee.saturating_mul(1u64 << shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum StabilityDecision {
    Proceed { nth: u32, fee: Micros },
    Defer { until: Tick },
    Abort { count: u32 },
}

/// `history` holds the ticks of earlier re-delegations of the same task.
pub fn apply_stability(policy: &StabilityPolicy, history: &[Tick], now: Tick) -> StabilityDecision {
    let count = history.len() as u32;
    if policy.max_redelegations.is_some_and(|m| count >= m) {
        return StabilityDecision::Abort { count };
    }
    if let Some(&last) = history.iter().max() {
        let until = last + policy.rebid_cooldown;
        if now < until {
            return StabilityDecision::Defer { until };
        }
    }
    StabilityDecision::Proceed { nth: count + 1, fee: policy.fee(count + 1) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub task_id: String,
    pub fraction: f64,
    pub artifact_digests: Vec<Digest>,
    pub tick: Tick,
    pub signature: Signature,
}

struct SnapshotBody<'a>(&'a StateSnapshot);

impl Canonical for SnapshotBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        let s = self.0;
        w.str(&s.task_id).f64(s.fraction).u64(s.artifact_digests.len() as u64);
        for d in &s.artifact_digests {
            w.bytes(d.as_bytes());
        }
        w.u64(s.tick);
    }
}

pub fn checkpoint(
    keys: &KeyRegistry,
    agent: &AgentId,
    task_id: &str,
    fraction: f64,
    artifact_digests: Vec<Digest>,
    tick: Tick,
) -> Result<StateSnapshot, IdentityError> {
    let mut s = StateSnapshot {
        task_id: task_id.to_string(),
        fraction: fraction.clamp(0.0, 1.0),
        artifact_digests,
        tick,
        signature: Digest::default(),
    };
    s.signature = keys.sign_value(agent, &SnapshotBody(&s))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resumption {
    pub task_id: String,
    pub from_fraction: f64,
    pub artifact_digests: Vec<Digest>,
    pub resumed_by: AgentId,
}

/// Continues from a snapshot signed by `author`; any altered field is rejected.
pub fn resume(
    keys: &KeyRegistry,
    snapshot: &StateSnapshot,
    author: &AgentId,
    new_agent: &AgentId,
) -> Result<Resumption, CoordinationError> {
    if !keys.verify_value(author, &SnapshotBody(snapshot), &snapshot.signature) {
        return Err(CoordinationError::CorruptSnapshot(snapshot.task_id.clone()));
    }
    Ok(Resumption {
        task_id: snapshot.task_id.clone(),
        from_fraction: snapshot.fraction,
        artifact_digests: snapshot.artifact_digests.clone(),
        resumed_by: new_agent.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::SecretKey;
    use crate::monitoring::{EventPayload, Granularity};
    use proptest::prelude::*;

    fn keys() -> (KeyRegistry, AgentId) {
        let mut k = KeyRegistry::new();
        let a = AgentId::derive("worker");
        k.register(a.clone(), SecretKey::derive(1, "worker")).unwrap();
        (k, a)
    }

    fn ev(k: &KeyRegistry, a: &AgentId, tick: Tick, progress: f64, spend: Micros) -> ProgressEvent {
        let p = EventPayload { progress, spend, ..Default::default() };
        ProgressEvent::signed(k, tick, "t", a, EventKind::CheckpointReached, Granularity::L1, p).unwrap()
    }

    fn watch<'a>(events: &'a [ProgressEvent], budget: Micros) -> Watch<'a> {
        Watch { task_id: "t", started_at: 0, cadence: 5, budget, duration_est: 50, events, verdicts: &[] }
    }

    #[test]
    fn healthy_stream_is_quiet() {
        let (k, a) = keys();
        let events: Vec<_> = (1..=4).map(|i| ev(&k, &a, i * 5, i as f64 * 0.1, 1000)).collect();
        assert!(detect(&watch(&events, 1_000_000), &[], 22, &DetectConfig::default()).is_empty());
    }

    #[test]
    fn budget_boundary() {
        let (k, a) = keys();
        let at = [ev(&k, &a, 5, 0.1, 1_000_000)];
        assert!(detect(&watch(&at, 1_000_000), &[], 6, &DetectConfig::default()).is_empty());
        let over = [ev(&k, &a, 5, 0.1, 1_000_001)];
        let t = detect(&watch(&over, 1_000_000), &[], 6, &DetectConfig::default());
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].kind, TriggerKind::BudgetOverrun);
    }

    #[test]
    fn unresponsive_fires_after_2c_gap() {
        let (k, a) = keys();
        let events = [ev(&k, &a, 4, 0.1, 0)];
        let w = watch(&events, 1_000_000);
        let cfg = DetectConfig::default();
        assert!(detect(&w, &[], 14, &cfg).iter().all(|t| t.kind != TriggerKind::Unresponsive));
        let t: Vec<_> = detect(&w, &[], 15, &cfg).into_iter().filter(|t| t.kind == TriggerKind::Unresponsive).collect();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].tick, 4 + 11);
        assert!(t[0].validate().is_ok());
    }

    #[test]
    fn slow_progress_after_grace() {
        let (k, a) = keys();
        let events: Vec<_> = (1..=4).map(|i| ev(&k, &a, i * 5, 0.01 * i as f64, 0)).collect();
        let w = watch(&events, 1_000_000);
        let cfg = DetectConfig::default();
        assert!(detect(&w, &[], 14, &cfg).is_empty());
        let t = detect(&w, &[], 20, &cfg);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].kind, TriggerKind::PerfDegradation);
    }

    #[test]
    fn external_pass_through_and_failures() {
        let ext = [Trigger::new(TriggerKind::Preemption, "t", 3, vec![]), Trigger::new(TriggerKind::Preemption, "u", 3, vec![])];
        let verdicts = [(7, false), (8, true)];
        let w = Watch { verdicts: &verdicts, ..watch(&[], 10) };
        let got: Vec<_> = detect(&w, &ext, 7, &DetectConfig::default()).into_iter().map(|t| t.kind).collect();
        assert_eq!(got, vec![TriggerKind::VerificationFailure, TriggerKind::Preemption]);
    }

    fn ctx<'a>(c: &'a TaskCharacteristics, backup: Option<&'a AgentId>, human: bool) -> ResponseContext<'a> {
        ResponseContext { characteristics: c, backup, alternatives: 0, human_available: human }
    }

    #[test]
    fn response_table() {
        let gate = SafetyGate::default();
        let c = TaskCharacteristics { reversibility: 0.9, criticality: 0.5, ..Default::default() };
        let b = AgentId::derive("backup");
        let sec = Trigger::new(TriggerKind::SecurityFlag, "t", 1, vec![]);
        let p = select_response(&sec, &ctx(&c, None, true), &gate);
        assert_eq!((p.action, p.urgency), (ResponseAction::Terminate, Urgency::Immediate));

        let vf = Trigger::new(TriggerKind::VerificationFailure, "t", 1, vec!["v".into()]);
        let p = select_response(&vf, &ctx(&c, Some(&b), false), &gate);
        assert_eq!(p.action, ResponseAction::ReDelegateSubtask);
        assert_eq!(p.backup.as_ref(), Some(&b));
        assert!(p.uses_backup);

        let locked = TaskCharacteristics { reversibility: 0.1, criticality: 0.9, ..Default::default() };
        assert_eq!(select_response(&vf, &ctx(&locked, Some(&b), true), &gate).action, ResponseAction::Escalate);
        assert_eq!(select_response(&vf, &ctx(&locked, Some(&b), false), &gate).action, ResponseAction::Terminate);

        let spec = Trigger::new(TriggerKind::SpecChange, "t", 1, vec![]);
        assert_eq!(select_response(&spec, &ctx(&c, None, false), &gate).action, ResponseAction::ReDecompose);
        let mut slow = Trigger::new(TriggerKind::PerfDegradation, "t", 1, vec!["v".into()]);
        slow.severity = 0.2;
        assert_eq!(select_response(&slow, &ctx(&c, None, false), &gate).action, ResponseAction::AdjustParams);
        slow.severity = 0.9;
        assert_eq!(select_response(&slow, &ctx(&c, None, false), &gate).action, ResponseAction::ReDelegateSubtask);
    }

    #[test]
    fn stability_decisions() {
        let p = StabilityPolicy::default();
        assert_eq!(apply_stability(&p, &[], 5), StabilityDecision::Proceed { nth: 1, fee: 10_000 });
        assert_eq!(apply_stability(&p, &[5], 6), StabilityDecision::Defer { until: 15 });
        assert_eq!(apply_stability(&p, &[5], 15), StabilityDecision::Proceed { nth: 2, fee: 20_000 });
        assert_eq!(apply_stability(&p, &[1, 20, 40, 60], 100), StabilityDecision::Abort { count: 4 });
    }

    #[test]
    fn snapshot_roundtrip_and_tamper() {
        let (mut k, a) = keys();
        let b = AgentId::derive("next");
        k.register(b.clone(), SecretKey::derive(1, "next")).unwrap();
        let s = checkpoint(&k, &a, "t", 0.5, vec![crate::crypto::sha256(b"part")], 9).unwrap();
        let json = serde_json::to_value(&s).unwrap();
        let keys_: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys_, ["artifact_digests", "fraction", "signature", "task_id", "tick"]);
        let r = resume(&k, &s, &a, &b).unwrap();
        assert_eq!(r.from_fraction, 0.5);
        let mut bad = s.clone();
        bad.fraction = 0.9;
        assert_eq!(resume(&k, &bad, &a, &b), Err(CoordinationError::CorruptSnapshot("t".into())));
        let mut bad = s.clone();
        bad.artifact_digests[0] = bad.artifact_digests[0].with_bit_flipped(3);
        assert!(resume(&k, &bad, &a, &b).is_err());
    }

    proptest! {
        #[test]
        fn gate_never_allows_soft_responses(rev in 0.0..1.0f64, crit in 0.0..1.0f64, kind in 0usize..9, human: bool, sev in 0.0..1.0f64) {
            let kinds = [
                TriggerKind::SpecChange, TriggerKind::Cancellation, TriggerKind::ResourceShift,
                TriggerKind::Preemption, TriggerKind::SecurityFlag, TriggerKind::PerfDegradation,
                TriggerKind::BudgetOverrun, TriggerKind::VerificationFailure, TriggerKind::Unresponsive,
            ];
            let c = TaskCharacteristics { reversibility: rev, criticality: crit, ..Default::default() };
            let mut t = Trigger::new(kinds[kind], "t", 0, vec!["e".into()]);
            t.severity = sev;
            let p = select_response(&t, &ctx(&c, None, human), &SafetyGate::default());
            if rev < 0.3 && crit > 0.7 {
                prop_assert!(matches!(p.action, ResponseAction::Terminate | ResponseAction::Escalate));
            }
        }

        #[test]
        fn fee_schedule_non_decreasing(base in 0u64..1_000_000, n in 1u32..60) {
            let p = StabilityPolicy { base_fee: base, ..Default::default() };
            prop_assert!(p.fee(n) <= p.fee(n + 1));
        }

        #[test]
        fn redelegations_bounded_by_cooldown(cooldown in 1u64..30, horizon in 1u64..400) {
            let p = StabilityPolicy { rebid_cooldown: cooldown, base_fee: 1, max_redelegations: None };
            let mut hist = Vec::new();
            for now in 0..horizon {
                if let StabilityDecision::Proceed { .. } = apply_stability(&p, &hist, now) {
                    hist.push(now);
                }
            }
            prop_assert!(hist.len() as u64 <= horizon.div_ceil(cooldown));
            prop_assert!(hist.windows(2).all(|w| w[1] - w[0] >= cooldown));
        }
    }
}
