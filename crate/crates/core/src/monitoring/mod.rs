//! Progress event streams, negotiated granularity, and transitive
//! attestation along delegation chains.

mod attestation;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canon::{CanonWriter, Canonical};
use crate::crypto::{Digest, Signature};
use crate::identity::{AgentId, IdentityError, KeyRegistry};
use crate::{Micros, Tick};

pub use attestation::{
    attest, status_update_id, verify_attestation_chain, AttestationReport, AttestationSummary, ChainContext, ChainFailure,
    ChainStatus, SubReport,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonitoringError {
    #[error("unknown task {0}")]
    NotFound(String),
    #[error("event signature does not verify for {0}")]
    BadSignature(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "L0_IS_OPERATIONAL")]
    L0,
    #[serde(rename = "L1_HIGH_LEVEL_PLAN_UPDATES")]
    L1,
    #[serde(rename = "L2_COT_TRACE")]
    L2,
    #[serde(rename = "L3_FULL_STATE")]
    L3,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::L0, Granularity::L1, Granularity::L2, Granularity::L3];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::L0 => "L0_IS_OPERATIONAL",
            Granularity::L1 => "L1_HIGH_LEVEL_PLAN_UPDATES",
            Granularity::L2 => "L2_COT_TRACE",
            Granularity::L3 => "L3_FULL_STATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Outcome,
    Process,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transparency {
    BlackBox,
    WhiteBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privacy {
    Full,
    Cryptographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Direct,
    Transitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringPlan {
    pub target: Target,
    pub observability: Observability,
    pub transparency: Transparency,
    pub privacy: Privacy,
    pub topology: Topology,
    pub cadence: Tick,
    pub granularity: Granularity,
}

impl MonitoringPlan {
    pub fn new(cadence: Tick, granularity: Granularity) -> Self {
        Self {
            target: if granularity >= Granularity::L2 { Target::Process } else { Target::Outcome },
            observability: Observability::Direct,
            transparency: if granularity >= Granularity::L2 { Transparency::WhiteBox } else { Transparency::BlackBox },
            privacy: Privacy::Full,
            topology: Topology::Direct,
            cadence: cadence.max(1),
            granularity,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cadence < 1 {
            return Err("cadence must be at least 1 tick".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    TaskStarted,
    CheckpointReached,
    ResourceWarning,
    TaskCompleted,
    TaskBlocked,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TaskStarted => "TASK_STARTED",
            EventKind::CheckpointReached => "CHECKPOINT_REACHED",
            EventKind::ResourceWarning => "RESOURCE_WARNING",
            EventKind::TaskCompleted => "TASK_COMPLETED",
            EventKind::TaskBlocked => "TASK_BLOCKED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EventPayload {
    pub progress: f64,
    pub spend: Micros,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact_digest: Option<Digest>,
    /// Set on events reconstructed from environment observation.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub inferred: bool,
}

impl Canonical for EventPayload {
    fn encode(&self, w: &mut CanonWriter) {
        w.f64(self.progress).u64(self.spend).str(self.detail.as_deref().unwrap_or(""));
        match &self.artifact_digest {
            Some(d) => w.bytes(d.as_bytes()),
            None => w.bytes(&[]),
        };
        w.bool(self.inferred);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub tick: Tick,
    pub task_id: String,
    pub emitter: AgentId,
    pub kind: EventKind,
    pub level: Granularity,
    pub payload: EventPayload,
    pub signature: Signature,
}

struct EventBody<'a>(&'a ProgressEvent);

impl Canonical for EventBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        let e = self.0;
        w.u64(e.tick)
            .str(&e.task_id)
            .nested(&e.emitter)
            .str(e.kind.as_str())
            .str(e.level.as_str())
            .nested(&e.payload);
    }
}

impl ProgressEvent {
    pub fn signed(
        keys: &KeyRegistry,
        tick: Tick,
        task_id: &str,
        emitter: &AgentId,
        kind: EventKind,
        level: Granularity,
        payload: EventPayload,
    ) -> Result<Self, IdentityError> {
        let mut e = ProgressEvent {
            tick,
            task_id: task_id.to_string(),
            emitter: emitter.clone(),
            kind,
            level,
            payload,
            signature: Digest::default(),
        };
        e.signature = keys.sign_value(emitter, &EventBody(&e))?;
        Ok(e)
    }

    pub fn verify(&self, keys: &KeyRegistry) -> bool {
        keys.verify_value(&self.emitter, &EventBody(self), &self.signature)
    }

    /// Weight given to this event downstream; inferred events count less.
    pub fn confidence(&self, inferred_weight: f64) -> f64 {
        if self.payload.inferred {
            inferred_weight
        } else {
            1.0
        }
    }
}

/// Default confidence weight applied to indirectly observed progress.
pub const INFERRED_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registered,
    Started,
    InProgress,
    Blocked,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub task_id: String,
    pub phase: Phase,
    pub last_event_tick: Option<Tick>,
    pub progress: f64,
}

/// Append-only per-task event streams.
#[derive(Debug, Clone, Default)]
pub struct EventStore {
    streams: BTreeMap<String, Vec<ProgressEvent>>,
}

impl EventStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, task_id: &str) {
        self.streams.entry(task_id.to_string()).or_default();
    }

    pub fn append(&mut self, keys: &KeyRegistry, event: ProgressEvent) -> Result<(), MonitoringError> {
        if !event.verify(keys) {
            return Err(MonitoringError::BadSignature(event.task_id));
        }
        self.streams.entry(event.task_id.clone()).or_default().push(event);
        Ok(())
    }

    pub fn events(&self, task_id: &str) -> Result<&[ProgressEvent], MonitoringError> {
        self.streams.get(task_id).map(Vec::as_slice).ok_or_else(|| MonitoringError::NotFound(task_id.to_string()))
    }

    pub fn poll_status(&self, task_id: &str) -> Result<StatusSnapshot, MonitoringError> {
        let events = self.events(task_id)?;
        let mut phase = Phase::Registered;
        let mut progress: f64 = 0.0;
        for e in events {
            phase = match e.kind {
                EventKind::TaskStarted => Phase::Started,
                EventKind::CheckpointReached | EventKind::ResourceWarning => Phase::InProgress,
                EventKind::TaskBlocked => Phase::Blocked,
                EventKind::TaskCompleted => Phase::Completed,
            };
            progress = progress.max(e.payload.progress);
            if e.kind == EventKind::TaskCompleted {
                progress = 1.0;
            }
        }
        Ok(StatusSnapshot {
            task_id: task_id.to_string(),
            phase,
            last_event_tick: events.last().map(|e| e.tick),
            progress: progress.clamp(0.0, 1.0),
        })
    }
}

/// Events whose payload band does not exceed the negotiated level, in order.
pub fn filter_stream(events: &[ProgressEvent], level: Granularity) -> Vec<ProgressEvent> {
    events.iter().filter(|e| e.level <= level).cloned().collect()
}

/// Contents of the shared artifact store at one instant, keyed by task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSnapshot {
    pub tick: Tick,
    pub artifacts: BTreeMap<String, BTreeSet<Digest>>,
}

impl EnvironmentSnapshot {
    pub fn record(&mut self, task_id: &str, digest: Digest) {
        self.artifacts.entry(task_id.to_string()).or_default().insert(digest);
    }
}

/// One inferred checkpoint per digest present in `after` but not in `before`.
pub fn observe_indirect(
    keys: &KeyRegistry,
    observer: &AgentId,
    before: &EnvironmentSnapshot,
    after: &EnvironmentSnapshot,
) -> Result<Vec<ProgressEvent>, IdentityError> {
    let mut out = Vec::new();
    for (task_id, digests) in &after.artifacts {
        let prior = before.artifacts.get(task_id);
        for d in digests {
            if prior.is_some_and(|p| p.contains(d)) {
                continue;
            }
            let payload = EventPayload { artifact_digest: Some(*d), inferred: true, ..Default::default() };
            out.push(ProgressEvent::signed(
                keys,
                after.tick,
                task_id,
                observer,
                EventKind::CheckpointReached,
                Granularity::L1,
                payload,
            )?);
        }
    }
    Ok(out)
}

/// Tick at which a silent delegatee is first flagged: the gap must exceed twice the cadence.
pub fn unresponsive_at(last_event_tick: Tick, cadence: Tick) -> Tick {
    last_event_tick + 2 * cadence + 1
}

/// Pairs of consecutive event ticks whose gap exceeds `2 * cadence`.
pub fn cadence_violations(events: &[ProgressEvent], cadence: Tick) -> Vec<(Tick, Tick)> {
    events
        .windows(2)
        .filter(|w| w[1].tick - w[0].tick > 2 * cadence)
        .map(|w| (w[0].tick, w[1].tick))
        .collect()
}
