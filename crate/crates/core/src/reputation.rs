//! Append-only reputation ledger with damped multi-component scores,
//! retroactive corrections, graduated authority and circuit breakers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::identity::{AgentId, KeyRegistry, VerifiableCredential};
use crate::monitoring::Granularity;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReputationError {
    #[error("credential does not verify")]
    InvalidCredential,
    #[error("no ledger entry #{0}")]
    NotFound(u64),
    #[error("invalid outcome metadata: {0}")]
    InvalidMetadata(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMetadata {
    pub success: bool,
    pub quality: f64,
    pub resources_vs_budget: f64,
    pub deadline_met: bool,
    pub constraints_met: bool,
    pub transparency_obs: f64,
    pub safety_obs: f64,
    pub tick: Tick,
    /// Complexity of the task; harder tasks move the score further.
    #[serde(default)]
    pub complexity: f64,
}

impl OutcomeMetadata {
    fn validate(&self) -> Result<(), ReputationError> {
        for (n, v) in [
            ("quality", self.quality),
            ("transparency_obs", self.transparency_obs),
            ("safety_obs", self.safety_obs),
            ("complexity", self.complexity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ReputationError::InvalidMetadata(format!("{n} = {v}")));
            }
        }
        if !(self.resources_vs_budget >= 0.0) {
            return Err(ReputationError::InvalidMetadata("resources_vs_budget".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    /// Entry being corrected; may itself be a correction.
    pub corrects: u64,
    pub success: bool,
    pub quality: f64,
    pub tick: Tick,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntryBody {
    Outcome { credential: VerifiableCredential, metadata: OutcomeMetadata },
    Correction(Correction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationEntry {
    pub seq: u64,
    pub agent: AgentId,
    pub body: EntryBody,
}

impl ReputationEntry {
    pub fn tick(&self) -> Tick {
        match &self.body {
            EntryBody::Outcome { metadata, .. } => metadata.tick,
            EntryBody::Correction(c) => c.tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReputationConfig {
    pub damping: f64,
    pub prior: f64,
    pub complexity_weighting: bool,
    pub completion_weight: f64,
    pub transparency_weight: f64,
    pub safety_weight: f64,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        Self {
            damping: 0.8,
            prior: 0.5,
            complexity_weighting: true,
            completion_weight: 0.6,
            transparency_weight: 0.2,
            safety_weight: 0.2,
        }
    }
}

impl ReputationConfig {
    fn step(&self, complexity: f64) -> f64 {
        let w = if self.complexity_weighting { 0.5 + 0.5 * complexity } else { 1.0 };
        (1.0 - self.damping) * w
    }

    fn composite(&self, c: f64, t: f64, s: f64) -> f64 {
        let total = self.completion_weight + self.transparency_weight + self.safety_weight;
        ((self.completion_weight * c + self.transparency_weight * t + self.safety_weight * s) / total).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReputationScore {
    pub completion: f64,
    pub transparency: f64,
    pub safety: f64,
    pub composite: f64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReputationLedger {
    entries: Vec<ReputationEntry>,
}

/// One outcome as seen after applying the corrections visible at some time.
#[derive(Debug, Clone, Copy)]
struct Effective {
    tick: Tick,
    success: bool,
    transparency: f64,
    safety: f64,
    complexity: f64,
}

impl ReputationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<ReputationEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReputationEntry] {
        &self.entries
    }

    pub fn get(&self, seq: u64) -> Option<&ReputationEntry> {
        self.entries.get(seq as usize)
    }

    /// Appends an outcome credited to the credential subject; returns its seq.
    pub fn record(
        &mut self,
        keys: &KeyRegistry,
        credential: VerifiableCredential,
        metadata: OutcomeMetadata,
    ) -> Result<u64, ReputationError> {
        if !credential.verify(keys) {
            return Err(ReputationError::InvalidCredential);
        }
        metadata.validate()?;
        let seq = self.entries.len() as u64;
        let agent = credential.subject.clone();
        self.entries.push(ReputationEntry { seq, agent, body: EntryBody::Outcome { credential, metadata } });
        Ok(seq)
    }

    /// Appends a correction; the original entry is left untouched.
    pub fn retroactive_update(
        &mut self,
        corrects: u64,
        success: bool,
        quality: f64,
        tick: Tick,
        reason: &str,
    ) -> Result<u64, ReputationError> {
        let agent = self.get(corrects).ok_or(ReputationError::NotFound(corrects))?.agent.clone();
        let seq = self.entries.len() as u64;
        let body = EntryBody::Correction(Correction {
            corrects,
            success,
            quality: quality.clamp(0.0, 1.0),
            tick,
            reason: reason.to_string(),
        });
        self.entries.push(ReputationEntry { seq, agent, body });
        Ok(seq)
    }

    /// Seq of the outcome a (possibly nested) correction ultimately targets.
    fn root_of(&self, mut seq: u64) -> u64 {
        while let Some(ReputationEntry { body: EntryBody::Correction(c), .. }) = self.get(seq) {
            seq = c.corrects;
        }
        seq
    }

    fn effective(&self, agent: &AgentId, now: Tick) -> Vec<Effective> {
        let mut latest: BTreeMap<u64, bool> = BTreeMap::new();
        for e in &self.entries {
            if let EntryBody::Correction(c) = &e.body {
                if &e.agent == agent && c.tick <= now {
                    latest.insert(self.root_of(c.corrects), c.success);
                }
            }
        }
        self.entries
            .iter()
            .filter(|e| &e.agent == agent)
            .filter_map(|e| match &e.body {
                EntryBody::Outcome { metadata: m, .. } if m.tick <= now => Some(Effective {
                    tick: m.tick,
                    success: latest.get(&e.seq).copied().unwrap_or(m.success),
                    transparency: m.transparency_obs,
                    safety: m.safety_obs,
                    complexity: m.complexity,
                }),
                _ => None,
            })
            .collect()
    }

    /// Composite score after each outcome, in ledger order, as seen at `now`.
    pub fn trajectory(&self, agent: &AgentId, now: Tick, cfg: &ReputationConfig) -> Vec<(Tick, f64)> {
        let mut s = [cfg.prior; 3];
        self.effective(agent, now)
            .into_iter()
            .map(|o| {
                fold_step(&mut s, &o, cfg);
                (o.tick, cfg.composite(s[0], s[1], s[2]))
            })
            .collect()
    }

    pub fn score(&self, agent: &AgentId, now: Tick, cfg: &ReputationConfig) -> ReputationScore {
        let mut s = [cfg.prior; 3];
        let outcomes = self.effective(agent, now);
        for o in &outcomes {
            fold_step(&mut s, o, cfg);
        }
        ReputationScore {
            completion: s[0],
            transparency: s[1],
            safety: s[2],
            composite: cfg.composite(s[0], s[1], s[2]),
            sample_count: outcomes.len() as u64,
        }
    }
}

fn fold_step(s: &mut [f64; 3], o: &Effective, cfg: &ReputationConfig) {
    let a = cfg.step(o.complexity);
    let obs = [if o.success { 1.0 } else { 0.0 }, o.transparency, o.safety];
    for (si, x) in s.iter_mut().zip(obs) {
        *si = (*si + a * (x - *si)).clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Autonomy {
    Atomic,
    Bounded,
    OpenEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthorityGrant {
    pub autonomy: Autonomy,
    pub spend_cap_multiplier: f64,
    pub monitoring_floor: Granularity,
    pub human_approval_required: bool,
}

impl AuthorityGrant {
    /// True when `self` grants no more than `other` on every axis.
    pub fn no_more_permissive_than(&self, other: &AuthorityGrant) -> bool {
        self.autonomy <= other.autonomy
            && self.spend_cap_multiplier <= other.spend_cap_multiplier
            && self.monitoring_floor >= other.monitoring_floor
            && self.human_approval_required >= other.human_approval_required
    }
}

const fn g(autonomy: Autonomy, spend_cap_multiplier: f64, monitoring_floor: Granularity) -> AuthorityGrant {
    AuthorityGrant { autonomy, spend_cap_multiplier, monitoring_floor, human_approval_required: false }
}

/// Step table keyed on (score band, criticality band).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthorityTable {
    /// Upper bounds (exclusive) of all but the top score band.
    pub score_bands: Vec<f64>,
    /// Upper bounds (exclusive) of all but the top criticality band.
    pub criticality_bands: Vec<f64>,
    /// `grants[score_band][criticality_band]`.
    pub grants: Vec<Vec<AuthorityGrant>>,
    pub human_approval_at: f64,
}

impl Default for AuthorityTable {
    fn default() -> Self {
        use Autonomy::*;
        use Granularity::*;
        Self {
            score_bands: vec![0.4, 0.7, 0.9],
            criticality_bands: vec![0.3, 0.7],
            grants: vec![
                vec![g(Atomic, 0.1, L2), g(Atomic, 0.1, L2), g(Atomic, 0.1, L2)],
                vec![g(Bounded, 0.5, L1), g(Bounded, 0.3, L2), g(Atomic, 0.2, L2)],
                vec![g(Bounded, 0.8, L1), g(Bounded, 0.6, L1), g(Bounded, 0.4, L2)],
                vec![g(OpenEnded, 1.0, L0), g(OpenEnded, 0.8, L1), g(Bounded, 0.6, L1)],
            ],
            human_approval_at: 0.95,
        }
    }
}

fn band(bounds: &[f64], x: f64) -> usize {
    bounds.iter().position(|&b| x < b).unwrap_or(bounds.len())
}

pub fn graduated_authority(table: &AuthorityTable, score: f64, criticality: f64) -> AuthorityGrant {
    let row = &table.grants[band(&table.score_bands, score).min(table.grants.len() - 1)];
    let mut grant = row[band(&table.criticality_bands, criticality).min(row.len() - 1)];
    grant.human_approval_required = criticality >= table.human_approval_at;
    grant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreakerConfig {
    pub drop: f64,
    pub window: Tick,
}

impl Default for BreakerConfig {
    fn default() -> Self {
        Self { drop: 0.25, window: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakerTrip {
    pub from_tick: Tick,
    pub to_tick: Tick,
    pub drop: f64,
}

/// Trips when the composite falls by at least `drop` between two points no
/// more than `window` ticks apart. The prior counts as a point at the first entry's tick.
pub fn circuit_breaker(history: &[(Tick, f64)], prior: f64, cfg: &BreakerConfig) -> Option<BreakerTrip> {
    let first = history.first()?.0;
    let points: Vec<(Tick, f64)> = std::iter::once((first, prior)).chain(history.iter().copied()).collect();
    for j in 1..points.len() {
        if let Some(t) = trip_ending_at(&points, j, cfg) {
            return Some(t);
        }
    }
    None
}

/// Same test restricted to drops ending at the most recent point.
pub fn breaker_latest(history: &[(Tick, f64)], prior: f64, cfg: &BreakerConfig) -> Option<BreakerTrip> {
    let first = history.first()?.0;
    let points: Vec<(Tick, f64)> = std::iter::once((first, prior)).chain(history.iter().copied()).collect();
    trip_ending_at(&points, points.len() - 1, cfg)
}

fn trip_ending_at(points: &[(Tick, f64)], j: usize, cfg: &BreakerConfig) -> Option<BreakerTrip> {
    let (tj, sj) = points[j];
    points[..j]
        .iter()
        .filter(|(ti, _)| tj - ti <= cfg.window)
        .map(|&(ti, si)| (ti, si - sj))
        .filter(|&(_, d)| d >= cfg.drop - 1e-12)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(ti, d)| BreakerTrip { from_tick: ti, to_tick: tj, drop: d })
}

/// A delegator's private acceptance threshold as a function of criticality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustModel {
    pub owner: Option<AgentId>,
    pub base: f64,
    pub slope: f64,
}

impl Default for TrustModel {
    fn default() -> Self {
        Self { owner: None, base: 0.3, slope: 0.5 }
    }
}

impl TrustModel {
    pub fn threshold(&self, criticality: f64) -> f64 {
        (self.base + self.slope.max(0.0) * criticality.clamp(0.0, 1.0)).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Digest;
    use crate::identity::{Claim, SecretKey};

    struct W {
        keys: KeyRegistry,
        a: AgentId,
        b: AgentId,
    }

    fn w() -> W {
        let mut keys = KeyRegistry::new();
        let (a, b) = (AgentId::derive("a"), AgentId::derive("b"));
        keys.register(a.clone(), SecretKey::derive(2, "a")).unwrap();
        keys.register(b.clone(), SecretKey::derive(2, "b")).unwrap();
        W { keys, a, b }
    }

    fn outcome(w: &W, l: &mut ReputationLedger, success: bool, tick: Tick) -> u64 {
        let claim = Claim { kind: "task".into(), task_id: "t".into(), date: tick, spec_digest: Digest::default(), quality: 1.0 };
        let vc = VerifiableCredential::issue(&w.keys, &w.a, &w.b, claim).unwrap();
        let m = OutcomeMetadata {
            success,
            quality: 1.0,
            resources_vs_budget: 1.0,
            deadline_met: true,
            constraints_met: true,
            transparency_obs: if success { 1.0 } else { 0.0 },
            safety_obs: if success { 1.0 } else { 0.0 },
            tick,
            complexity: 1.0,
        };
        l.record(&w.keys, vc, m).unwrap()
    }

    #[test]
    fn fold_examples() {
        let w = w();
        let cfg = ReputationConfig::default();
        let mut l = ReputationLedger::new();
        assert_eq!(l.score(&w.b, 0, &cfg).composite, 0.5);
        outcome(&w, &mut l, true, 1);
        assert!((l.score(&w.b, 10, &cfg).completion - 0.6).abs() < 1e-12);
        outcome(&w, &mut l, false, 2);
        assert!((l.score(&w.b, 10, &cfg).completion - 0.48).abs() < 1e-12);
        let mut l = ReputationLedger::new();
        for t in 0..100 {
            outcome(&w, &mut l, true, t);
        }
        assert!(l.score(&w.b, 100, &cfg).completion >= 0.99);
    }

    #[test]
    fn bad_credential_rejected() {
        let w = w();
        let mut l = ReputationLedger::new();
        outcome(&w, &mut l, true, 1);
        let EntryBody::Outcome { mut credential, metadata } = l.entries()[0].body.clone() else { unreachable!() };
        credential.claim.quality = 0.5;
        assert_eq!(l.record(&w.keys, credential, metadata), Err(ReputationError::InvalidCredential));
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn corrections_replay_in_place() {
        let w = w();
        let cfg = ReputationConfig::default();
        let mut l = ReputationLedger::new();
        let s = outcome(&w, &mut l, true, 1);
        let mut fresh = ReputationLedger::new();
        outcome(&w, &mut fresh, false, 1);
        let c1 = l.retroactive_update(s, false, 0.0, 5, "post-hoc").unwrap();
        // transparency and safety observations are monitor facts, not corrected
        assert_eq!(l.score(&w.b, 9, &cfg).completion, fresh.score(&w.b, 9, &cfg).completion);
        l.retroactive_update(c1, true, 1.0, 6, "appeal").unwrap();
        assert!((l.score(&w.b, 9, &cfg).completion - 0.6).abs() < 1e-12);
        assert_eq!(l.retroactive_update(99, true, 1.0, 6, "x"), Err(ReputationError::NotFound(99)));
    }

    #[test]
    fn authority_table() {
        let t = AuthorityTable::default();
        let top = graduated_authority(&t, 0.95, 0.1);
        assert_eq!((top.autonomy, top.monitoring_floor), (Autonomy::OpenEnded, Granularity::L0));
        for c in [0.0, 0.5, 0.9] {
            let low = graduated_authority(&t, 0.2, c);
            assert_eq!((low.autonomy, low.spend_cap_multiplier, low.monitoring_floor), (Autonomy::Atomic, 0.1, Granularity::L2));
        }
        assert!(graduated_authority(&t, 0.99, 1.0).human_approval_required);
    }

    #[test]
    fn authority_is_monotone_in_score() {
        let t = AuthorityTable::default();
        for ci in 0..=20 {
            let c = ci as f64 / 20.0;
            for si in 0..20 {
                let (lo, hi) = (si as f64 / 20.0, (si + 1) as f64 / 20.0);
                assert!(graduated_authority(&t, lo, c).no_more_permissive_than(&graduated_authority(&t, hi, c)));
            }
        }
    }

    #[test]
    fn breaker_windows() {
        let cfg = BreakerConfig { drop: 0.25, window: 10 };
        assert!(circuit_breaker(&[(0, 0.8), (5, 0.8), (9, 0.8)], 0.8, &cfg).is_none());
        assert!(circuit_breaker(&[(0, 0.8), (5, 0.65), (9, 0.5)], 0.8, &cfg).is_some());
        assert!(circuit_breaker(&[(0, 0.8), (10, 0.65), (20, 0.5)], 0.8, &cfg).is_none());
    }

    #[test]
    fn trust_threshold_monotone() {
        let m = TrustModel::default();
        assert_eq!(m.threshold(0.0), 0.3);
        assert!(m.threshold(0.2) <= m.threshold(0.8));
    }
}
