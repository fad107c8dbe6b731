//! RFQ market: broadcast, stake-backed bids, Pareto filtering and
//! trust-gated scalarized selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::bank::{Account, Bank, LedgerReason};
use crate::canon::{CanonWriter, Canonical};
use crate::crypto::Signature;
use crate::decomposition::TaskSpecification;
use crate::identity::{AgentId, IdentityError, KeyRegistry};
use crate::verification::{ModeProfile, VerificationMode};
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarketError {
    #[error("unknown rfq {0}")]
    NotFound(String),
    #[error("invalid preference weights: {0}")]
    InvalidWeights(String),
    #[error("rfq {0} is not accepting this operation in its current state")]
    InvalidState(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub cost: f64,
    pub latency: f64,
    pub risk: f64,
    pub privacy: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { cost: 0.4, latency: 0.2, risk: 0.3, privacy: 0.1 }
    }
}

impl Weights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.cost, self.latency, self.risk, self.privacy]
    }

    /// Rescale to sum 1; rejects negative or all-zero weights.
    pub fn normalized(&self) -> Result<Weights, MarketError> {
        let a = self.as_array();
        if a.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MarketError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let sum: f64 = a.iter().sum();
        if sum <= 0.0 {
            return Err(MarketError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(Weights { cost: self.cost / sum, latency: self.latency / sum, risk: self.risk / sum, privacy: self.privacy / sum })
    }
}

impl FromStr for Weights {
    type Err = MarketError;
    /// `cost=0.5,latency=0.3,risk=0.2`; unnamed objectives default to 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = Weights { cost: 0.0, latency: 0.0, risk: 0.0, privacy: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| MarketError::InvalidWeights(part.to_string()))?;
            let v: f64 = v.trim().parse().map_err(|_| MarketError::InvalidWeights(part.to_string()))?;
            match k.trim() {
                "cost" => w.cost = v,
                "latency" => w.latency = v,
                "risk" => w.risk = v,
                "privacy" => w.privacy = v,
                other => return Err(MarketError::InvalidWeights(format!("unknown objective {other}"))),
            }
        }
        w.normalized()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRFQ {
    pub rfq_id: String,
    pub delegator: AgentId,
    pub spec: TaskSpecification,
    pub broadcast_tick: Tick,
    pub deadline_for_bids: Tick,
    pub min_stake: Micros,
    pub preference_weights: Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyGuarantee {
    #[default]
    None,
    #[serde(alias = "tee_enclave_sgx")]
    TeeEnclave,
    CryptoProof,
}

impl PrivacyGuarantee {
    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyGuarantee::None => "none",
            PrivacyGuarantee::TeeEnclave => "tee_enclave",
            PrivacyGuarantee::CryptoProof => "crypto_proof",
        }
    }

    /// Exposure of task context under this guarantee, in [0,1].
    pub fn penalty(self) -> f64 {
        match self {
            PrivacyGuarantee::None => 1.0,
            PrivacyGuarantee::TeeEnclave => 0.5,
            PrivacyGuarantee::CryptoProof => 0.0,
        }
    }
}

/// Parses `5.00 USDC`, `0.5`, or a bare integer of micro-units.
pub fn parse_amount(s: &str) -> Option<Micros> {
    let num = s.split_whitespace().next()?;
    if !num.contains('.') && s.trim() == num {
        return num.parse().ok();
    }
    let (whole, frac) = num.split_once('.').unwrap_or((num, ""));
    if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: Micros = if whole.is_empty() { 0 } else { whole.parse().ok()? };
    let frac: Micros = format!("{frac:0<6}").parse().ok()?;
    whole.checked_mul(1_000_000)?.checked_add(frac)
}

/// Parses `300s` or a bare integer number of ticks (1 tick = 1 s).
pub fn parse_duration(s: &str) -> Option<Tick> {
    s.trim().strip_suffix('s').unwrap_or(s.trim()).trim().parse().ok()
}

fn de_amount<'de, D: Deserializer<'de>>(d: D) -> Result<Micros, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(Micros),
        S(String),
    }
    match Raw::deserialize(d)? {
        Raw::N(n) => Ok(n),
        Raw::S(s) => parse_amount(&s).ok_or_else(|| serde::de::Error::custom(format!("bad amount {s:?}"))),
    }
}

fn de_duration<'de, D: Deserializer<'de>>(d: D) -> Result<Tick, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(Tick),
        S(String),
    }
    match Raw::deserialize(d)? {
        Raw::N(n) => Ok(n),
        Raw::S(s) => parse_duration(&s).ok_or_else(|| serde::de::Error::custom(format!("bad duration {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub agent_id: AgentId,
    #[serde(deserialize_with = "de_amount")]
    pub estimated_cost: Micros,
    #[serde(deserialize_with = "de_duration")]
    pub estimated_duration: Tick,
    pub privacy_guarantee: PrivacyGuarantee,
    #[serde(deserialize_with = "de_amount")]
    pub reputation_bond: Micros,
    pub expiry: Tick,
    #[serde(default)]
    pub signature: Signature,
}

struct BidBody<'a>(&'a str, &'a Bid);

impl Canonical for BidBody<'_> {
    fn encode(&self, w: &mut CanonWriter) {
        let b = self.1;
        w.str("bid")
            .str(self.0)
            .nested(&b.agent_id)
            .u64(b.estimated_cost)
            .u64(b.estimated_duration)
            .str(b.privacy_guarantee.as_str())
            .u64(b.reputation_bond)
            .u64(b.expiry);
    }
}

impl Bid {
    /// Signs the bid for a specific RFQ so it cannot be replayed elsewhere.
    pub fn sign(mut self, keys: &KeyRegistry, rfq_id: &str) -> Result<Self, IdentityError> {
        self.signature = keys.sign_value(&self.agent_id, &BidBody(rfq_id, &self))?;
        Ok(self)
    }

    pub fn verify(&self, keys: &KeyRegistry, rfq_id: &str) -> bool {
        keys.verify_value(&self.agent_id, &BidBody(rfq_id, self), &self.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    WindowClosed,
    StakeShort,
    BadSignature,
    InsufficientFunds,
    Expired,
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum BidOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub cost: f64,
    pub latency: f64,
    pub risk: f64,
    pub privacy_penalty: f64,
}

impl ObjectiveVector {
    pub fn of(bid: &Bid, reputation: f64, contextuality: f64) -> Self {
        Self {
            cost: bid.estimated_cost as f64,
            latency: bid.estimated_duration as f64,
            risk: (1.0 - reputation).clamp(0.0, 1.0),
            privacy_penalty: bid.privacy_guarantee.penalty() * contextuality.clamp(0.0, 1.0),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cost, self.latency, self.risk, self.privacy_penalty]
    }

    /// `self` is no worse everywhere and strictly better somewhere.
    pub fn dominates(&self, other: &ObjectiveVector) -> bool {
        let (a, b) = (self.as_array(), other.as_array());
        a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
    }
}

/// Indices of non-dominated vectors, ascending.
///
/// Points are visited in lexicographic order, so a point can only be
/// dominated by one visited earlier, and only front members need checking.
pub fn pareto_indices(vs: &[ObjectiveVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vs.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (vs[i].as_array(), vs[j].as_array());
        a.iter().zip(&b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| vs[f].dominates(&vs[i])) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBid {
    pub bid: Bid,
    pub reputation: f64,
    pub objectives: ObjectiveVector,
}

/// Non-dominated bids ordered by agent id.
pub fn pareto_filter(bids: &[ScoredBid]) -> Vec<ScoredBid> {
    let vs: Vec<ObjectiveVector> = bids.iter().map(|b| b.objectives).collect();
    let mut out: Vec<ScoredBid> = pareto_indices(&vs).into_iter().map(|i| bids[i].clone()).collect();
    out.sort_by(|a, b| a.bid.agent_id.cmp(&b.bid.agent_id));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub winner: Option<ScoredBid>,
    /// Scalarized score per survivor of the trust gate.
    pub scores: Vec<(AgentId, f64)>,
    pub excluded: Vec<AgentId>,
}

const TIE_EPS: f64 = 1e-9;

/// Trust gate, then minimise the weighted sum of max-normalised objectives.
/// Ties go to the higher reputation, then the smaller agent id.
pub fn select(candidates: &[ScoredBid], weights: &Weights, threshold: f64) -> Selection {
    let (survivors, excluded): (Vec<&ScoredBid>, Vec<&ScoredBid>) =
        candidates.iter().partition(|b| b.reputation >= threshold);
    let mut max = [0.0f64; 4];
    for b in &survivors {
        for (m, x) in max.iter_mut().zip(b.objectives.as_array()) {
            *m = m.max(x);
        }
    }
    let w = weights.as_array();
    let scores: Vec<(AgentId, f64)> = survivors
        .iter()
        .map(|b| {
            let s = b
                .objectives
                .as_array()
                .iter()
                .zip(&max)
                .zip(&w)
                .map(|((x, m), wi)| if *m > 0.0 { wi * x / m } else { 0.0 })
                .sum();
            (b.bid.agent_id.clone(), s)
        })
        .collect();
    let mut best: Option<usize> = None;
    for i in 0..survivors.len() {
        best = Some(match best {
            None => i,
            Some(j) => {
                let (si, sj) = (scores[i].1, scores[j].1);
                let better = if (si - sj).abs() <= TIE_EPS {
                    let (ri, rj) = (survivors[i].reputation, survivors[j].reputation);
                    ri > rj || (ri == rj && survivors[i].bid.agent_id < survivors[j].bid.agent_id)
                } else {
                    si < sj
                };
                if better {
                    i
                } else {
                    j
                }
            }
        });
    }
    Selection {
        winner: best.map(|i| survivors[i].clone()),
        scores,
        excluded: excluded.iter().map(|b| b.bid.agent_id.clone()).collect(),
    }
}

/// Per-step protocol costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadCosts {
    pub rfq_fee: Micros,
    pub bid_eval: Micros,
    pub contract: Micros,
}

impl Default for OverheadCosts {
    fn default() -> Self {
        Self { rfq_fee: 10_000, bid_eval: 2_000, contract: 20_000 }
    }
}

/// RFQ fee, per-bid evaluation, contract creation and verification-mode cost.
pub fn delegation_overhead(costs: &OverheadCosts, bids: usize, contract: bool, mode: Option<VerificationMode>) -> Micros {
    costs.rfq_fee
        + costs.bid_eval * bids as Micros
        + if contract { costs.contract } else { 0 }
        + mode.map_or(0, |m| ModeProfile::of(m).cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfqStatus {
    Open,
    Closed,
    Awarded,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfqEntry {
    pub rfq: TaskRFQ,
    pub status: RfqStatus,
    pub bids: Vec<Bid>,
    pub requoted: BTreeSet<AgentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfqParams {
    pub window: Tick,
    pub min_stake: Micros,
    pub weights: Weights,
}

/// Award result: the winning bid keeps its bond in the pool; all others are refunded.
#[derive(Debug, Clone, PartialEq)]
pub struct Award {
    pub selection: Selection,
    pub refunded: Vec<(AgentId, Micros)>,
}

/// Book of live RFQs. Mutated only by its single owner.
#[derive(Debug, Clone, Default)]
pub struct MarketBook {
    rfqs: BTreeMap<String, RfqEntry>,
    next_id: u64,
}

impl MarketBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn broadcast_rfq(
        &mut self,
        delegator: &AgentId,
        spec: TaskSpecification,
        now: Tick,
        params: &RfqParams,
    ) -> Result<TaskRFQ, MarketError> {
        let weights = params.weights.normalized()?;
        self.next_id += 1;
        let rfq = TaskRFQ {
            rfq_id: format!("rfq-{}", self.next_id),
            delegator: delegator.clone(),
            spec,
            broadcast_tick: now,
            deadline_for_bids: now + params.window.max(1),
            min_stake: params.min_stake,
            preference_weights: weights,
        };
        self.rfqs.insert(
            rfq.rfq_id.clone(),
            RfqEntry { rfq: rfq.clone(), status: RfqStatus::Open, bids: Vec::new(), requoted: BTreeSet::new() },
        );
        Ok(rfq)
    }

    pub fn get(&self, rfq_id: &str) -> Option<&RfqEntry> {
        self.rfqs.get(rfq_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RfqEntry> {
        self.rfqs.values()
    }

    fn entry_mut(&mut self, rfq_id: &str) -> Result<&mut RfqEntry, MarketError> {
        self.rfqs.get_mut(rfq_id).ok_or_else(|| MarketError::NotFound(rfq_id.to_string()))
    }

    /// Admission checks in order: window, signature, expiry, stake, duplicate, funds.
    /// An accepted bid's bond moves from the bidder into the bond pool.
    pub fn submit_bid(
        &mut self,
        bank: &mut Bank,
        keys: &KeyRegistry,
        rfq_id: &str,
        bid: Bid,
        now: Tick,
    ) -> Result<BidOutcome, MarketError> {
        let e = self.entry_mut(rfq_id)?;
        use RejectReason::*;
        let reject = |r| Ok(BidOutcome::Rejected(r));
        if e.status != RfqStatus::Open || now >= e.rfq.deadline_for_bids {
            return reject(WindowClosed);
        }
        if !bid.verify(keys, rfq_id) {
            return reject(BadSignature);
        }
        if bid.expiry <= now {
            return reject(Expired);
        }
        if bid.reputation_bond < e.rfq.min_stake {
            return reject(StakeShort);
        }
        if e.bids.iter().any(|b| b.agent_id == bid.agent_id) {
            return reject(Duplicate);
        }
        let from = Account::Agent(bid.agent_id.clone());
        if bank.transfer(now, &from, &Account::BondPool, bid.reputation_bond, LedgerReason::Bond).is_err() {
            return reject(InsufficientFunds);
        }
        e.bids.push(bid);
        Ok(BidOutcome::Accepted)
    }

    pub fn close(&mut self, rfq_id: &str) -> Result<&RfqEntry, MarketError> {
        let e = self.entry_mut(rfq_id)?;
        if e.status == RfqStatus::Open {
            e.status = RfqStatus::Closed;
        }
        Ok(e)
    }

    /// One revision per bidder after the window closes; the bond stays as posted.
    pub fn requote(&mut self, keys: &KeyRegistry, rfq_id: &str, revised: Bid, now: Tick) -> Result<BidOutcome, MarketError> {
        let e = self.entry_mut(rfq_id)?;
        if e.status != RfqStatus::Closed {
            return Err(MarketError::InvalidState(rfq_id.to_string()));
        }
        let Some(pos) = e.bids.iter().position(|b| b.agent_id == revised.agent_id) else {
            return Ok(BidOutcome::Rejected(RejectReason::WindowClosed));
        };
        if !e.requoted.insert(revised.agent_id.clone()) {
            return Ok(BidOutcome::Rejected(RejectReason::Duplicate));
        }
        if revised.reputation_bond != e.bids[pos].reputation_bond {
            return Ok(BidOutcome::Rejected(RejectReason::StakeShort));
        }
        if !revised.verify(keys, rfq_id) {
            return Ok(BidOutcome::Rejected(RejectReason::BadSignature));
        }
        if revised.expiry <= now {
            return Ok(BidOutcome::Rejected(RejectReason::Expired));
        }
        e.bids[pos] = revised;
        Ok(BidOutcome::Accepted)
    }

    /// Abandons an RFQ without award, refunding every posted bond.
    pub fn withdraw(&mut self, bank: &mut Bank, rfq_id: &str, now: Tick) -> Result<Vec<(AgentId, Micros)>, MarketError> {
        let e = self.entry_mut(rfq_id)?;
        if !matches!(e.status, RfqStatus::Open | RfqStatus::Closed) {
            return Err(MarketError::InvalidState(rfq_id.to_string()));
        }
        let mut refunded = Vec::new();
        for b in &e.bids {
            let to = Account::Agent(b.agent_id.clone());
            bank.transfer(now, &Account::BondPool, &to, b.reputation_bond, LedgerReason::Refund)
                .expect("bond pool holds every posted bond");
            refunded.push((b.agent_id.clone(), b.reputation_bond));
        }
        e.status = RfqStatus::NoMatch;
        Ok(refunded)
    }

    /// Pareto filter, trust gate and selection over the closed book; refunds
    /// every bond except the winner's.
    pub fn award(
        &mut self,
        bank: &mut Bank,
        rfq_id: &str,
        reputation: impl Fn(&AgentId) -> f64,
        threshold: f64,
        now: Tick,
    ) -> Result<Award, MarketError> {
        let e = self.entry_mut(rfq_id)?;
        if e.status == RfqStatus::Open {
            e.status = RfqStatus::Closed;
        }
        if e.status != RfqStatus::Closed {
            return Err(MarketError::InvalidState(rfq_id.to_string()));
        }
        let ctx = e.rfq.spec.characteristics.contextuality;
        let scored: Vec<ScoredBid> = e
            .bids
            .iter()
            .map(|b| {
                let r = reputation(&b.agent_id);
                ScoredBid { bid: b.clone(), reputation: r, objectives: ObjectiveVector::of(b, r, ctx) }
            })
            .collect();
        let trusted: Vec<ScoredBid> = scored.iter().filter(|b| b.reputation >= threshold).cloned().collect();
        let front = pareto_filter(&trusted);
        let mut selection = select(&front, &e.rfq.preference_weights, threshold);
        selection.excluded = scored.iter().filter(|b| b.reputation < threshold).map(|b| b.bid.agent_id.clone()).collect();
        let winner = selection.winner.as_ref().map(|w| w.bid.agent_id.clone());
        let mut refunded = Vec::new();
        for b in &e.bids {
            if Some(&b.agent_id) != winner.as_ref() {
                let to = Account::Agent(b.agent_id.clone());
                bank.transfer(now, &Account::BondPool, &to, b.reputation_bond, LedgerReason::Refund)
                    .expect("bond pool holds every posted bond");
                refunded.push((b.agent_id.clone(), b.reputation_bond));
            }
        }
        e.status = if winner.is_some() { RfqStatus::Awarded } else { RfqStatus::NoMatch };
        Ok(Award { selection, refunded })
    }
}
