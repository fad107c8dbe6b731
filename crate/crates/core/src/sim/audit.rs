//! Post-hoc checks over a run's event log. Each check returns the list of
//! violations it found; an empty list means the property held.

use std::collections::{BTreeMap, BTreeSet};

use super::log::{LogLine, Record};
use crate::bank::{audit_ledger, Account, LedgerEntry, LedgerReason};
use crate::contract::ContractState;
use crate::coordination::{ResponseAction, StabilityPolicy};
use crate::identity::AgentId;
use crate::{Micros, Tick};

/// Every check at once, keyed by name.
pub fn audit_all(log: &[LogLine], stability: &StabilityPolicy) -> BTreeMap<&'static str, Vec<String>> {
    BTreeMap::from([
        ("money", money(log)),
        ("token_reach", token_reach(log)),
        ("safety_gate", safety_gate(log)),
        ("stability", self::stability(log, stability)),
        ("sybil_exposure", sybil_violations(log)),
        ("trigger_before_default", trigger_before_default(log)),
    ])
}

fn transfers(log: &[LogLine]) -> Vec<LedgerEntry> {
    log.iter()
        .filter_map(|l| match &l.record {
            Record::Transfer { from, to, amount, reason } => {
                Some(LedgerEntry { tick: l.tick, from: from.clone(), to: to.clone(), amount: *amount, reason: *reason })
            }
            _ => None,
        })
        .collect()
}

/// Double-entry replay of every transfer: no overdraft at any point, holdings
/// equal minted supply, and nothing left in bonds or escrow once closed out.
pub fn money(log: &[LogLine]) -> Vec<String> {
    let entries = transfers(log);
    let audit = audit_ledger(&entries);
    let mut v = audit.violations;
    let closed = log.iter().any(|l| matches!(l.record, Record::CloseOut { .. }));
    if closed {
        let mut held: BTreeMap<&Account, i128> = BTreeMap::new();
        for e in &entries {
            *held.entry(&e.from).or_default() -= i128::from(e.amount);
            *held.entry(&e.to).or_default() += i128::from(e.amount);
        }
        for (a, b) in held {
            if matches!(a, Account::BondPool | Account::Escrow(_)) && b != 0 {
                v.push(format!("{a} still holds {b} after close-out"));
            }
        }
    }
    v
}

/// Total of each account at the end of every tick that moved money.
pub fn balances_by_tick(log: &[LogLine]) -> Vec<(Tick, BTreeMap<Account, i128>)> {
    let mut out = Vec::new();
    let mut bal: BTreeMap<Account, i128> = BTreeMap::new();
    let mut current = None;
    for e in transfers(log) {
        if let Some(t) = current.filter(|t| *t != e.tick) {
            out.push((t, bal.clone()));
        }
        current = Some(e.tick);
        *bal.entry(e.from.clone()).or_default() -= i128::from(e.amount);
        *bal.entry(e.to.clone()).or_default() += i128::from(e.amount);
    }
    if let Some(t) = current {
        out.push((t, bal));
    }
    out
}

/// No token whose lineage runs through a tripped agent may be allowed after
/// the trip.
pub fn token_reach(log: &[LogLine]) -> Vec<String> {
    let mut tripped: BTreeSet<&AgentId> = BTreeSet::new();
    let mut v = Vec::new();
    for l in log {
        match &l.record {
            Record::BreakerTrip { agent, .. } => {
                tripped.insert(agent);
            }
            Record::Token { token, holder, lineage, allow: true, .. } => {
                if let Some(a) = lineage.iter().chain([holder]).find(|a| tripped.contains(a)) {
                    v.push(format!("seq {}: {token} allowed after {a} tripped", l.seq));
                }
            }
            _ => {}
        }
    }
    v
}

/// Leaves flagged irreversible and critical are only escalated or terminated.
pub fn safety_gate(log: &[LogLine]) -> Vec<String> {
    log.iter()
        .filter_map(|l| match &l.record {
            Record::Response { leaf, action, locked: true, .. }
                if !matches!(action, ResponseAction::Escalate | ResponseAction::Terminate) =>
            {
                Some(format!("seq {}: locked leaf {leaf} answered with {action:?}", l.seq))
            }
            _ => None,
        })
        .collect()
}

/// Re-delegation ticks per leaf, in order.
pub fn redelegations(log: &[LogLine]) -> BTreeMap<String, Vec<Tick>> {
    let mut out: BTreeMap<String, Vec<Tick>> = BTreeMap::new();
    for l in log {
        if let Record::Redelegate { leaf, .. } = &l.record {
            out.entry(leaf.clone()).or_default().push(l.tick);
        }
    }
    out
}

/// Per-leaf re-delegation count stays within the cap and consecutive ones
/// are at least a cooldown apart.
pub fn stability(log: &[LogLine], policy: &StabilityPolicy) -> Vec<String> {
    let mut v = Vec::new();
    for (leaf, ticks) in redelegations(log) {
        if let Some(max) = policy.max_redelegations {
            if ticks.len() > max as usize {
                v.push(format!("{leaf}: {} re-delegations exceed {max}", ticks.len()));
            }
        }
        for w in ticks.windows(2) {
            if w[1] - w[0] < policy.rebid_cooldown {
                v.push(format!("{leaf}: re-delegations at {} and {} closer than {}", w[0], w[1], policy.rebid_cooldown));
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SybilExposure {
    pub group: String,
    pub budget: Micros,
    pub min_stake: Micros,
    /// Largest number of simultaneously open accepted bids, by tick.
    pub max_open: usize,
    pub worst_tick: Tick,
}

impl SybilExposure {
    pub fn bound(&self) -> usize {
        (self.budget / self.min_stake.max(1)) as usize
    }
}

/// Open accepted bids per identity group. A bid stays open until its RFQ is
/// awarded or withdrawn.
pub fn sybil_exposure(log: &[LogLine]) -> Vec<SybilExposure> {
    let mut group_of: BTreeMap<&AgentId, &str> = BTreeMap::new();
    let mut operator: BTreeMap<&str, &AgentId> = BTreeMap::new();
    let mut budget: BTreeMap<&str, Micros> = BTreeMap::new();
    let mut min_stake: Micros = 0;
    let mut open: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut peak: BTreeMap<&str, (usize, Tick)> = BTreeMap::new();
    for l in log {
        match &l.record {
            Record::Agent { agent, group: Some(g), label, .. } => {
                group_of.insert(agent, g);
                if label == g {
                    operator.insert(g, agent);
                }
            }
            Record::Transfer { to: Account::Agent(a), amount, reason: LedgerReason::Genesis, .. } => {
                if let Some(g) = group_of.get(a) {
                    if operator.get(g) == Some(&a) {
                        *budget.entry(g).or_default() += amount;
                    }
                }
            }
            Record::Rfq { min_stake: m, .. } => min_stake = min_stake.max(*m),
            Record::Bid { rfq, agent, rejected: None, .. } => {
                if let Some(g) = group_of.get(agent) {
                    *open.entry(g).or_default().entry(rfq).or_default() += 1;
                    let n: usize = open[g].values().sum();
                    let p = peak.entry(g).or_insert((0, l.tick));
                    if n > p.0 {
                        *p = (n, l.tick);
                    }
                }
            }
            Record::Award { rfq, .. } | Record::Withdraw { rfq } => {
                for bids in open.values_mut() {
                    bids.remove(rfq.as_str());
                }
            }
            _ => {}
        }
    }
    budget
        .iter()
        .map(|(g, b)| {
            let (max_open, worst_tick) = peak.get(g).copied().unwrap_or((0, 0));
            SybilExposure { group: g.to_string(), budget: *b, min_stake, max_open, worst_tick }
        })
        .collect()
}

fn sybil_violations(log: &[LogLine]) -> Vec<String> {
    sybil_exposure(log)
        .into_iter()
        .filter(|e| e.max_open > e.bound())
        .map(|e| format!("{}: {} open bids at tick {} exceed {}", e.group, e.max_open, e.worst_tick, e.bound()))
        .collect()
}

/// A contract only defaults in answer to a logged trigger on it.
pub fn trigger_before_default(log: &[LogLine]) -> Vec<String> {
    let mut triggered: BTreeSet<&str> = BTreeSet::new();
    let mut v = Vec::new();
    for l in log {
        match &l.record {
            Record::Trigger { contract: Some(c), .. } => {
                triggered.insert(c);
            }
            Record::State { contract, to: ContractState::Defaulted, .. } if !triggered.contains(contract.as_str()) => {
                v.push(format!("seq {}: {contract} defaulted without a trigger", l.seq));
            }
            _ => {}
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{random_scenario, run};

    #[test]
    fn random_runs_pass_every_audit() {
        for seed in [1, 4, 16] {
            let sc = random_scenario(seed);
            let r = run(&sc).unwrap();
            for (name, v) in audit_all(&r.records, &sc.config.coordination.stability) {
                assert!(v.is_empty(), "seed {seed} {name}: {v:?}");
            }
        }
    }

    #[test]
    fn tampered_transfer_is_caught() {
        let mut r = run(&random_scenario(2)).unwrap().records;
        let i = r.iter().position(|l| matches!(l.record, Record::Transfer { reason: LedgerReason::Fee, .. })).unwrap();
        if let Record::Transfer { amount, .. } = &mut r[i].record {
            *amount += 1_000_000_000_000;
        }
        assert!(!money(&r).is_empty());
    }

    #[test]
    fn balances_snapshot_per_tick() {
        let r = run(&random_scenario(3)).unwrap();
        let snaps = balances_by_tick(&r.records);
        assert!(snaps.windows(2).all(|w| w[0].0 < w[1].0));
        for (_, bal) in &snaps {
            let held: i128 = bal.iter().filter(|(a, _)| **a != Account::Mint).map(|(_, b)| *b).sum();
            assert_eq!(held, -bal.get(&Account::Mint).copied().unwrap_or(0));
            assert!(bal.iter().all(|(a, b)| *a == Account::Mint || *b >= 0));
        }
    }
}
