//! In-process double-entry ledger. Every movement of money is a
//! [`LedgerEntry`]; balances are never edited directly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::identity::AgentId;
use crate::{Micros, Tick};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BankError {
    #[error("insufficient funds in {account}: need {needed}, have {available}")]
    InsufficientFunds { account: Account, needed: Micros, available: Micros },
    #[error("invalid account: {0}")]
    InvalidAccount(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Account {
    Agent(AgentId),
    /// Stake-on-bid bonds awaiting award or refund.
    BondPool,
    Escrow(String),
    /// Fees for protocol services (RFQ, verification, re-delegation).
    Treasury,
    /// Source of initial balances; the only account allowed to go negative in audits.
    Mint,
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Agent(a) => write!(f, "agent:{a}"),
            Account::BondPool => f.write_str("bond_pool"),
            Account::Escrow(c) => write!(f, "escrow:{c}"),
            Account::Treasury => f.write_str("treasury"),
            Account::Mint => f.write_str("mint"),
        }
    }
}

impl FromStr for Account {
    type Err = BankError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BankError::InvalidAccount(s.to_string());
        Ok(match s {
            "bond_pool" => Account::BondPool,
            "treasury" => Account::Treasury,
            "mint" => Account::Mint,
            _ => {
                if let Some(a) = s.strip_prefix("agent:") {
                    Account::Agent(AgentId::new(a).map_err(|_| bad())?)
                } else if let Some(c) = s.strip_prefix("escrow:").filter(|c| !c.is_empty()) {
                    Account::Escrow(c.to_string())
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl TryFrom<String> for Account {
    type Error = BankError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Account> for String {
    fn from(a: Account) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerReason {
    Fund,
    Stake,
    Release,
    Slash,
    Refund,
    Penalty,
    Bond,
    Reward,
    Genesis,
    Fee,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tick: Tick,
    #[serde(rename = "from_account")]
    pub from: Account,
    #[serde(rename = "to_account")]
    pub to: Account,
    pub amount: Micros,
    pub reason: LedgerReason,
}

#[derive(Debug, Clone, Default)]
pub struct Bank {
    balances: BTreeMap<Account, Micros>,
    entries: Vec<LedgerEntry>,
    supply: Micros,
}

impl Bank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create money out of the mint. Only used to seed initial balances.
    pub fn genesis(&mut self, tick: Tick, to: Account, amount: Micros) {
        if amount == 0 {
            return;
        }
        *self.balances.entry(to.clone()).or_default() += amount;
        self.supply += amount;
        self.entries.push(LedgerEntry { tick, from: Account::Mint, to, amount, reason: LedgerReason::Genesis });
    }

    pub fn balance(&self, a: &Account) -> Micros {
        self.balances.get(a).copied().unwrap_or(0)
    }

    pub fn agent_balance(&self, a: &AgentId) -> Micros {
        self.balance(&Account::Agent(a.clone()))
    }

    /// Zero-amount transfers succeed without recording anything.
    pub fn transfer(
        &mut self,
        tick: Tick,
        from: &Account,
        to: &Account,
        amount: Micros,
        reason: LedgerReason,
    ) -> Result<(), BankError> {
        if amount == 0 || from == to {
            return Ok(());
        }
        let available = self.balance(from);
        if available < amount {
            return Err(BankError::InsufficientFunds { account: from.clone(), needed: amount, available });
        }
        *self.balances.get_mut(from).expect("positive balance exists") -= amount;
        *self.balances.entry(to.clone()).or_default() += amount;
        self.entries.push(LedgerEntry { tick, from: from.clone(), to: to.clone(), amount, reason });
        Ok(())
    }

    /// Move everything held in `from` to `to`.
    pub fn sweep(&mut self, tick: Tick, from: &Account, to: &Account, reason: LedgerReason) -> Micros {
        let amt = self.balance(from);
        self.transfer(tick, from, to, amt, reason).expect("sweeping own balance cannot fail");
        amt
    }

    pub fn total(&self) -> Micros {
        self.balances.values().sum()
    }

    pub fn supply(&self) -> Micros {
        self.supply
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn balances(&self) -> impl Iterator<Item = (&Account, Micros)> {
        self.balances.iter().map(|(a, b)| (a, *b))
    }

    /// Sum held in accounts matching `pred`.
    pub fn sum_where(&self, pred: impl Fn(&Account) -> bool) -> Micros {
        self.balances.iter().filter(|(a, _)| pred(a)).map(|(_, b)| *b).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerAudit {
    pub entries: usize,
    pub supply: Micros,
    pub balances: BTreeMap<String, i128>,
    pub violations: Vec<String>,
}

impl LedgerAudit {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Offline re-check of an entry list: positive amounts, non-decreasing ticks,
/// no non-mint account overdrawn, and non-mint holdings equal to the minted supply.
pub fn audit_ledger(entries: &[LedgerEntry]) -> LedgerAudit {
    let mut bal: BTreeMap<Account, i128> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut supply: Micros = 0;
    let mut last_tick = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.amount == 0 {
            violations.push(format!("entry {i}: zero amount"));
        }
        if e.from == e.to {
            violations.push(format!("entry {i}: self transfer"));
        }
        if e.tick < last_tick {
            violations.push(format!("entry {i}: tick {} before {last_tick}", e.tick));
        }
        last_tick = e.tick;
        if (e.reason == LedgerReason::Genesis) != (e.from == Account::Mint) {
            violations.push(format!("entry {i}: genesis must come from the mint"));
        }
        if e.reason == LedgerReason::Genesis {
            supply += e.amount;
        }
        *bal.entry(e.from.clone()).or_default() -= i128::from(e.amount);
        *bal.entry(e.to.clone()).or_default() += i128::from(e.amount);
        if e.from != Account::Mint && bal[&e.from] < 0 {
            violations.push(format!("entry {i}: {} overdrawn", e.from));
        }
    }
    let held: i128 = bal.iter().filter(|(a, _)| **a != Account::Mint).map(|(_, b)| *b).sum();
    if held != i128::from(supply) {
        violations.push(format!("holdings {held} differ from minted supply {supply}"));
    }
    LedgerAudit {
        entries: entries.len(),
        supply,
        balances: bal.into_iter().map(|(a, b)| (a.to_string(), b)).collect(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfers_conserve_supply() {
        let a = Account::Agent(AgentId::derive("a"));
        let mut bank = Bank::new();
        bank.genesis(0, a.clone(), 1_000);
        bank.transfer(1, &a, &Account::BondPool, 400, LedgerReason::Bond).unwrap();
        assert_eq!(bank.total(), 1_000);
        let err = bank.transfer(2, &a, &Account::Treasury, 601, LedgerReason::Fee).unwrap_err();
        assert!(matches!(err, BankError::InsufficientFunds { available: 600, .. }));
        assert_eq!(bank.balance(&a), 600);
        assert!(audit_ledger(bank.entries()).ok());
    }

    #[test]
    fn account_strings_round_trip() {
        for a in [
            Account::Agent(AgentId::derive("x")),
            Account::BondPool,
            Account::Escrow("c-1".into()),
            Account::Treasury,
            Account::Mint,
        ] {
            assert_eq!(a.to_string().parse::<Account>().unwrap(), a);
        }
        assert!("escrow:".parse::<Account>().is_err());
    }

    #[test]
    fn audit_flags_overdraft() {
        let a = Account::Agent(AgentId::derive("a"));
        let entries = vec![LedgerEntry { tick: 0, from: a, to: Account::Treasury, amount: 5, reason: LedgerReason::Fee }];
        assert!(!audit_ledger(&entries).ok());
    }
}
