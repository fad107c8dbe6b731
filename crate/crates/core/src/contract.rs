//! Escrowed delegation contracts as an explicit state machine with
//! optimistic settlement, disputes, slashing and default penalties.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bank::{Account, Bank, BankError, LedgerReason};
use crate::decomposition::TaskSpecification;
use crate::identity::AgentId;
use crate::market::Bid;
use crate::monitoring::MonitoringPlan;
use crate::verification::VerificationPolicy;
use crate::{Micros, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractState {
    Drafted,
    Funded,
    Active,
    Submitted,
    Disputed,
    Arbitrated,
    Settled,
    Defaulted,
    Reauctioned,
    Cancelled,
}

impl ContractState {
    pub const ALL: [ContractState; 10] = [
        ContractState::Drafted,
        ContractState::Funded,
        ContractState::Active,
        ContractState::Submitted,
        ContractState::Disputed,
        ContractState::Arbitrated,
        ContractState::Settled,
        ContractState::Defaulted,
        ContractState::Reauctioned,
        ContractState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ContractState::Settled | ContractState::Reauctioned | ContractState::Cancelled)
    }
}

impl fmt::Display for ContractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Fund,
    Start,
    Submit,
    Challenge,
    Arbitrate,
    Settle,
    Default,
    Reauction,
    Cancel,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Fund,
        Action::Start,
        Action::Submit,
        Action::Challenge,
        Action::Arbitrate,
        Action::Settle,
        Action::Default,
        Action::Reauction,
        Action::Cancel,
    ];
}

/// The declared automaton. Guards such as the dispute window are checked separately.
pub fn next_state(from: ContractState, action: Action) -> Option<ContractState> {
    use Action as A;
    use ContractState::*;
    Some(match (from, action) {
        (Drafted, A::Fund) => Funded,
        (Funded, A::Start) => Active,
        (Active, A::Submit) => Submitted,
        (Submitted, A::Challenge) => Disputed,
        (Submitted, A::Settle) => Settled,
        (Disputed, A::Arbitrate) => Arbitrated,
        (Arbitrated, A::Settle) => Settled,
        (Active, A::Default) => Defaulted,
        (Defaulted, A::Reauction) => Reauctioned,
        (Drafted | Funded | Active, A::Cancel) => Cancelled,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContractError {
    #[error("{action:?} is not allowed in state {from}")]
    InvalidTransition { from: ContractState, action: Action },
    #[error("funding failed: {0}")]
    FundingFailed(BankError),
    #[error("challenge bond {posted} below required {required}")]
    BondShort { posted: Micros, required: Micros },
    #[error("dispute window closed at tick {0}")]
    WindowClosed(Tick),
    #[error("dispute window open until tick {0}")]
    WindowOpen(Tick),
    #[error("contract has no checkpoint compensation schedule")]
    Unsupported,
    #[error("settlement requires a verification verdict")]
    VerdictRequired,
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompensationSchedule {
    Linear,
    /// `(fraction, release share)` steps; the highest step not above the fraction applies.
    Steps { steps: Vec<(f64, f64)> },
}

impl CompensationSchedule {
    pub fn share(&self, fraction: f64) -> f64 {
        let f = fraction.clamp(0.0, 1.0);
        match self {
            CompensationSchedule::Linear => f,
            CompensationSchedule::Steps { steps } => {
                steps.iter().filter(|(at, _)| *at <= f).map(|(_, s)| *s).fold(0.0, f64::max).clamp(0.0, 1.0)
            }
        }
    }

    pub fn release(&self, fraction: f64, escrow: Micros) -> Micros {
        (self.share(fraction) * escrow as f64).floor() as Micros
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTerms {
    pub default_price_difference: bool,
    pub redelegation_fee_schedule: Vec<Micros>,
}

impl Default for PenaltyTerms {
    fn default() -> Self {
        Self { default_price_difference: true, redelegation_fee_schedule: vec![10_000, 20_000, 40_000, 80_000] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractTerms {
    pub dispute_window: Tick,
    pub backup_agent: Option<AgentId>,
    pub penalty_terms: PenaltyTerms,
    pub checkpoint_compensation: Option<CompensationSchedule>,
    /// Share of escrow owed to the delegatee when the delegator cancels an active contract.
    pub cancellation_fraction: f64,
    pub dispute_bond: Option<Micros>,
}

impl Default for ContractTerms {
    fn default() -> Self {
        Self {
            dispute_window: 20,
            backup_agent: None,
            penalty_terms: PenaltyTerms::default(),
            checkpoint_compensation: Some(CompensationSchedule::Linear),
            cancellation_fraction: 0.1,
            dispute_bond: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Holdings {
    pub escrow: Micros,
    pub stake: Micros,
    pub challenge_bond: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Delegator,
    Delegatee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationContract {
    pub contract_id: String,
    pub rfq_id: String,
    pub delegator: AgentId,
    pub delegatee: AgentId,
    pub spec: TaskSpecification,
    pub verification_policy: VerificationPolicy,
    pub escrow_amount: Micros,
    pub delegatee_stake: Micros,
    pub dispute_bond: Micros,
    pub dispute_window: Tick,
    pub monitoring_plan: MonitoringPlan,
    pub backup_agent: Option<AgentId>,
    pub penalty_terms: PenaltyTerms,
    pub checkpoint_compensation: Option<CompensationSchedule>,
    pub cancellation_fraction: f64,
    pub state: ContractState,
    pub history: Vec<(Tick, ContractState)>,
    pub window_end: Option<Tick>,
    pub challenger: Option<AgentId>,
    pub verdict: Option<bool>,
    pub held: Holdings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReauctionOutcome {
    pub compensation: Micros,
    pub penalty: Micros,
    pub shortfall: Micros,
    pub escrow_refund: Micros,
    pub stake_refund: Micros,
}

/// Contract formed from a winning bid. Escrow is the quoted cost and the
/// delegatee's stake is its bid bond, which stays in the bond pool until funding.
pub fn draft(
    contract_id: &str,
    rfq_id: &str,
    delegator: &AgentId,
    winner: &Bid,
    spec: TaskSpecification,
    terms: &ContractTerms,
    now: Tick,
) -> DelegationContract {
    let monitoring_plan = MonitoringPlan::new(spec.reporting.cadence, spec.reporting.granularity);
    DelegationContract {
        contract_id: contract_id.to_string(),
        rfq_id: rfq_id.to_string(),
        delegator: delegator.clone(),
        delegatee: winner.agent_id.clone(),
        verification_policy: spec.verification_policy.clone(),
        spec,
        escrow_amount: winner.estimated_cost,
        delegatee_stake: winner.reputation_bond,
        dispute_bond: terms.dispute_bond.unwrap_or(winner.reputation_bond),
        dispute_window: terms.dispute_window,
        monitoring_plan,
        backup_agent: terms.backup_agent.clone(),
        penalty_terms: terms.penalty_terms.clone(),
        checkpoint_compensation: terms.checkpoint_compensation.clone(),
        cancellation_fraction: terms.cancellation_fraction.clamp(0.0, 1.0),
        state: ContractState::Drafted,
        history: vec![(now, ContractState::Drafted)],
        window_end: None,
        challenger: None,
        verdict: None,
        held: Holdings::default(),
    }
}

impl DelegationContract {
    pub fn account(&self) -> Account {
        Account::Escrow(self.contract_id.clone())
    }

    fn delegator_acct(&self) -> Account {
        Account::Agent(self.delegator.clone())
    }

    fn delegatee_acct(&self) -> Account {
        Account::Agent(self.delegatee.clone())
    }

    fn guard(&self, action: Action) -> Result<ContractState, ContractError> {
        next_state(self.state, action).ok_or(ContractError::InvalidTransition { from: self.state, action })
    }

    fn enter(&mut self, s: ContractState, tick: Tick) {
        self.state = s;
        self.history.push((tick, s));
    }

    fn pay(&mut self, bank: &mut Bank, tick: Tick, to: &Account, amount: Micros, reason: LedgerReason) {
        bank.transfer(tick, &self.account(), to, amount, reason).expect("contract account covers its holdings");
    }

    /// Delegator escrow and the delegatee's stake move into the contract account.
    pub fn fund(&mut self, bank: &mut Bank, tick: Tick) -> Result<(), ContractError> {
        let next = self.guard(Action::Fund)?;
        if self.escrow_amount == 0 {
            return Err(ContractError::FundingFailed(BankError::InvalidAccount("zero escrow".into())));
        }
        let avail = bank.balance(&self.delegator_acct());
        if avail < self.escrow_amount {
            return Err(ContractError::FundingFailed(BankError::InsufficientFunds {
                account: self.delegator_acct(),
                needed: self.escrow_amount,
                available: avail,
            }));
        }
        let pool = bank.balance(&Account::BondPool);
        if pool < self.delegatee_stake {
            return Err(ContractError::FundingFailed(BankError::InsufficientFunds {
                account: Account::BondPool,
                needed: self.delegatee_stake,
                available: pool,
            }));
        }
        let acct = self.account();
        bank.transfer(tick, &self.delegator_acct(), &acct, self.escrow_amount, LedgerReason::Fund)?;
        bank.transfer(tick, &Account::BondPool, &acct, self.delegatee_stake, LedgerReason::Stake)?;
        self.held.escrow = self.escrow_amount;
        self.held.stake = self.delegatee_stake;
        self.enter(next, tick);
        Ok(())
    }

    pub fn start(&mut self, tick: Tick) -> Result<(), ContractError> {
        let next = self.guard(Action::Start)?;
        self.enter(next, tick);
        Ok(())
    }

    /// Opens the dispute window `[tick, tick + dispute_window)`.
    pub fn submit_outcome(&mut self, tick: Tick) -> Result<Tick, ContractError> {
        let next = self.guard(Action::Submit)?;
        let end = tick + self.dispute_window;
        self.window_end = Some(end);
        self.enter(next, tick);
        Ok(end)
    }

    pub fn challenge(
        &mut self,
        bank: &mut Bank,
        challenger: &AgentId,
        bond: Micros,
        tick: Tick,
    ) -> Result<(), ContractError> {
        let next = self.guard(Action::Challenge)?;
        let end = self.window_end.expect("submitted contracts have a window");
        if tick >= end {
            return Err(ContractError::WindowClosed(end));
        }
        if bond < self.dispute_bond {
            return Err(ContractError::BondShort { posted: bond, required: self.dispute_bond });
        }
        let from = Account::Agent(challenger.clone());
        bank.transfer(tick, &from, &self.account(), self.dispute_bond, LedgerReason::Bond)
            .map_err(ContractError::FundingFailed)?;
        self.held.challenge_bond = self.dispute_bond;
        self.challenger = Some(challenger.clone());
        self.enter(next, tick);
        Ok(())
    }

    pub fn arbitrate(&mut self, pass: bool, tick: Tick) -> Result<(), ContractError> {
        let next = self.guard(Action::Arbitrate)?;
        self.verdict = Some(pass);
        self.enter(next, tick);
        Ok(())
    }

    /// Optimistic payout once the window has elapsed without challenge.
    pub fn settle_optimistic(&mut self, bank: &mut Bank, tick: Tick) -> Result<(), ContractError> {
        self.guard(Action::Settle)?;
        if self.state != ContractState::Submitted {
            return Err(ContractError::InvalidTransition { from: self.state, action: Action::Settle });
        }
        if self.verification_policy.escrow_trigger {
            return Err(ContractError::VerdictRequired);
        }
        let end = self.window_end.expect("submitted contracts have a window");
        if tick < end {
            return Err(ContractError::WindowOpen(end));
        }
        self.payout(bank, true, &BTreeMap::new(), tick);
        Ok(())
    }

    /// Settlement on an explicit verdict: after arbitration, or directly from
    /// Submitted when the policy gates escrow on verification.
    pub fn settle(
        &mut self,
        bank: &mut Bank,
        pass: bool,
        panel_rewards: &BTreeMap<AgentId, Micros>,
        tick: Tick,
    ) -> Result<(), ContractError> {
        self.guard(Action::Settle)?;
        let pass = match self.state {
            ContractState::Arbitrated => self.verdict.expect("arbitrated contracts carry a verdict"),
            ContractState::Submitted if self.verification_policy.escrow_trigger => pass,
            ContractState::Submitted => return Err(ContractError::VerdictRequired),
            _ => unreachable!("guard admits only Submitted and Arbitrated"),
        };
        self.verdict = Some(pass);
        self.payout(bank, pass, panel_rewards, tick);
        Ok(())
    }

    /// Pass: escrow and stake to the delegatee, a failed challenger's bond
    /// funds the panel and the remainder compensates the delegatee.
    /// Fail: escrow back and stake slashed to the delegator (panel paid from
    /// the stake), the challenger's bond refunded.
    fn payout(&mut self, bank: &mut Bank, pass: bool, panel: &BTreeMap<AgentId, Micros>, tick: Tick) {
        let h = self.held;
        let (dr, de) = (self.delegator_acct(), self.delegatee_acct());
        let panel_total: Micros = panel.values().sum();
        if pass {
            self.pay(bank, tick, &de, h.escrow, LedgerReason::Release);
            self.pay(bank, tick, &de, h.stake, LedgerReason::Refund);
            let fee = panel_total.min(h.challenge_bond);
            self.pay_panel(bank, panel, fee, tick);
            self.pay(bank, tick, &de, h.challenge_bond - fee, LedgerReason::Slash);
        } else {
            self.pay(bank, tick, &dr, h.escrow, LedgerReason::Refund);
            let fee = panel_total.min(h.stake);
            self.pay_panel(bank, panel, fee, tick);
            self.pay(bank, tick, &dr, h.stake - fee, LedgerReason::Slash);
            if let Some(c) = self.challenger.clone() {
                self.pay(bank, tick, &Account::Agent(c), h.challenge_bond, LedgerReason::Refund);
            }
        }
        self.held = Holdings::default();
        self.enter(ContractState::Settled, tick);
    }

    fn pay_panel(&mut self, bank: &mut Bank, panel: &BTreeMap<AgentId, Micros>, budget: Micros, tick: Tick) {
        let mut left = budget;
        for (a, r) in panel {
            let r = (*r).min(left);
            self.pay(bank, tick, &Account::Agent(a.clone()), r, LedgerReason::Reward);
            left -= r;
        }
    }

    pub fn mark_default(&mut self, tick: Tick) -> Result<(), ContractError> {
        let next = self.guard(Action::Default)?;
        self.enter(next, tick);
        Ok(())
    }

    /// Partial release for verified progress; only valid once defaulted.
    pub fn checkpoint_compensation(
        &mut self,
        bank: &mut Bank,
        fraction: f64,
        tick: Tick,
    ) -> Result<Micros, ContractError> {
        let schedule = self.checkpoint_compensation.clone().ok_or(ContractError::Unsupported)?;
        if self.state != ContractState::Defaulted {
            return Err(ContractError::InvalidTransition { from: self.state, action: Action::Reauction });
        }
        let release = schedule.release(fraction, self.escrow_amount).min(self.held.escrow);
        let de = self.delegatee_acct();
        self.pay(bank, tick, &de, release, LedgerReason::Release);
        self.held.escrow -= release;
        Ok(release)
    }

    /// Closes a defaulted contract. The delegatee covers any price increase out
    /// of its stake (capped at the stake); the rest of the stake and escrow go back.
    pub fn default_and_reauction(
        &mut self,
        bank: &mut Bank,
        new_price: Micros,
        tick: Tick,
    ) -> Result<ReauctionOutcome, ContractError> {
        let next = self.guard(Action::Reauction)?;
        let diff = if self.penalty_terms.default_price_difference { new_price.saturating_sub(self.escrow_amount) } else { 0 };
        let penalty = diff.min(self.held.stake);
        let (dr, de) = (self.delegator_acct(), self.delegatee_acct());
        self.pay(bank, tick, &dr, penalty, LedgerReason::Penalty);
        let out = ReauctionOutcome {
            compensation: self.escrow_amount - self.held.escrow,
            penalty,
            shortfall: diff - penalty,
            escrow_refund: self.held.escrow,
            stake_refund: self.held.stake - penalty,
        };
        self.pay(bank, tick, &dr, out.escrow_refund, LedgerReason::Refund);
        self.pay(bank, tick, &de, out.stake_refund, LedgerReason::Refund);
        self.held = Holdings::default();
        self.enter(next, tick);
        Ok(out)
    }

    /// Cancellation before settlement. A delegator cancelling an active
    /// contract owes the cancellation share; `slash` forfeits the stake to the
    /// delegator instead (used for terminations on misconduct).
    pub fn cancel(&mut self, bank: &mut Bank, by: Party, slash: bool, tick: Tick) -> Result<Micros, ContractError> {
        let next = self.guard(Action::Cancel)?;
        let (dr, de) = (self.delegator_acct(), self.delegatee_acct());
        let mut compensation = 0;
        if self.state == ContractState::Drafted {
            bank.transfer(tick, &Account::BondPool, &de, self.delegatee_stake, LedgerReason::Refund)?;
        } else {
            if self.state == ContractState::Active && by == Party::Delegator && !slash {
                compensation = (self.cancellation_fraction * self.held.escrow as f64).floor() as Micros;
            }
            let h = self.held;
            self.pay(bank, tick, &de, compensation, LedgerReason::Release);
            self.pay(bank, tick, &dr, h.escrow - compensation, LedgerReason::Refund);
            if slash {
                self.pay(bank, tick, &dr, h.stake, LedgerReason::Slash);
            } else {
                self.pay(bank, tick, &de, h.stake, LedgerReason::Refund);
            }
            self.held = Holdings::default();
        }
        self.enter(next, tick);
        Ok(compensation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{finalize, LeafAssignmentPlan};
    use crate::market::PrivacyGuarantee;
    use crate::task::{TaskCharacteristics, TaskNode};
    use std::collections::BTreeSet;

    pub(crate) fn spec(criticality: f64) -> TaskSpecification {
        let task = TaskNode::leaf("t", TaskCharacteristics { criticality, duration_est: 5, ..Default::default() }, 1);
        let plan = LeafAssignmentPlan {
            task_id: "t".into(),
            required_capabilities: BTreeSet::new(),
            candidate_verification_modes: vec![],
            task,
            covers: vec![],
        };
        finalize(&plan, 5_000_000)
    }

    struct Fx {
        bank: Bank,
        c: DelegationContract,
        a: AgentId,
        b: AgentId,
    }

    fn fx(criticality: f64, delegator_funds: Micros) -> Fx {
        let (a, b) = (AgentId::derive("a"), AgentId::derive("b"));
        let mut bank = Bank::new();
        bank.genesis(0, Account::Agent(a.clone()), delegator_funds);
        bank.genesis(0, Account::Agent(b.clone()), 1_000_000);
        bank.transfer(0, &Account::Agent(b.clone()), &Account::BondPool, 500_000, LedgerReason::Bond).unwrap();
        let bid = Bid {
            agent_id: b.clone(),
            estimated_cost: 5_000_000,
            estimated_duration: 300,
            privacy_guarantee: PrivacyGuarantee::None,
            reputation_bond: 500_000,
            expiry: 100,
            signature: Default::default(),
        };
        let c = draft("c1", "rfq-1", &a, &bid, spec(criticality), &ContractTerms::default(), 0);
        Fx { bank, c, a, b }
    }

    fn active(f: &mut Fx) {
        f.c.fund(&mut f.bank, 1).unwrap();
        f.c.start(1).unwrap();
    }

    #[test]
    fn funding_paths() {
        let mut f = fx(0.1, 5_000_000);
        f.c.fund(&mut f.bank, 1).unwrap();
        assert_eq!(f.c.state, ContractState::Funded);
        assert_eq!(f.bank.entries().iter().filter(|e| e.tick == 1).count(), 2);
        assert_eq!(f.bank.total(), 6_000_000);
        let mut short = fx(0.1, 4_999_999);
        assert!(matches!(short.c.fund(&mut short.bank, 1), Err(ContractError::FundingFailed(_))));
        assert_eq!(short.c.state, ContractState::Drafted);
    }

    #[test]
    fn optimistic_settlement_at_window_end() {
        let mut f = fx(0.1, 5_000_000);
        active(&mut f);
        let end = f.c.submit_outcome(10).unwrap();
        assert_eq!(end, 30);
        assert!(matches!(f.c.settle_optimistic(&mut f.bank, end - 1), Err(ContractError::WindowOpen(_))));
        f.c.settle_optimistic(&mut f.bank, end).unwrap();
        assert_eq!(f.bank.agent_balance(&f.b), 1_000_000 + 5_000_000);
        assert!(matches!(
            f.c.challenge(&mut f.bank, &f.a, 500_000, end + 1),
            Err(ContractError::InvalidTransition { .. })
        ));
    }

    #[test]
    fn challenge_window_and_bond() {
        let mut f = fx(0.1, 6_000_000);
        active(&mut f);
        let end = f.c.submit_outcome(10).unwrap();
        assert!(matches!(f.c.challenge(&mut f.bank, &f.a, 499_999, end - 1), Err(ContractError::BondShort { .. })));
        assert!(matches!(f.c.challenge(&mut f.bank, &f.a, 500_000, end), Err(ContractError::WindowClosed(_))));
        f.c.challenge(&mut f.bank, &f.a, 500_000, end - 1).unwrap();
        assert_eq!(f.c.state, ContractState::Disputed);
    }

    #[test]
    fn failed_verdict_slashes_to_delegator() {
        let mut f = fx(0.95, 6_000_000);
        assert!(f.c.verification_policy.escrow_trigger);
        active(&mut f);
        f.c.submit_outcome(10).unwrap();
        f.c.settle(&mut f.bank, false, &BTreeMap::new(), 10).unwrap();
        assert_eq!(f.bank.agent_balance(&f.a), 6_000_000 + 500_000);
        assert_eq!(f.bank.balance(&f.c.account()), 0);
    }

    #[test]
    fn disputed_pass_forfeits_challenger_bond() {
        let mut f = fx(0.1, 6_000_000);
        active(&mut f);
        f.c.submit_outcome(10).unwrap();
        f.c.challenge(&mut f.bank, &f.a, 500_000, 11).unwrap();
        f.c.arbitrate(true, 12).unwrap();
        let panel: BTreeMap<AgentId, Micros> = [(AgentId::derive("p"), 90_000)].into();
        f.c.settle(&mut f.bank, false, &panel, 12).unwrap();
        assert_eq!(f.bank.agent_balance(&f.a), 500_000);
        assert_eq!(f.bank.agent_balance(&f.b), 500_000 + 5_000_000 + 500_000 + 410_000);
        assert_eq!(f.bank.agent_balance(&AgentId::derive("p")), 90_000);
        assert_eq!(f.bank.total(), 7_000_000);
    }

    #[test]
    fn default_penalties() {
        for (new_price, penalty, shortfall) in [(6_000_000, 500_000, 500_000), (4_000_000, 0, 0), (5_200_000, 200_000, 0)] {
            let mut f = fx(0.1, 5_000_000);
            active(&mut f);
            f.c.mark_default(20).unwrap();
            let out = f.c.default_and_reauction(&mut f.bank, new_price, 21).unwrap();
            assert_eq!((out.penalty, out.shortfall), (penalty, shortfall));
            assert_eq!(f.bank.balance(&f.c.account()), 0);
            assert_eq!(f.bank.total(), 6_000_000);
        }
        let mut f = fx(0.1, 5_000_000);
        f.c.delegatee_stake = 1_000_000;
        f.bank.transfer(0, &Account::Agent(f.b.clone()), &Account::BondPool, 500_000, LedgerReason::Bond).unwrap();
        active(&mut f);
        f.c.mark_default(20).unwrap();
        assert_eq!(f.c.default_and_reauction(&mut f.bank, 6_000_000, 21).unwrap().penalty, 1_000_000);
    }

    #[test]
    fn checkpoint_release() {
        let mut f = fx(0.1, 5_000_000);
        active(&mut f);
        f.c.mark_default(20).unwrap();
        assert_eq!(f.c.checkpoint_compensation(&mut f.bank, 0.5, 20).unwrap(), 2_500_000);
        let out = f.c.default_and_reauction(&mut f.bank, 0, 21).unwrap();
        assert_eq!((out.compensation, out.escrow_refund), (2_500_000, 2_500_000));
        assert_eq!(CompensationSchedule::Linear.release(0.0, 5_000_000), 0);
        assert_eq!(CompensationSchedule::Linear.release(1.0, 5_000_000), 5_000_000);
        let mut g = fx(0.1, 5_000_000);
        g.c.checkpoint_compensation = None;
        assert_eq!(g.c.checkpoint_compensation(&mut g.bank, 0.5, 1), Err(ContractError::Unsupported));
    }

    #[test]
    fn cancellation_from_drafted_refunds_bond() {
        let mut f = fx(0.1, 5_000_000);
        f.c.cancel(&mut f.bank, Party::Delegator, false, 1).unwrap();
        assert_eq!(f.bank.agent_balance(&f.b), 1_000_000);
        assert_eq!(f.bank.balance(&Account::BondPool), 0);
    }
}
