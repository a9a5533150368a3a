//! Account-balance ledger with stake accounting.
//!
//! Conservation holds after every applied block:
//! `sum(spendable) + sum(locked stake + accrued rewards) + dev fund = minted - burned`.

use im::{OrdMap, OrdSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{AccountId, Block, StakeId, Transaction, TxId, TxKind};
use crate::consensus::split_reward;
use crate::params::{capped_reward, Amount, ChainParams, Height};
use crate::pos::{window_width, PosError, SortitionSeed, StakeEntry, StakePool};

pub use crate::pos::StakeStatus;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction {tx:?} overspends {account}: balance {balance}, needs {needed}")]
    Overspend { tx: TxId, account: AccountId, balance: Amount, needed: Amount },
    #[error("transaction {0:?} already applied")]
    DuplicateTransaction(TxId),
    #[error("transaction {0:?} is malformed")]
    InvalidTransaction(TxId),
    #[error("coinbase pays {paid}, only {available} available")]
    CoinbaseExceedsSubsidy { paid: Amount, available: Amount },
    #[error("vote references {0:?}, which is not a live entry")]
    BadVote(StakeId),
    #[error("stake pool: {0}")]
    Pos(#[from] PosError),
    #[error("conservation violated: holdings {holdings} != minted {minted} - burned {burned}")]
    ConservationViolation { holdings: u128, minted: Amount, burned: Amount },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisStake {
    pub id: u64,
    pub owner: AccountId,
    pub amount: Amount,
    pub delegate: Option<AccountId>,
}

/// Initial allocations. Genesis stakes are live from height 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub allocations: Vec<(AccountId, Amount)>,
    pub stakes: Vec<GenesisStake>,
    /// Eligibility window for genesis stakes; defaults to the usual width rule.
    pub stake_window: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LedgerState {
    pub height: Height,
    pub balances: OrdMap<AccountId, Amount>,
    pub pool: StakePool,
    pub minted: Amount,
    pub burned: Amount,
    pub dev_fund: Amount,
    applied: OrdSet<TxId>,
}

impl LedgerState {
    pub fn genesis(genesis: &Genesis, params: &ChainParams) -> Result<Self, LedgerError> {
        let mut state = LedgerState::default();
        for (account, amount) in &genesis.allocations {
            state.credit(*account, *amount);
            state.minted += amount;
        }
        let window = genesis.stake_window.unwrap_or_else(|| window_width(genesis.stakes.len(), params));
        for s in &genesis.stakes {
            let entry = StakeEntry::pending(StakeId(s.id), s.owner, s.amount, 0, 0, s.delegate, params);
            state.pool.insert_live(entry, 1, window);
            state.minted += s.amount;
        }
        state.check_conservation()?;
        Ok(state)
    }

    pub fn balance(&self, account: AccountId) -> Amount {
        self.balances.get(&account).copied().unwrap_or(0)
    }

    pub fn is_applied(&self, id: TxId) -> bool {
        self.applied.contains(&id)
    }

    pub fn applied_count(&self) -> usize {
        self.applied.len()
    }

    fn credit(&mut self, account: AccountId, amount: Amount) {
        if amount > 0 {
            *self.balances.entry(account).or_insert(0) += amount;
        }
    }

    fn debit(&mut self, tx: TxId, account: AccountId, amount: Amount) -> Result<(), LedgerError> {
        let balance = self.balance(account);
        if balance < amount {
            return Err(LedgerError::Overspend { tx, account, balance, needed: amount });
        }
        if balance == amount {
            self.balances.remove(&account);
        } else {
            self.balances.insert(account, balance - amount);
        }
        Ok(())
    }

    /// Applies one transaction of a block at `height` mined by `miner`.
    /// Leaves the state untouched on error.
    pub fn apply_transaction(
        &mut self,
        tx: &Transaction,
        miner: AccountId,
        height: Height,
        params: &ChainParams,
    ) -> Result<(), LedgerError> {
        if self.applied.contains(&tx.id) {
            return Err(LedgerError::DuplicateTransaction(tx.id));
        }
        let well_formed = tx.amount > 0
            && match tx.kind {
                TxKind::Transfer => tx.to.is_some(),
                TxKind::StakeSubmission => tx.to.is_none(),
            };
        if !well_formed {
            return Err(LedgerError::InvalidTransaction(tx.id));
        }
        if self.pool.get(tx.id.into()).is_some() {
            return Err(LedgerError::DuplicateTransaction(tx.id));
        }
        self.debit(tx.id, tx.from, tx.debit())?;
        self.credit(miner, tx.fee);
        match tx.kind {
            TxKind::Transfer => self.credit(tx.to.expect("checked above"), tx.amount),
            TxKind::StakeSubmission => {
                let entry = StakeEntry::pending(tx.id.into(), tx.from, tx.amount, tx.fee, height, tx.delegate, params);
                self.pool.insert_pending(entry);
            }
        }
        self.applied.insert(tx.id);
        Ok(())
    }

    /// Sum of everything held: spendable, locked and the dev fund.
    pub fn holdings(&self) -> u128 {
        let spendable: u128 = self.balances.values().map(|b| *b as u128).sum();
        spendable + self.pool.locked_total() as u128 + self.dev_fund as u128
    }

    pub fn check_conservation(&self) -> Result<(), LedgerError> {
        let holdings = self.holdings();
        if self.burned > self.minted || holdings != (self.minted - self.burned) as u128 {
            return Err(LedgerError::ConservationViolation { holdings, minted: self.minted, burned: self.burned });
        }
        Ok(())
    }

    /// Pool advanced to `height`, as seen by a block at that height.
    pub fn advanced_to(&self, height: Height, params: &ChainParams) -> LedgerState {
        let mut s = self.clone();
        s.pool.advance(height, params);
        s
    }
}

/// Applies `block` on top of `state`. Expects a block that consensus has
/// already validated; only ledger-level failures are reported.
pub fn apply_block(state: &LedgerState, block: &Block, params: &ChainParams) -> Result<LedgerState, LedgerError> {
    let advanced = state.advanced_to(block.height(), params);
    let seed = SortitionSeed::derive(params.hash_algo, &block.header.parent, block.height());
    let selected = advanced.pool.sortition_table().select(&seed, params.m_voters as usize).unwrap_or_default();
    apply_block_prepared(advanced, block, &selected, params)
}

/// Second half of [`apply_block`]: `state` is already advanced to the block
/// height and `selected` is the sortition result for it.
pub fn apply_block_prepared(
    mut state: LedgerState,
    block: &Block,
    selected: &[StakeId],
    params: &ChainParams,
) -> Result<LedgerState, LedgerError> {
    let height = block.height();
    let miner = block.coinbase.miner;

    for tx in &block.transactions {
        state.apply_transaction(tx, miner, height, params)?;
    }

    let reward = capped_reward(height, state.minted, params);
    let approvals = block.approvals().min(params.m_voters as usize) as u32;
    let split = split_reward(reward, approvals, params);
    let available = reward - split.withheld;
    let cb = &block.coinbase;
    let paid = cb.miner_amount + cb.per_voter * approvals as u64 + cb.dev_amount;
    if paid > available {
        return Err(LedgerError::CoinbaseExceedsSubsidy { paid, available });
    }

    for vote in block.votes.iter().filter(|v| v.approve) {
        match state.pool.get(vote.stake) {
            Some(e) if e.status == StakeStatus::Live => {}
            _ => return Err(LedgerError::BadVote(vote.stake)),
        }
        state.pool.mark_voted(vote.stake, height, cb.per_voter, params)?;
    }
    for id in selected {
        if state.pool.get(*id).is_some_and(|e| e.status == StakeStatus::Live) {
            state.pool.mark_missed(*id, height, params)?;
        }
    }

    state.credit(miner, cb.miner_amount);
    state.dev_fund += cb.dev_amount;
    state.minted += available;
    state.burned += available - paid;

    for entry in state.pool.take_releases(height) {
        state.credit(entry.owner, entry.locked_value());
    }

    state.height = height;
    state.check_conservation()?;
    Ok(state)
}
