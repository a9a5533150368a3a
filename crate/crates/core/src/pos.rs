//! Stake lifecycle, eligibility windows, stake-weighted sortition and vote
//! production.
//!
//! Entry lifecycle: `Pending -> Live -> {Voted | Missed | Expired} -> Released`.
//! The pool keeps every entry that has not been released yet, plus ordered
//! indices of the heights at which entries activate, expire and unlock.
//! Maps are persistent and the live set is copy-on-write, so a pool snapshot
//! per block is cheap.

use std::sync::Arc;

use im::{OrdMap, OrdSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{AccountId, StakeId, Vote};
use crate::hashing::{digest_parts, Hash256, HashAlgo, ShakeStream};
use crate::params::{Amount, ChainParams, Height};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PosError {
    #[error("stake pool has {live} live entries, {needed} voters required")]
    PoolTooSmall { live: usize, needed: usize },
    #[error("stake entry {0:?} not in pool")]
    UnknownEntry(StakeId),
    #[error("illegal stake transition {from:?} -> {to:?} for {id:?}")]
    IllegalTransition { id: StakeId, from: StakeStatus, to: StakeStatus },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StakeStatus {
    Pending,
    Live,
    Voted,
    Missed,
    Expired,
    Released,
}

impl StakeStatus {
    pub fn can_become(self, next: StakeStatus) -> bool {
        use StakeStatus::*;
        matches!(
            (self, next),
            (Pending, Live)
                | (Live, Voted)
                | (Live, Missed)
                | (Live, Expired)
                | (Voted, Released)
                | (Missed, Released)
                | (Expired, Released)
        )
    }

    pub fn is_terminal_event(self) -> bool {
        matches!(self, StakeStatus::Voted | StakeStatus::Missed | StakeStatus::Expired)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeEntry {
    pub id: StakeId,
    pub owner: AccountId,
    pub amount: Amount,
    pub fee: Amount,
    pub invoice_height: Height,
    /// First height at which the entry may be selected.
    pub window_start: Height,
    /// Last height at which the entry may be selected; fixed on activation.
    pub window_end: Option<Height>,
    pub status: StakeStatus,
    pub delegate: Option<AccountId>,
    pub release_height: Option<Height>,
    /// Voter reward accrued; paid out together with the stake on release.
    pub reward: Amount,
}

impl StakeEntry {
    pub fn pending(
        id: StakeId,
        owner: AccountId,
        amount: Amount,
        fee: Amount,
        invoice_height: Height,
        delegate: Option<AccountId>,
        params: &ChainParams,
    ) -> Self {
        StakeEntry {
            id,
            owner,
            amount,
            fee,
            invoice_height,
            window_start: invoice_height + params.stake_maturity,
            window_end: None,
            status: StakeStatus::Pending,
            delegate,
            release_height: None,
            reward: 0,
        }
    }

    pub fn in_window(&self, height: Height) -> bool {
        height >= self.window_start && self.window_end.is_some_and(|end| height <= end)
    }

    /// Locked value returned to the owner on release.
    pub fn locked_value(&self) -> Amount {
        self.amount + self.reward
    }

    fn set_status(&mut self, to: StakeStatus) -> Result<(), PosError> {
        if !self.status.can_become(to) {
            return Err(PosError::IllegalTransition { id: self.id, from: self.status, to });
        }
        self.status = to;
        Ok(())
    }
}

/// Eligibility window width for an entry activating when `live_entries`
/// entries are live: `ceil(alpha * live / m)`.
pub fn window_width(live_entries: usize, params: &ChainParams) -> u64 {
    let num = params.window_alpha * live_entries as u64;
    num.div_ceil(params.m_voters as u64)
}

/// A state change recorded by [`StakePool::advance`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub id: StakeId,
    pub height: Height,
    pub to: StakeStatus,
}

/// Live entries sorted by id. Shared between snapshots until one of them
/// changes it; contiguous so the per-height sortition table is a linear pass.
#[derive(Clone, Debug, Default, PartialEq)]
struct LiveSet(Arc<Vec<(StakeId, Amount)>>);

impl LiveSet {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn insert(&mut self, id: StakeId, amount: Amount) {
        let v = Arc::make_mut(&mut self.0);
        match v.binary_search_by_key(&id, |(i, _)| *i) {
            Ok(pos) => v[pos].1 = amount,
            Err(pos) => v.insert(pos, (id, amount)),
        }
    }

    fn remove(&mut self, id: &StakeId) {
        if let Ok(pos) = self.0.binary_search_by_key(id, |(i, _)| *i) {
            Arc::make_mut(&mut self.0).remove(pos);
        }
    }

    fn iter(&self) -> impl Iterator<Item = &(StakeId, Amount)> {
        self.0.iter()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StakePool {
    entries: OrdMap<StakeId, StakeEntry>,
    live: LiveSet,
    live_weight: Amount,
    activations: OrdSet<(Height, StakeId)>,
    /// Keyed by the first height at which the entry is past its window.
    expiries: OrdSet<(Height, StakeId)>,
    releases: OrdSet<(Height, StakeId)>,
    /// Running sum of `locked_value` over `entries`.
    locked: Amount,
    /// Unreleased entries per owner.
    owned: im::HashMap<AccountId, u32>,
    height: Height,
}

impl StakePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn height(&self) -> Height {
        self.height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn live_weight(&self) -> Amount {
        self.live_weight
    }

    pub fn get(&self, id: StakeId) -> Option<&StakeEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &StakeEntry> {
        self.entries.values()
    }

    pub fn live_entries(&self) -> impl Iterator<Item = &StakeEntry> {
        self.live.iter().filter_map(|(id, _)| self.entries.get(id))
    }

    /// Unreleased entries owned by `owner`, whatever their status.
    pub fn owned_count(&self, owner: AccountId) -> u32 {
        self.owned.get(&owner).copied().unwrap_or(0)
    }

    fn own(&mut self, owner: AccountId) {
        *self.owned.entry(owner).or_insert(0) += 1;
    }

    fn disown(&mut self, owner: AccountId) {
        if let Some(n) = self.owned.get_mut(&owner) {
            *n -= 1;
            if *n == 0 {
                self.owned.remove(&owner);
            }
        }
    }

    /// Sum of stake plus accrued rewards over all unreleased entries.
    pub fn locked_total(&self) -> Amount {
        self.locked
    }

    pub fn insert_pending(&mut self, entry: StakeEntry) {
        debug_assert_eq!(entry.status, StakeStatus::Pending);
        self.activations.insert((entry.window_start, entry.id));
        self.locked += entry.locked_value();
        self.own(entry.owner);
        self.entries.insert(entry.id, entry);
    }

    /// Inserts an entry that is already live with a fixed window, as used for
    /// genesis allocations.
    pub fn insert_live(&mut self, mut entry: StakeEntry, window_start: Height, window_end: Height) {
        entry.status = StakeStatus::Live;
        entry.window_start = window_start;
        entry.window_end = Some(window_end);
        self.expiries.insert((window_end + 1, entry.id));
        self.live.insert(entry.id, entry.amount);
        self.live_weight += entry.amount;
        self.locked += entry.locked_value();
        self.own(entry.owner);
        self.entries.insert(entry.id, entry);
    }

    /// Moves the pool forward to `new_height`: activations and expiries at
    /// every height in `(self.height, new_height]`, in height order.
    pub fn advance(&mut self, new_height: Height, params: &ChainParams) -> Vec<Transition> {
        let mut log = Vec::new();
        if new_height <= self.height {
            return log;
        }
        loop {
            let next_act = self.activations.get_min().map(|(h, _)| *h);
            let next_exp = self.expiries.get_min().map(|(h, _)| *h);
            let h = match (next_act, next_exp) {
                (None, None) => break,
                (Some(a), None) => a,
                (None, Some(e)) => e,
                (Some(a), Some(e)) => a.min(e),
            };
            if h > new_height {
                break;
            }
            let activating: Vec<StakeId> =
                self.activations.iter().take_while(|(ah, _)| *ah == h).map(|(_, id)| *id).collect();
            for id in &activating {
                self.activations.remove(&(h, *id));
                let entry = self.entries.get_mut(id).expect("indexed entry exists");
                entry.set_status(StakeStatus::Live).expect("pending entries activate");
                self.live.insert(*id, entry.amount);
                self.live_weight += entry.amount;
                log.push(Transition { id: *id, height: h, to: StakeStatus::Live });
            }
            if !activating.is_empty() {
                let w = window_width(self.live.len(), params);
                for id in &activating {
                    let entry = self.entries.get_mut(id).expect("indexed entry exists");
                    let end = h + w;
                    entry.window_end = Some(end);
                    self.expiries.insert((end + 1, *id));
                }
            }
            let expiring: Vec<StakeId> =
                self.expiries.iter().take_while(|(eh, _)| *eh == h).map(|(_, id)| *id).collect();
            for id in expiring {
                self.expiries.remove(&(h, id));
                self.finish(id, StakeStatus::Expired, h, params).expect("expiry index only holds live entries");
                log.push(Transition { id, height: h, to: StakeStatus::Expired });
            }
        }
        self.height = new_height;
        log
    }

    fn finish(&mut self, id: StakeId, to: StakeStatus, height: Height, params: &ChainParams) -> Result<(), PosError> {
        let entry = self.entries.get_mut(&id).ok_or(PosError::UnknownEntry(id))?;
        entry.set_status(to)?;
        let release = height + params.lock_after;
        entry.release_height = Some(release);
        let (amount, end) = (entry.amount, entry.window_end);
        if let Some(end) = end {
            self.expiries.remove(&(end + 1, id));
        }
        self.live.remove(&id);
        self.live_weight -= amount;
        self.releases.insert((release, id));
        Ok(())
    }

    pub fn mark_voted(
        &mut self,
        id: StakeId,
        height: Height,
        reward: Amount,
        params: &ChainParams,
    ) -> Result<(), PosError> {
        self.finish(id, StakeStatus::Voted, height, params)?;
        if let Some(e) = self.entries.get_mut(&id) {
            e.reward += reward;
            self.locked += reward;
        }
        Ok(())
    }

    pub fn mark_missed(&mut self, id: StakeId, height: Height, params: &ChainParams) -> Result<(), PosError> {
        self.finish(id, StakeStatus::Missed, height, params)
    }

    /// Removes and returns every entry whose release height is `<= height`.
    pub fn take_releases(&mut self, height: Height) -> Vec<StakeEntry> {
        let due: Vec<(Height, StakeId)> = self.releases.iter().take_while(|(rh, _)| *rh <= height).copied().collect();
        due.into_iter()
            .map(|key| {
                self.releases.remove(&key);
                let mut entry = self.entries.remove(&key.1).expect("release index consistent");
                entry.set_status(StakeStatus::Released).expect("terminal entries release");
                self.locked -= entry.locked_value();
                self.disown(entry.owner);
                entry
            })
            .collect()
    }

    pub fn sortition_table(&self) -> SortitionTable {
        SortitionTable::new(self.live.iter().copied())
    }
}

/// Per-candidate-height sortition seed: `H(parent || height || "SORT")`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SortitionSeed(pub Hash256);

impl SortitionSeed {
    pub fn derive(algo: HashAlgo, parent: &Hash256, height: Height) -> Self {
        SortitionSeed(digest_parts(algo, &[parent.as_bytes(), &height.to_be_bytes(), b"SORT"]))
    }
}

/// Live entries in id order with cumulative weights.
#[derive(Clone, Debug)]
pub struct SortitionTable {
    ids: Vec<StakeId>,
    /// `ends[i]` is the exclusive end of entry `i` on the weight line.
    ends: Vec<u128>,
}

impl SortitionTable {
    pub fn new(entries: impl IntoIterator<Item = (StakeId, Amount)>) -> Self {
        let entries = entries.into_iter();
        let mut ids = Vec::with_capacity(entries.size_hint().0);
        let mut ends = Vec::with_capacity(entries.size_hint().0);
        let mut acc: u128 = 0;
        for (id, w) in entries {
            if w == 0 {
                continue;
            }
            acc += w as u128;
            ids.push(id);
            ends.push(acc);
        }
        SortitionTable { ids, ends }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn total_weight(&self) -> u128 {
        self.ends.last().copied().unwrap_or(0)
    }

    fn start(&self, idx: usize) -> u128 {
        if idx == 0 {
            0
        } else {
            self.ends[idx - 1]
        }
    }

    /// Weighted sampling without replacement of `m` entries.
    ///
    /// Each draw is a big-endian `u64` from the SHAKE-256 stream of the seed,
    /// reduced modulo the remaining weight and located on the cumulative line
    /// of the entries not yet drawn.
    pub fn select(&self, seed: &SortitionSeed, m: usize) -> Result<Vec<StakeId>, PosError> {
        if self.ids.len() < m {
            return Err(PosError::PoolTooSmall { live: self.ids.len(), needed: m });
        }
        let mut stream = ShakeStream::new(seed.0.as_bytes());
        let mut remaining = self.total_weight();
        // (start, width, index) of drawn entries, sorted by start.
        let mut removed: Vec<(u128, u128, usize)> = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let mut x = stream.next_u64() as u128 % remaining;
            for &(start, width, _) in &removed {
                if x >= start {
                    x += width;
                } else {
                    break;
                }
            }
            let idx = self.ends.partition_point(|&end| end <= x);
            let start = self.start(idx);
            let width = self.ends[idx] - start;
            let pos = removed.partition_point(|&(s, _, _)| s < start);
            removed.insert(pos, (start, width, idx));
            remaining -= width;
            out.push(self.ids[idx]);
        }
        Ok(out)
    }
}

pub fn select_voters(pool: &StakePool, seed: &SortitionSeed, m: usize) -> Result<Vec<StakeId>, PosError> {
    pool.sortition_table().select(seed, m)
}

/// Votes for one candidate, plus the selected entries that did not vote.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ballot {
    pub votes: Vec<Vote>,
    pub missed: Vec<StakeId>,
}

/// One approving vote per selected entry whose owner, or failing that its
/// delegate, is reachable according to `online`.
pub fn cast_votes<'a>(
    selected: impl IntoIterator<Item = &'a StakeEntry>,
    candidate: Hash256,
    online: impl Fn(AccountId) -> bool,
) -> Ballot {
    let mut ballot = Ballot::default();
    for entry in selected {
        let voter = if online(entry.owner) { Some(entry.owner) } else { entry.delegate.filter(|d| online(*d)) };
        match voter {
            Some(voter) => ballot.votes.push(Vote { stake: entry.id, voter, candidate, approve: true }),
            None => ballot.missed.push(entry.id),
        }
    }
    ballot
}
