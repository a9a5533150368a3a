//! Hand-built blocks over a small staked index.

#![allow(dead_code)]

use hycon_core::block::{candidate_commitment, payload_commitment};
use hycon_core::{
    AccountId, Block, BlockHeader, ChainIndex, ChainParams, Genesis, GenesisStake, Hash256, Preset, StakeId, Vote, COIN,
};

pub const STAKES: u64 = 200;

pub fn pai() -> ChainParams {
    ChainParams::preset(Preset::ProjectPai)
}

/// Stake `i` belongs to account `i`.
pub fn owner(stake: StakeId) -> AccountId {
    AccountId(stake.0 as u32)
}

/// Index whose genesis holds `STAKES` equal entries, live for 1000 heights.
pub fn staked_index() -> ChainIndex {
    let genesis = Genesis {
        allocations: Vec::new(),
        stakes: (0..STAKES)
            .map(|i| GenesisStake { id: i, owner: owner(StakeId(i)), amount: 100 * COIN, delegate: None })
            .collect(),
        stake_window: Some(1000),
    };
    ChainIndex::new(pai(), &genesis, hycon_core::pow::max_target(), 0, false).expect("genesis is valid")
}

/// Block on `parent` by `miner` carrying `votes` as (stake, voter) pairs
/// and the coinbase those approvals earn. Votes name `candidate` if given.
pub fn forge(
    idx: &ChainIndex,
    parent: Hash256,
    miner: AccountId,
    votes: &[(StakeId, AccountId)],
    candidate: Option<Hash256>,
) -> Block {
    let params = idx.params();
    let algo = params.hash_algo;
    let ctx = idx.child_context(&parent).expect("parent indexed");
    let real = candidate_commitment(algo, &parent, ctx.height, miner, &[]);
    let votes: Vec<Vote> = votes
        .iter()
        .map(|&(stake, voter)| Vote { stake, voter, candidate: candidate.unwrap_or(real), approve: true })
        .collect();
    let coinbase = ctx.coinbase(miner, votes.len() as u32, params);
    let header = BlockHeader {
        parent,
        height: ctx.height,
        payload_commitment: payload_commitment(algo, &real, &votes, &coinbase),
        timestamp: ctx.height * 600,
        target: ctx.target.clone(),
        nonce: 0,
    };
    Block { header, transactions: Vec::new(), votes, coinbase }
}

/// The selected entries for a child of `parent`, voting as their owners.
pub fn honest_votes(idx: &ChainIndex, parent: &Hash256) -> Vec<(StakeId, AccountId)> {
    let ctx = idx.child_context(parent).expect("parent indexed");
    ctx.selected().iter().map(|&s| (s, owner(s))).collect()
}

/// Extends `parent` with a fully voted block by `miner`.
pub fn extend(idx: &mut ChainIndex, parent: Hash256, miner: u32) -> Hash256 {
    let votes = honest_votes(idx, &parent);
    let block = forge(idx, parent, AccountId(10_000 + miner), &votes, None);
    idx.extend_chain(block).expect("honest block connects").connected[0]
}
