//! Hybrid proof-of-work / proof-of-stake consensus core.
//!
//! Miners produce candidate blocks; a stake-weighted sortition picks `m`
//! stake entries per height and a block is valid only once `n` of them
//! approve it. Around that protocol sit a difficulty engine, a fork-choice
//! index, a deterministic attack simulator and an attack-cost model.

pub mod block;
pub mod consensus;
pub mod econ;
pub mod hashing;
pub mod ledger;
pub mod netsim;
pub mod params;
pub mod pos;
pub mod pow;

pub use block::{AccountId, Block, BlockHeader, Coinbase, StakeId, Transaction, TxId, TxKind, Vote};
pub use consensus::{distribute_reward, validate_block, ChainIndex, ConsensusError, ReorgReport, RewardSplit};
pub use econ::{CostRow, EconParams};
pub use hashing::{digest, meets_target, Hash256, HashAlgo};
pub use ledger::{apply_block, Genesis, GenesisStake, LedgerError, LedgerState};
pub use params::{block_reward_at, preset_params, Amount, ChainParams, Height, Preset, COIN};
pub use pos::{select_voters, window_width, SortitionSeed, StakeEntry, StakePool, StakeStatus};
pub use pow::{retarget, DifficultyState};
