//! Transactions, votes, headers and blocks, with their canonical byte
//! encodings.
//!
//! Header encoding (120 bytes, big-endian, fixed order):
//!
//! | field              | bytes |
//! |--------------------|-------|
//! | parent hash        | 32    |
//! | height             | 8     |
//! | payload commitment | 32    |
//! | timestamp (s)      | 8     |
//! | target             | 32    |
//! | nonce              | 8     |
//!
//! Two commitments exist per block. The *candidate commitment* covers the
//! parent, height, miner and transactions; stake voters approve it before
//! the coinbase is known. The header's *payload commitment* covers the
//! candidate commitment, the votes and the coinbase.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hashing::{digest, Hash256, HashAlgo};
use crate::params::{Amount, Height};

pub const HEADER_LEN: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub u32);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u64);

/// Stake entries are keyed by the id of the submission that created them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StakeId(pub u64);

impl From<TxId> for StakeId {
    fn from(id: TxId) -> Self {
        StakeId(id.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxKind {
    Transfer,
    StakeSubmission,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub kind: TxKind,
    pub from: AccountId,
    /// Recipient; `None` for stake submissions.
    pub to: Option<AccountId>,
    pub amount: Amount,
    pub fee: Amount,
    /// Stakepool allowed to vote on the owner's behalf.
    pub delegate: Option<AccountId>,
}

impl Transaction {
    pub fn transfer(id: u64, from: AccountId, to: AccountId, amount: Amount, fee: Amount) -> Self {
        Transaction { id: TxId(id), kind: TxKind::Transfer, from, to: Some(to), amount, fee, delegate: None }
    }

    pub fn stake(id: u64, owner: AccountId, amount: Amount, fee: Amount, delegate: Option<AccountId>) -> Self {
        Transaction { id: TxId(id), kind: TxKind::StakeSubmission, from: owner, to: None, amount, fee, delegate }
    }

    /// Total debited from `from`.
    pub fn debit(&self) -> Amount {
        self.amount + self.fee
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self.kind {
            TxKind::Transfer => 0,
            TxKind::StakeSubmission => 1,
        });
        out.extend_from_slice(&self.id.0.to_be_bytes());
        out.extend_from_slice(&self.from.0.to_be_bytes());
        encode_opt_account(self.to, out);
        out.extend_from_slice(&self.amount.to_be_bytes());
        out.extend_from_slice(&self.fee.to_be_bytes());
        encode_opt_account(self.delegate, out);
    }
}

fn encode_opt_account(a: Option<AccountId>, out: &mut Vec<u8>) {
    match a {
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&a.0.to_be_bytes());
        }
        None => out.push(0),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub stake: StakeId,
    pub voter: AccountId,
    pub candidate: Hash256,
    pub approve: bool,
}

impl Vote {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.stake.0.to_be_bytes());
        out.extend_from_slice(&self.voter.0.to_be_bytes());
        out.extend_from_slice(self.candidate.as_bytes());
        out.push(self.approve as u8);
    }
}

/// Coinbase payouts. `per_voter` goes to each approving vote's stake entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coinbase {
    pub miner: AccountId,
    pub miner_amount: Amount,
    pub per_voter: Amount,
    pub dev_amount: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub parent: Hash256,
    pub height: Height,
    pub payload_commitment: Hash256,
    pub timestamp: u64,
    #[serde(with = "target_hex")]
    pub target: BigUint,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..32].copy_from_slice(self.parent.as_bytes());
        out[32..40].copy_from_slice(&self.height.to_be_bytes());
        out[40..72].copy_from_slice(self.payload_commitment.as_bytes());
        out[72..80].copy_from_slice(&self.timestamp.to_be_bytes());
        out[80..112].copy_from_slice(&target_bytes(&self.target));
        out[112..120].copy_from_slice(&self.nonce.to_be_bytes());
        out
    }

    pub fn hash(&self, algo: HashAlgo) -> Hash256 {
        digest(algo, &self.encode())
    }
}

/// 32-byte big-endian encoding of a target. Panics above 2²⁵⁶−1.
pub fn target_bytes(target: &BigUint) -> [u8; 32] {
    let raw = target.to_bytes_be();
    assert!(raw.len() <= 32, "target exceeds 256 bits");
    let mut out = [0u8; 32];
    out[32 - raw.len()..].copy_from_slice(&raw);
    out
}

mod target_hex {
    use super::*;

    pub fn serialize<S: Serializer>(t: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(target_bytes(t)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        if bytes.len() != 32 {
            return Err(serde::de::Error::custom("target must be 32 bytes"));
        }
        Ok(BigUint::from_bytes_be(&bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub votes: Vec<Vote>,
    pub coinbase: Coinbase,
}

impl Block {
    pub fn hash(&self, algo: HashAlgo) -> Hash256 {
        self.header.hash(algo)
    }

    pub fn height(&self) -> Height {
        self.header.height
    }

    /// Ids of the stake entries this block creates.
    pub fn invoices(&self) -> impl Iterator<Item = StakeId> + '_ {
        self.transactions.iter().filter(|t| t.kind == TxKind::StakeSubmission).map(|t| t.id.into())
    }

    pub fn candidate_commitment(&self, algo: HashAlgo) -> Hash256 {
        candidate_commitment(algo, &self.header.parent, self.header.height, self.coinbase.miner, &self.transactions)
    }

    pub fn payload_commitment(&self, algo: HashAlgo) -> Hash256 {
        payload_commitment(algo, &self.candidate_commitment(algo), &self.votes, &self.coinbase)
    }

    pub fn approvals(&self) -> usize {
        self.votes.iter().filter(|v| v.approve).count()
    }
}

pub fn candidate_commitment(
    algo: HashAlgo,
    parent: &Hash256,
    height: Height,
    miner: AccountId,
    txs: &[Transaction],
) -> Hash256 {
    let mut buf = Vec::with_capacity(48 + txs.len() * 40);
    buf.extend_from_slice(parent.as_bytes());
    buf.extend_from_slice(&height.to_be_bytes());
    buf.extend_from_slice(&miner.0.to_be_bytes());
    buf.extend_from_slice(&(txs.len() as u32).to_be_bytes());
    for tx in txs {
        tx.encode_into(&mut buf);
    }
    digest(algo, &buf)
}

pub fn payload_commitment(algo: HashAlgo, candidate: &Hash256, votes: &[Vote], coinbase: &Coinbase) -> Hash256 {
    let mut buf = Vec::with_capacity(64 + votes.len() * 48);
    buf.extend_from_slice(candidate.as_bytes());
    buf.extend_from_slice(&(votes.len() as u32).to_be_bytes());
    for v in votes {
        v.encode_into(&mut buf);
    }
    buf.extend_from_slice(&coinbase.miner.0.to_be_bytes());
    buf.extend_from_slice(&coinbase.miner_amount.to_be_bytes());
    buf.extend_from_slice(&coinbase.per_voter.to_be_bytes());
    buf.extend_from_slice(&coinbase.dev_amount.to_be_bytes());
    digest(algo, &buf)
}
