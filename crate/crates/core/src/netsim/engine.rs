//! The event loop.
//!
//! Every published block lives in one public [`ChainIndex`]; each miner
//! additionally keeps the set of blocks that have reached it and mines on
//! the heaviest of those. A double-spending attacker mines into a private
//! clone of the index until it releases.
//!
//! Votes are collected when a block is found. Which selected entries vote
//! depends only on the parent block, the kind of block being built and the
//! owners' online draws for that parent, so every child of a parent sees
//! the same voters. When a tip cannot gather a quorum its miners look for a
//! sibling that can, or mine a new sibling.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Latency, MiningMode, NodeSpec, ScenarioConfig, ScenarioKind, Strategy};
use super::report::{mean, windows, AttackReport, BlockRow, Outcome, ScenarioReport, TraceEvent};
use crate::block::{
    candidate_commitment, payload_commitment, AccountId, Block, BlockHeader, Transaction, TxId, TxKind, Vote,
};
use crate::consensus::{ChainIndex, ChildContext, ConsensusError, ExtendOutcome, ReorgReport};
use crate::hashing::Hash256;
use crate::ledger::{Genesis, GenesisStake};
use crate::params::{Amount, ChainParams, Height, COIN};
use crate::pos::StakeEntry;
use crate::pow::{mine_real, sample_block_time, target_for};

pub const MERCHANT: AccountId = AccountId(0xFFFF_FF00);
pub const ATTACKER_WALLET: AccountId = AccountId(0xFFFF_FF01);

/// Transaction ids below this are reserved for genesis stakes.
const FIRST_TX_ID: u64 = 1_000_000_000;
const MAX_BLOCK_TXS: usize = 256;
/// Mempool entries are dropped once this deep in the best chain.
const MEMPOOL_KEEP: Height = 64;
const REAL_MAX_ATTEMPTS: u64 = 1 << 32;

pub(crate) fn coins(x: f64) -> Amount {
    (x * COIN as f64).round() as Amount
}

/// Which stakeholders are willing to vote on a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Class {
    /// A block extending the public chain.
    Honest,
    /// A block of the double-spender's private branch.
    Private,
    /// A block of the nothing-at-stake attacker's public fork.
    Fork,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Idle,
    Honest,
    Private,
    Fork,
}

enum EventKind {
    Found { miner: usize, gen: u64 },
    Deliver { node: usize, hash: Hash256 },
    Slot,
}

struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: the heap pops the earliest event, ties by insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone)]
struct Tree {
    index: ChainIndex,
    children: HashMap<Hash256, Vec<Hash256>>,
}

impl Tree {
    fn insert(&mut self, block: Block) -> Result<ExtendOutcome, ConsensusError> {
        let out = self.index.extend_chain(block)?;
        for h in &out.connected {
            let parent = self.index.parent_of(h).expect("connected blocks have parents");
            self.children.entry(parent).or_default().push(*h);
        }
        Ok(out)
    }
}

struct View {
    known: HashSet<Hash256>,
    waiting: HashMap<Hash256, Vec<Hash256>>,
    tip: Hash256,
}

struct Job {
    base: Hash256,
    class: Class,
    private: bool,
    /// Pre-mined block in real mode.
    block: Option<Block>,
}

struct Node {
    spec: NodeSpec,
    account: AccountId,
    delegate: Option<AccountId>,
    /// Entries an honest staker keeps bonded by restaking releases.
    tickets: u32,
    view: View,
    job: Option<Job>,
    gen: u64,
}

#[derive(Clone, Copy)]
struct Record {
    time: f64,
    producer: Option<usize>,
    votes: u32,
    selected: u32,
    live: u32,
}

struct PoolTx {
    tx: Transaction,
    applied_since: Option<Height>,
}

struct DoubleSpend {
    attacker: usize,
    started: bool,
    started_at: f64,
    released: bool,
    payment: Option<Transaction>,
    conflict: Option<Transaction>,
    private: Option<Tree>,
    private_blocks: HashSet<Hash256>,
    /// Most-work block the attacker has mined; the branch grows from here.
    own_tip: Option<Hash256>,
}

struct StripMine {
    attacker: usize,
    quit: Height,
    quitted: bool,
}

struct Nas {
    attacker: usize,
    started: bool,
    tip: Hash256,
    root: Option<Hash256>,
    blocks: HashSet<Hash256>,
}

pub struct SimOutput {
    pub report: ScenarioReport,
    pub rows: Vec<BlockRow>,
    pub trace: Vec<TraceEvent>,
    pub chain: ChainIndex,
}

pub(crate) struct Engine {
    cfg: ScenarioConfig,
    params: ChainParams,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    genesis: Genesis,
    genesis_target: BigUint,
    public: Tree,
    nodes: Vec<Node>,
    node_of: HashMap<AccountId, usize>,
    votable: HashMap<(Hash256, Class), bool>,
    records: HashMap<Hash256, Record>,
    mempool: BTreeMap<TxId, PoolTx>,
    next_tx: u64,
    ticket: Amount,
    fee: Amount,
    progress_height: Height,
    last_progress: f64,
    stall_secs: f64,
    outcome: Option<(Outcome, String)>,
    trace: Vec<TraceEvent>,
    report: AttackReport,
    reorg_depths: BTreeMap<usize, u64>,
    reorgs: u64,
    conservation_checks: u64,
    violations: Vec<String>,
    ds: Option<DoubleSpend>,
    strip: Option<StripMine>,
    nas: Option<Nas>,
    pool_offline_at: Option<Height>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in `[0, 1)`, fixed per (run seed, parent block, account).
fn online_draw(seed: u64, parent: &Hash256, account: AccountId) -> f64 {
    let p = u64::from_be_bytes(parent.0[..8].try_into().expect("8 bytes"));
    let x = splitmix(splitmix(seed ^ p) ^ account.0 as u64);
    (x >> 11) as f64 / (1u64 << 53) as f64
}

impl Engine {
    pub(crate) fn new(cfg: ScenarioConfig, nodes: Vec<NodeSpec>) -> Result<Self, super::ConfigError> {
        let params = cfg.chain_params()?;
        let ticket = coins(cfg.ticket_size);
        let fee = coins(cfg.staking_fee);

        let mut genesis = Genesis::default();
        let mut next_stake = 1u64;
        let mut node_of = HashMap::new();
        for (i, spec) in nodes.iter().enumerate() {
            let account = AccountId(i as u32 + 1);
            node_of.insert(account, i);
            if spec.balance > 0.0 {
                genesis.allocations.push((account, coins(spec.balance)));
            }
        }
        let delegate_of = |spec: &NodeSpec| {
            spec.delegate.as_ref().map(|d| {
                let j = nodes.iter().position(|n| &n.id == d).expect("validated delegate");
                AccountId(j as u32 + 1)
            })
        };
        for (i, spec) in nodes.iter().enumerate() {
            let tickets = (spec.stake / cfg.ticket_size).round() as u64;
            for _ in 0..tickets {
                genesis.stakes.push(GenesisStake {
                    id: next_stake,
                    owner: AccountId(i as u32 + 1),
                    amount: ticket,
                    delegate: delegate_of(spec),
                });
                next_stake += 1;
            }
        }

        let honest_hash: f64 = nodes.iter().filter(|n| n.miner && !n.adversarial).map(|n| n.hashpower).sum();
        let any_hash: f64 = nodes.iter().filter(|n| n.miner).map(|n| n.hashpower).sum();
        let hp = if honest_hash > 0.0 { honest_hash } else { any_hash.max(1.0) };
        let genesis_target = target_for(hp, params.target_block_time as f64);
        let check_pow = cfg.mining == MiningMode::Real;
        let index = ChainIndex::new(params.clone(), &genesis, genesis_target.clone(), 0, check_pow)?;
        let g = index.genesis();

        let nodes: Vec<Node> = nodes
            .iter()
            .enumerate()
            .map(|(i, spec)| Node {
                account: AccountId(i as u32 + 1),
                delegate: delegate_of(spec),
                tickets: (spec.stake / cfg.ticket_size).round() as u32,
                view: View { known: HashSet::from([g]), waiting: HashMap::new(), tip: g },
                job: None,
                gen: 0,
                spec: spec.clone(),
            })
            .collect();

        let adversary = |s: Strategy| nodes.iter().position(|n| n.spec.adversarial && n.spec.strategy == s);
        let ds = adversary(Strategy::PrivateForkDoubleSpend).map(|attacker| DoubleSpend {
            attacker,
            started: false,
            started_at: 0.0,
            released: false,
            payment: None,
            conflict: None,
            private: None,
            private_blocks: HashSet::new(),
            own_tip: None,
        });
        let strip = adversary(Strategy::StripMine).map(|attacker| StripMine {
            attacker,
            quit: cfg.attack.quit_height.unwrap_or(params.retarget_interval),
            quitted: false,
        });
        let nas = adversary(Strategy::NothingAtStake).map(|attacker| Nas {
            attacker,
            started: false,
            tip: g,
            root: None,
            blocks: HashSet::new(),
        });
        let pool_offline_at = (cfg.scenario == ScenarioKind::Stakepool).then_some(cfg.attack.offline_at_height);

        let mut records = HashMap::new();
        records.insert(g, Record { time: 0.0, producer: None, votes: 0, selected: 0, live: 0 });

        Ok(Engine {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            stall_secs: (cfg.stall_horizon_blocks * params.target_block_time) as f64,
            public: Tree { index, children: HashMap::new() },
            params,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            genesis,
            genesis_target,
            nodes,
            node_of,
            votable: HashMap::new(),
            records,
            mempool: BTreeMap::new(),
            next_tx: FIRST_TX_ID,
            ticket,
            fee,
            progress_height: 0,
            last_progress: 0.0,
            outcome: None,
            trace: Vec::new(),
            report: AttackReport::default(),
            reorg_depths: BTreeMap::new(),
            reorgs: 0,
            conservation_checks: 0,
            violations: Vec::new(),
            ds,
            strip,
            nas,
            pool_offline_at,
            cfg,
        })
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.queue.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn trace(&mut self, ev: TraceEvent) {
        if self.cfg.trace {
            self.trace.push(ev);
        }
    }

    fn finish(&mut self, outcome: Outcome, reason: impl Into<String>) {
        if self.outcome.is_none() {
            let reason = reason.into();
            self.trace(TraceEvent::End { t: self.now, outcome, reason: reason.clone() });
            self.outcome = Some((outcome, reason));
        }
    }

    fn slot_mode(&self) -> bool {
        self.cfg.attack.pure_pos
    }

    pub(crate) fn run(mut self) -> SimOutput {
        self.on_tip_change(None);
        if self.slot_mode() {
            self.push(self.params.target_block_time as f64, EventKind::Slot);
        } else {
            for m in 0..self.nodes.len() {
                self.refresh_job(m);
            }
        }
        while self.outcome.is_none() {
            let Some(ev) = self.queue.pop() else {
                self.finish(Outcome::Stalled, "no node can extend any chain");
                break;
            };
            if ev.time - self.last_progress > self.stall_secs {
                self.now = self.last_progress + self.stall_secs;
                self.finish(Outcome::Stalled, "no best-chain progress within the stall horizon");
                break;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::Found { miner, gen } => self.on_found(miner, gen),
                EventKind::Deliver { node, hash } => self.deliver(node, hash),
                EventKind::Slot => self.on_slot(),
            }
        }
        self.finalize()
    }

    // ---- voting -------------------------------------------------------

    fn is_attacker(&self, i: usize, s: Strategy) -> bool {
        let n = &self.nodes[i].spec;
        n.adversarial && n.strategy == s
    }

    fn ds_active(&self) -> bool {
        self.ds.as_ref().is_some_and(|d| d.started && !d.released)
    }

    fn willing(&self, account: AccountId, class: Class, parent: &Hash256, height: Height) -> bool {
        let Some(&i) = self.node_of.get(&account) else { return false };
        let spec = &self.nodes[i].spec;
        let wants = match class {
            Class::Honest => !(self.ds_active() && self.is_attacker(i, Strategy::PrivateForkDoubleSpend)),
            Class::Private => self.is_attacker(i, Strategy::PrivateForkDoubleSpend),
            Class::Fork => spec.greedy || self.is_attacker(i, Strategy::NothingAtStake),
        };
        if !wants {
            return false;
        }
        if spec.stakepool && self.pool_offline_at.is_some_and(|h| height >= h) {
            return false;
        }
        spec.online >= 1.0 || online_draw(self.cfg.seed, parent, account) < spec.online
    }

    fn voter_for(&self, entry: &StakeEntry, class: Class, ctx: &ChildContext) -> Option<AccountId> {
        if self.willing(entry.owner, class, &ctx.parent, ctx.height) {
            return Some(entry.owner);
        }
        entry.delegate.filter(|d| self.willing(*d, class, &ctx.parent, ctx.height))
    }

    fn voters(&self, ctx: &ChildContext, class: Class) -> Vec<(crate::block::StakeId, AccountId)> {
        ctx.selected()
            .iter()
            .filter_map(|id| {
                let entry = ctx.ledger.pool.get(*id)?;
                Some((*id, self.voter_for(entry, class, ctx)?))
            })
            .collect()
    }

    fn tree(&self, private: bool) -> &Tree {
        if private {
            self.ds.as_ref().and_then(|d| d.private.as_ref()).expect("private branch exists")
        } else {
            &self.public
        }
    }

    fn is_votable(&mut self, private: bool, parent: Hash256, class: Class) -> bool {
        if let Some(v) = self.votable.get(&(parent, class)) {
            return *v;
        }
        let Some(ctx) = self.tree(private).index.child_context(&parent) else { return false };
        let v = self.voters(&ctx, class).len() >= self.params.n_quorum as usize;
        self.votable.insert((parent, class), v);
        v
    }

    // ---- mining -------------------------------------------------------

    fn mode(&self, m: usize) -> Mode {
        let spec = &self.nodes[m].spec;
        if !spec.miner || (!self.slot_mode() && spec.hashpower <= 0.0) {
            return Mode::Idle;
        }
        if let Some(ds) = &self.ds {
            if ds.attacker == m && ds.started {
                return if ds.released { Mode::Idle } else { Mode::Private };
            }
        }
        if let Some(s) = &self.strip {
            if s.attacker == m && s.quitted {
                return Mode::Idle;
            }
        }
        if let Some(nas) = &self.nas {
            if nas.attacker == m {
                return if nas.started { Mode::Fork } else { Mode::Idle };
            }
        }
        Mode::Honest
    }

    /// Parent to build on: the tip if it can gather votes, else the
    /// most-work known block that can, searched in the subtree of the
    /// ancestor `max_back` levels below the tip.
    fn base_from(
        &mut self,
        private: bool,
        tip: Hash256,
        class: Class,
        known: &dyn Fn(&Self, &Hash256) -> bool,
        max_back: usize,
    ) -> Option<Hash256> {
        if self.is_votable(private, tip, class) {
            return Some(tip);
        }
        let mut root = tip;
        let mut path = vec![tip];
        for _ in 0..max_back.max(1) {
            match self.tree(private).index.parent_of(&root) {
                Some(p) => root = p,
                None => break,
            }
            path.push(root);
        }
        let mut best: Option<(BigUint, u64, Hash256)> = None;
        let mut stack = vec![root];
        while let Some(h) = stack.pop() {
            let tree = self.tree(private);
            if let Some(kids) = tree.children.get(&h) {
                stack.extend(kids.iter().filter(|k| path.contains(k) || known(self, k)).copied());
            }
            if h == tip || !self.is_votable(private, h, class) {
                continue;
            }
            let tree = self.tree(private);
            let work = tree.index.work_of(&h).expect("indexed").clone();
            let seq = tree.index.seq_of(&h).unwrap_or(u64::MAX);
            let better = match &best {
                None => true,
                Some((w, q, _)) => work > *w || (work == *w && seq < *q),
            };
            if better {
                best = Some((work, seq, h));
            }
        }
        best.map(|(_, _, h)| h)
    }

    fn choose_base(&mut self, m: usize) -> Option<(Hash256, Class, bool)> {
        let deficit = self.cfg.attack.max_deficit as usize;
        match self.mode(m) {
            Mode::Idle => None,
            Mode::Honest => {
                let tip = self.nodes[m].view.tip;
                let known = |s: &Self, h: &Hash256| s.nodes[m].view.known.contains(h);
                let base = self.base_from(false, tip, Class::Honest, &known, deficit)?;
                Some((base, Class::Honest, false))
            }
            Mode::Private => {
                let ds = self.ds.as_ref().expect("private mode");
                let tip = ds.own_tip.unwrap_or_else(|| ds.private.as_ref().expect("started").index.best_tip());
                let back = if ds.private_blocks.is_empty() { deficit } else { 1 };
                let known = |s: &Self, h: &Hash256| s.ds.as_ref().is_some_and(|d| d.private_blocks.contains(h));
                let base = self.base_from(true, tip, Class::Private, &known, back)?;
                Some((base, Class::Private, true))
            }
            Mode::Fork => {
                let nas = self.nas.as_ref().expect("fork mode");
                let back = if nas.root.is_none() { deficit } else { 1 };
                let tip = nas.tip;
                let known = |s: &Self, h: &Hash256| s.nas.as_ref().is_some_and(|n| n.blocks.contains(h));
                let base = self.base_from(false, tip, Class::Fork, &known, back)?;
                Some((base, Class::Fork, false))
            }
        }
    }

    fn refresh_job(&mut self, m: usize) {
        if self.slot_mode() || self.outcome.is_some() {
            return;
        }
        let choice = self.choose_base(m);
        if let (Some(job), Some((base, class, private))) = (&self.nodes[m].job, choice) {
            if job.base == base && job.class == class && job.private == private {
                return;
            }
        }
        self.nodes[m].gen += 1;
        self.nodes[m].job = None;
        let Some((base, class, private)) = choice else { return };
        let hashpower = self.nodes[m].spec.hashpower;
        let (dt, block) = match self.cfg.mining {
            MiningMode::Stochastic => {
                let ctx = self.tree(private).index.child_context(&base).expect("base indexed");
                (sample_block_time(hashpower, &ctx.target, &mut self.rng), None)
            }
            MiningMode::Real => {
                let mut block = self.build_block(m, base, class, private);
                let start: u64 = self.rng.random();
                match mine_real(&block.header, self.params.hash_algo, start, REAL_MAX_ATTEMPTS) {
                    Some((nonce, _)) => {
                        block.header.nonce = nonce;
                        ((nonce.wrapping_sub(start) + 1) as f64 / hashpower, Some(block))
                    }
                    None => return,
                }
            }
        };
        self.nodes[m].job = Some(Job { base, class, private, block });
        let gen = self.nodes[m].gen;
        self.push(self.now + dt, EventKind::Found { miner: m, gen });
    }

    fn build_block(&mut self, m: usize, base: Hash256, class: Class, private: bool) -> Block {
        let ctx = self.tree(private).index.child_context(&base).expect("base indexed");
        let miner = self.nodes[m].account;
        let algo = self.params.hash_algo;
        let height = ctx.height;

        let mut scratch = ctx.ledger.clone();
        let mut txs = Vec::new();
        let candidates: Vec<&Transaction> = if private {
            self.ds.as_ref().and_then(|d| d.conflict.as_ref()).into_iter().collect()
        } else {
            self.mempool.values().map(|p| &p.tx).collect()
        };
        for tx in candidates {
            if txs.len() >= MAX_BLOCK_TXS {
                break;
            }
            if scratch.apply_transaction(tx, miner, height, &self.params).is_ok() {
                txs.push(tx.clone());
            }
        }

        let candidate = candidate_commitment(algo, &base, height, miner, &txs);
        let votes: Vec<Vote> = self
            .voters(&ctx, class)
            .into_iter()
            .map(|(stake, voter)| Vote { stake, voter, candidate, approve: true })
            .collect();
        let coinbase = ctx.coinbase(miner, votes.len() as u32, &self.params);
        let header = BlockHeader {
            parent: base,
            height,
            payload_commitment: payload_commitment(algo, &candidate, &votes, &coinbase),
            timestamp: self.now as u64,
            target: ctx.target.clone(),
            // stochastic headers are never hashed for work; a random nonce
            // keeps same-second siblings distinct
            nonce: if self.cfg.mining == MiningMode::Stochastic { self.rng.random() } else { 0 },
        };
        let block = Block { header, transactions: txs, votes, coinbase };
        let hash = block.hash(algo);
        self.records.insert(
            hash,
            Record {
                time: self.now,
                producer: Some(m),
                votes: block.approvals() as u32,
                selected: ctx.selected().len() as u32,
                live: ctx.ledger.pool.live_count() as u32,
            },
        );
        block
    }

    fn on_found(&mut self, m: usize, gen: u64) {
        if self.nodes[m].gen != gen {
            return;
        }
        let job = self.nodes[m].job.take().expect("current job");
        if !self.is_votable(job.private, job.base, job.class) {
            self.refresh_job(m);
            return;
        }
        let block = match job.block {
            Some(b) => {
                // real mode: the template was fixed when mining began
                let hash = b.hash(self.params.hash_algo);
                if let Some(r) = self.records.get_mut(&hash) {
                    r.time = self.now;
                }
                b
            }
            None => self.build_block(m, job.base, job.class, job.private),
        };
        if job.private {
            self.add_private(m, block);
        } else {
            self.publish(block, Some(m));
        }
        self.refresh_job(m);
    }

    fn on_slot(&mut self) {
        let leaders: Vec<(usize, f64)> = (0..self.nodes.len())
            .filter(|&i| self.mode(i) == Mode::Honest && !self.nodes[i].spec.adversarial)
            .map(|i| (i, self.nodes[i].spec.hashpower))
            .collect();
        let total: f64 = leaders.iter().map(|l| l.1).sum();
        if total > 0.0 {
            let mut u = self.rng.random::<f64>() * total;
            let leader = leaders.iter().find(|l| {
                u -= l.1;
                u < 0.0
            });
            let leader = leader.unwrap_or(leaders.last().expect("non-empty")).0;
            self.produce_now(leader);
        }
        for i in 0..self.nodes.len() {
            if self.outcome.is_none() && self.nodes[i].spec.adversarial && self.mode(i) != Mode::Idle {
                self.produce_now(i);
            }
        }
        self.push(self.now + self.params.target_block_time as f64, EventKind::Slot);
    }

    fn produce_now(&mut self, m: usize) {
        if let Some((base, class, private)) = self.choose_base(m) {
            let block = self.build_block(m, base, class, private);
            if private {
                self.add_private(m, block);
            } else {
                self.publish(block, Some(m));
            }
        }
    }

    // ---- propagation --------------------------------------------------

    fn publish(&mut self, block: Block, producer: Option<usize>) {
        let algo = self.params.hash_algo;
        let hash = block.hash(algo);
        let parent = block.header.parent;
        let height = block.height();
        let votes = block.approvals() as u32;
        let non_attacker_votes = |s: &Self, b: &Block, attacker: usize| {
            b.votes.iter().filter(|v| v.approve && v.voter != s.nodes[attacker].account).count() as u64
        };
        let fork_votes = self
            .nas
            .as_ref()
            .filter(|n| producer == Some(n.attacker))
            .map(|n| non_attacker_votes(self, &block, n.attacker));
        let out = match self.public.insert(block) {
            Ok(out) => out,
            Err(e) => {
                self.violations.push(format!("height {height}: produced block rejected: {e}"));
                return;
            }
        };
        self.conservation_checks += out.connected.len() as u64;
        self.records.entry(hash).or_insert(Record { time: self.now, producer, votes, selected: 0, live: 0 });
        let private = self.ds.as_ref().is_some_and(|d| d.private_blocks.contains(&hash));
        if !private {
            let node = producer.map_or_else(|| "-".to_string(), |p| self.nodes[p].spec.id.clone());
            self.trace(TraceEvent::Found { t: self.now, node, height, hash, parent, votes, private: false });
        }
        if let Some(fv) = fork_votes {
            self.on_fork_block(hash, parent, fv);
        }
        if out.tip_changed {
            self.on_tip_change(out.reorg);
        }
        for j in 0..self.nodes.len() {
            if !self.nodes[j].spec.miner {
                continue;
            }
            let delay = if Some(j) == producer { 0.0 } else { self.latency() };
            if delay <= 0.0 {
                self.deliver(j, hash);
            } else {
                self.push(self.now + delay, EventKind::Deliver { node: j, hash });
            }
        }
    }

    fn latency(&mut self) -> f64 {
        match self.cfg.latency {
            Latency::Fixed { seconds } => seconds,
            Latency::Uniform { min, max } if max > min => self.rng.random_range(min..max),
            Latency::Uniform { min, .. } => min,
        }
    }

    fn deliver(&mut self, j: usize, hash: Hash256) {
        let view = &mut self.nodes[j].view;
        if view.known.contains(&hash) {
            return;
        }
        let parent = self.public.index.parent_of(&hash).expect("published blocks are indexed");
        if !view.known.contains(&parent) {
            view.waiting.entry(parent).or_default().push(hash);
            return;
        }
        let mut stack = vec![hash];
        while let Some(x) = stack.pop() {
            view.known.insert(x);
            let work = self.public.index.work_of(&x).expect("indexed");
            if work > self.public.index.work_of(&view.tip).expect("indexed") {
                view.tip = x;
            }
            if let Some(w) = view.waiting.remove(&x) {
                stack.extend(w);
            }
        }
        self.refresh_job(j);
    }

    fn on_tip_change(&mut self, reorg: Option<ReorgReport>) {
        let best = self.public.index.best_tip();
        let height = self.public.index.best_height();
        if height > self.progress_height {
            self.progress_height = height;
            self.last_progress = self.now;
        }
        if let Some(r) = reorg {
            self.reorgs += 1;
            *self.reorg_depths.entry(r.depth()).or_default() += 1;
            self.trace(TraceEvent::Reorg { t: self.now, depth: r.depth(), old_tip: r.old_tip, new_tip: r.new_tip });
        }

        let ledger = self.public.index.best_ledger();
        self.conservation_checks += 1;
        if let Err(e) = ledger.check_conservation() {
            self.violations.push(format!("height {height}: {e}"));
        }
        if height > 0 {
            let approvals = self.public.index.block(&best).expect("indexed").approvals();
            if approvals < self.params.n_quorum as usize {
                self.violations.push(format!("height {height}: best tip has {approvals} approvals"));
            }
        }

        self.update_mempool(&ledger, height);
        if self.cfg.restake {
            self.restake(&ledger);
        }

        self.check_double_spend();
        self.check_strip_mine(height);
        self.check_nas();

        if self.outcome.is_none() && height >= self.cfg.blocks {
            match self.cfg.scenario {
                ScenarioKind::DoubleSpend | ScenarioKind::NothingAtStake => {
                    self.finish(Outcome::Failed, "run length reached before the attack resolved")
                }
                _ => self.finish(Outcome::Completed, "run length reached"),
            }
        }
    }

    fn update_mempool(&mut self, ledger: &crate::ledger::LedgerState, height: Height) {
        self.mempool.retain(|id, p| {
            if ledger.is_applied(*id) {
                let since = *p.applied_since.get_or_insert(height);
                height < since + MEMPOOL_KEEP
            } else {
                p.applied_since = None;
                true
            }
        });
    }

    /// Honest stakers top their bonded entries back up to their starting
    /// count as old ones are released.
    fn restake(&mut self, ledger: &crate::ledger::LedgerState) {
        let mut pending: BTreeMap<AccountId, (Amount, u32)> = BTreeMap::new();
        for p in self.mempool.values().filter(|p| p.applied_since.is_none()) {
            let e = pending.entry(p.tx.from).or_default();
            e.0 += p.tx.debit();
            e.1 += u32::from(p.tx.kind == TxKind::StakeSubmission);
        }
        let cost = self.ticket + self.fee;
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            if !n.spec.staker || n.spec.adversarial {
                continue;
            }
            let (account, delegate) = (n.account, n.delegate);
            let (debits, queued) = pending.get(&account).copied().unwrap_or_default();
            let mut want = n.tickets.saturating_sub(ledger.pool.owned_count(account) + queued);
            let mut avail = ledger.balance(account).saturating_sub(debits);
            while want > 0 && avail >= cost {
                let tx = Transaction::stake(self.next_tx, account, self.ticket, self.fee, delegate);
                self.next_tx += 1;
                self.mempool.insert(tx.id, PoolTx { tx, applied_since: None });
                avail -= cost;
                want -= 1;
            }
        }
    }

    // ---- double spend -------------------------------------------------

    fn add_private(&mut self, m: usize, block: Block) {
        let hash = block.hash(self.params.hash_algo);
        let (height, parent, votes) = (block.height(), block.header.parent, block.approvals() as u32);
        let ds = self.ds.as_mut().expect("private mining");
        ds.private_blocks.insert(hash);
        let result = ds.private.as_mut().expect("started").insert(block);
        if let Err(e) = result {
            self.violations.push(format!("private block rejected: {e}"));
            return;
        }
        self.report.private_blocks += 1;
        let index = &ds.private.as_ref().expect("started").index;
        if ds.own_tip.is_none_or(|t| index.work_of(&hash) > index.work_of(&t)) {
            ds.own_tip = Some(hash);
        }
        let node = self.nodes[m].spec.id.clone();
        self.trace(TraceEvent::Found { t: self.now, node, height, hash, parent, votes, private: true });
        self.check_double_spend();
    }

    fn start_double_spend(&mut self) {
        let ds = self.ds.as_mut().expect("double-spend attacker");
        let from = self.nodes[ds.attacker].account;
        let amount = coins(self.cfg.attack.amount);
        let id = self.next_tx;
        self.next_tx += 1;
        let payment = Transaction::transfer(id, from, MERCHANT, amount, 0);
        let conflict = Transaction::transfer(id, from, ATTACKER_WALLET, amount, 0);
        self.mempool.insert(payment.id, PoolTx { tx: payment.clone(), applied_since: None });
        ds.payment = Some(payment);
        ds.conflict = Some(conflict);
        ds.private = Some(self.public.clone());
        ds.started = true;
        ds.started_at = self.now;
        self.votable.clear();
        let height = self.public.index.best_height();
        self.report.start_height = Some(height);
        self.trace(TraceEvent::Attack { t: self.now, step: "payment submitted; private mining begins".into(), height });
        for m in 0..self.nodes.len() {
            self.refresh_job(m);
        }
    }

    fn check_double_spend(&mut self) {
        let Some(ds) = &self.ds else { return };
        if ds.released || self.outcome.is_some() {
            return;
        }
        let idx = &self.public.index;
        let best_height = idx.best_height();
        if !ds.started {
            if best_height >= self.cfg.attack.warmup_blocks {
                self.start_double_spend();
            }
            return;
        }
        let start = self.report.start_height.expect("started");
        let payment = ds.payment.as_ref().expect("started");
        // blocks stamped before the payment existed cannot hold it
        let since = ds.started_at as u64;
        let included = idx
            .ancestors(&idx.best_tip())
            .take_while(|h| idx.timestamp_of(h).is_some_and(|t| t >= since))
            .find(|h| idx.block(h).is_some_and(|b| b.transactions.iter().any(|t| t == payment)))
            .and_then(|h| idx.height_of(&h));
        self.report.payment_height = included.or(self.report.payment_height);
        let ships = self.report.shipped_height.is_none()
            && included.is_some_and(|ph| best_height + 1 - ph >= self.cfg.confirmations);

        let private = ds.private.as_ref().expect("started");
        let ptip = private.index.best_tip();
        let pwork = private.index.work_of(&ptip).expect("indexed");
        let ahead = pwork > idx.work_of(&idx.best_tip()).expect("indexed");
        let own = ds.own_tip.unwrap_or(ptip);
        let deficit = best_height.saturating_sub(private.index.height_of(&own).expect("indexed"));
        self.report.max_deficit = self.report.max_deficit.max(deficit);
        if ships {
            self.report.shipped_height = Some(best_height);
            self.trace(TraceEvent::Attack { t: self.now, step: "merchant ships".into(), height: best_height });
        }
        if self.report.shipped_height.is_some() && ahead {
            self.release();
        } else if deficit > self.cfg.attack.max_deficit {
            self.finish(Outcome::Failed, "attacker fell too far behind");
        } else if best_height >= start + self.cfg.attack.horizon_blocks {
            self.finish(Outcome::Failed, "attack horizon reached");
        }
    }

    fn release(&mut self) {
        let ds = self.ds.as_mut().expect("double spend");
        ds.released = true;
        let private = ds.private.take().expect("started");
        let attacker = ds.attacker;
        let mut chain: Vec<Hash256> =
            private.index.ancestors(&private.index.best_tip()).take_while(|h| !self.public.index.contains(h)).collect();
        chain.reverse();
        self.report.release_height = Some(self.public.index.best_height());
        self.trace(TraceEvent::Attack {
            t: self.now,
            step: format!("private branch of {} blocks released", chain.len()),
            height: self.public.index.best_height(),
        });
        for h in chain {
            let block = private.index.block(&h).expect("indexed").clone();
            self.publish(block, Some(attacker));
        }
        let ledger = self.public.index.best_ledger();
        if ledger.balance(MERCHANT) == 0 && ledger.balance(ATTACKER_WALLET) > 0 {
            self.finish(Outcome::Succeeded, "payment reversed after the merchant shipped");
        } else {
            self.finish(Outcome::Failed, "released branch did not displace the payment");
        }
        self.nodes[attacker].job = None;
        self.nodes[attacker].gen += 1;
    }

    // ---- strip mining -------------------------------------------------

    fn check_strip_mine(&mut self, height: Height) {
        let Some(s) = &mut self.strip else { return };
        if s.quitted || height + 1 < s.quit {
            return;
        }
        s.quitted = true;
        let (quit, attacker) = (s.quit, s.attacker);
        self.report.quit_height = Some(quit);
        self.nodes[attacker].job = None;
        self.nodes[attacker].gen += 1;
        self.trace(TraceEvent::Attack { t: self.now, step: "strip miner quits".into(), height });
    }

    // ---- nothing at stake ---------------------------------------------

    fn check_nas(&mut self) {
        let Some(nas) = &self.nas else { return };
        if self.outcome.is_some() {
            return;
        }
        let idx = &self.public.index;
        let best_height = idx.best_height();
        if !nas.started {
            if best_height >= self.cfg.attack.fork_height.max(1) {
                let tip = idx.parent_of(&idx.best_tip()).expect("height at least one");
                let attacker = nas.attacker;
                let nas = self.nas.as_mut().expect("checked");
                nas.started = true;
                nas.tip = tip;
                self.report.start_height = Some(best_height);
                self.trace(TraceEvent::Attack {
                    t: self.now,
                    step: "fork maintenance begins".into(),
                    height: best_height,
                });
                self.refresh_job(attacker);
            }
            return;
        }
        let tip_height = idx.height_of(&nas.tip).expect("indexed");
        let deficit = best_height.saturating_sub(tip_height);
        self.report.max_deficit = self.report.max_deficit.max(deficit);
        let start = self.report.start_height.expect("started");
        if deficit > self.cfg.attack.max_deficit {
            self.finish(Outcome::Failed, "fork fell too far behind");
        } else if best_height >= start + self.cfg.attack.horizon_blocks {
            self.finish(Outcome::Failed, "fork horizon reached");
        }
    }

    fn on_fork_block(&mut self, hash: Hash256, parent: Hash256, other_votes: u64) {
        let height = self.public.index.height_of(&hash).expect("indexed");
        let nas = self.nas.as_mut().expect("fork block");
        nas.blocks.insert(hash);
        let root = *nas.root.get_or_insert(parent);
        let tip_height = self.public.index.height_of(&nas.tip).expect("indexed");
        if height > tip_height || !nas.blocks.contains(&nas.tip) {
            nas.tip = hash;
        }
        let root_height = self.public.index.height_of(&root).expect("indexed");
        let depth = self.public.index.height_of(&nas.tip).expect("indexed") - root_height;
        self.report.fork_point = Some(root_height);
        self.report.fork_blocks += 1;
        self.report.multi_fork_votes += other_votes;
        self.report.fork_max_depth = self.report.fork_max_depth.max(depth);
        if depth >= self.cfg.confirmations {
            self.finish(Outcome::Succeeded, "fork reached confirmation depth");
        }
    }

    // ---- report -------------------------------------------------------

    fn finalize(mut self) -> SimOutput {
        let (outcome, reason) = self.outcome.clone().unwrap_or((Outcome::Stalled, "queue exhausted".into()));
        let idx = &self.public.index;
        let chain = idx.best_chain();
        let interval = self.params.retarget_interval;
        let mut rows = Vec::with_capacity(chain.len().saturating_sub(1));
        let mut per_node: BTreeMap<String, u64> = BTreeMap::new();
        for w in chain.windows(2) {
            let prev = self.records[&w[0]];
            let r = self.records[&w[1]];
            let missed = r.selected.saturating_sub(r.votes);
            rows.push(BlockRow {
                height: idx.height_of(&w[1]).expect("indexed"),
                time: r.time,
                interval: r.time - prev.time,
                votes: r.votes,
                missed_votes: missed,
                participation: if r.selected == 0 { 0.0 } else { r.votes as f64 / r.selected as f64 },
                live_entries: r.live,
            });
            if let Some(p) = r.producer {
                *per_node.entry(self.nodes[p].spec.id.clone()).or_default() += 1;
            }
        }
        let missed: u64 = rows.iter().map(|r| r.missed_votes as u64).sum();
        let selected: u64 = rows.iter().map(|r| (r.votes + r.missed_votes) as u64).sum();
        let rate = |rs: &mut dyn Iterator<Item = &BlockRow>| {
            let (mut m, mut s) = (0u64, 0u64);
            for r in rs {
                m += r.missed_votes as u64;
                s += (r.votes + r.missed_votes) as u64;
            }
            (s > 0).then(|| m as f64 / s as f64)
        };

        if let Some(q) = self.report.quit_height {
            self.report.post_quit_mean_interval =
                mean(rows.iter().filter(|r| r.height >= q && r.height < q + interval).map(|r| r.interval));
        }
        if let Some(h) = self.pool_offline_at {
            self.report.missed_rate_before = rate(&mut rows.iter().filter(|r| r.height < h));
            self.report.missed_rate_after = rate(&mut rows.iter().filter(|r| r.height >= h));
        }

        let revalidated = self.cfg.revalidate && self.revalidate(&chain);
        let stall_gap = 10.0 * self.params.target_block_time as f64;
        let report = ScenarioReport {
            scenario: self.cfg.scenario.name().to_string(),
            seed: self.cfg.seed,
            outcome,
            reason,
            best_height: idx.best_height(),
            sim_seconds: self.now,
            blocks_connected: (idx.len() - 1) as u64,
            blocks_per_node: per_node,
            reorgs: self.reorgs,
            reorg_depths: self.reorg_depths.clone(),
            windows: windows(&rows, interval),
            mean_interval: mean(rows.iter().map(|r| r.interval)),
            mean_interval_after_first_retarget: mean(rows.iter().filter(|r| r.height >= interval).map(|r| r.interval)),
            missed_votes: missed,
            selected_votes: selected,
            missed_vote_rate: if selected == 0 { 0.0 } else { missed as f64 / selected as f64 },
            stall_episodes: rows.iter().filter(|r| r.interval > stall_gap).count() as u64,
            conservation_checks: self.conservation_checks,
            invariant_violations: self.violations.clone(),
            best_chain_revalidated: revalidated,
            attack: self.report.clone(),
        };
        SimOutput { report, rows, trace: self.trace, chain: self.public.index }
    }

    /// Replays the best chain into a fresh index.
    fn revalidate(&self, chain: &[Hash256]) -> bool {
        let check_pow = self.public.index.checks_pow();
        let Ok(mut fresh) =
            ChainIndex::new(self.params.clone(), &self.genesis, self.genesis_target.clone(), 0, check_pow)
        else {
            return false;
        };
        if fresh.genesis() != chain[0] {
            return false;
        }
        for h in &chain[1..] {
            let block = self.public.index.block(h).expect("indexed").clone();
            if fresh.extend_chain(block).is_err() {
                return false;
            }
        }
        fresh.best_tip() == *chain.last().expect("non-empty")
    }
}
