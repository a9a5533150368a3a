//! Scenario configuration, loaded from TOML.
//!
//! ```toml
//! scenario = "double-spend"
//! preset = "PROJECT_PAI"
//! seed = 7
//! blocks = 400
//! confirmations = 6
//!
//! [latency]
//! kind = "uniform"
//! min = 0.5
//! max = 2.0
//!
//! [params]
//! retarget_interval = 144
//!
//! [attack]
//! stake_share = 0.4
//! hash_multiplier = 2.0
//! ```
//!
//! When `nodes` is empty a node list is generated from `[attack]` and
//! `[network]`; otherwise the listed nodes are used as given.

use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::HashAlgo;
use crate::params::{ChainParams, ParamsError, Preset};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid chain parameters: {0}")]
    Params(#[from] ParamsError),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("genesis: {0}")]
    Genesis(#[from] crate::consensus::ConsensusError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Honest,
    DoubleSpend,
    StripMine,
    NothingAtStake,
    Stakepool,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Honest => "honest",
            ScenarioKind::DoubleSpend => "double-spend",
            ScenarioKind::StripMine => "strip-mine",
            ScenarioKind::NothingAtStake => "nas",
            ScenarioKind::Stakepool => "stakepool",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(ScenarioKind::Honest),
            "double-spend" => Ok(ScenarioKind::DoubleSpend),
            "strip-mine" => Ok(ScenarioKind::StripMine),
            "nas" | "nothing-at-stake" => Ok(ScenarioKind::NothingAtStake),
            "stakepool" => Ok(ScenarioKind::Stakepool),
            _ => Err(format!("unknown scenario `{s}` (expected honest, double-spend, strip-mine, nas or stakepool)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Honest,
    PrivateForkDoubleSpend,
    StripMine,
    NothingAtStake,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub miner: bool,
    #[serde(default)]
    pub staker: bool,
    #[serde(default)]
    pub stakepool: bool,
    /// Hashes per second.
    #[serde(default)]
    pub hashpower: f64,
    /// Coins held as stake entries at genesis.
    #[serde(default)]
    pub stake: f64,
    /// Spendable coins at genesis.
    #[serde(default)]
    pub balance: f64,
    /// Probability of being reachable when a vote is due.
    #[serde(default = "one")]
    pub online: f64,
    #[serde(default)]
    pub adversarial: bool,
    /// Votes on every fork it sees, not just the best chain.
    #[serde(default)]
    pub greedy: bool,
    #[serde(default = "honest")]
    pub strategy: Strategy,
    /// Stakepool node that votes for this staker's entries.
    #[serde(default)]
    pub delegate: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn honest() -> Strategy {
    Strategy::Honest
}

impl NodeSpec {
    pub fn new(id: impl Into<String>) -> Self {
        NodeSpec {
            id: id.into(),
            miner: false,
            staker: false,
            stakepool: false,
            hashpower: 0.0,
            stake: 0.0,
            balance: 0.0,
            online: 1.0,
            adversarial: false,
            greedy: false,
            strategy: Strategy::Honest,
            delegate: None,
        }
    }

    pub fn miner(mut self, hashpower: f64) -> Self {
        self.miner = true;
        self.hashpower = hashpower;
        self
    }

    pub fn staker(mut self, stake: f64) -> Self {
        self.staker = true;
        self.stake = stake;
        self
    }

    pub fn adversary(mut self, strategy: Strategy) -> Self {
        self.adversarial = true;
        self.strategy = strategy;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Latency {
    Fixed { seconds: f64 },
    Uniform { min: f64, max: f64 },
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Fixed { seconds: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    /// Exponential block times; headers carry no real proof of work.
    #[default]
    Stochastic,
    /// Real nonce search at toy difficulty.
    Real,
}

/// Partial overrides of the preset's chain parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub target_block_time: Option<u64>,
    pub retarget_interval: Option<u64>,
    pub max_retarget_factor: Option<u64>,
    pub m_voters: Option<u32>,
    pub n_quorum: Option<u32>,
    pub stake_maturity: Option<u64>,
    pub lock_after: Option<u64>,
    pub window_alpha: Option<u64>,
    pub hash_algo: Option<HashAlgo>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: ChainParams) -> Result<ChainParams, ParamsError> {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(
            target_block_time,
            retarget_interval,
            m_voters,
            n_quorum,
            stake_maturity,
            lock_after,
            window_alpha,
            hash_algo
        );
        if let Some(f) = self.max_retarget_factor {
            p.max_retarget_factor = Ratio::from_integer(f);
        }
        p.validate()?;
        Ok(p)
    }
}

/// Knobs used to generate the default node list and drive attacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackKnobs {
    /// Attacker share of all stake.
    pub stake_share: f64,
    /// Attacker hashpower as a multiple of honest hashpower.
    pub hash_multiplier: f64,
    /// Public blocks before the payment is submitted.
    pub warmup_blocks: u64,
    /// Coins paid to the merchant.
    pub amount: f64,
    /// Give up when the public chain leads by more than this many blocks.
    pub max_deficit: u64,
    /// Give up this many public blocks after the attack starts.
    pub horizon_blocks: u64,
    /// Height from which the strip miner stops; defaults to the first
    /// retarget boundary.
    pub quit_height: Option<u64>,
    /// Share of honest stake that votes on every fork.
    pub greedy_fraction: f64,
    /// Disable the proof-of-work requirement (slot-based production).
    pub pure_pos: bool,
    /// Height at which the fork maintainer starts its fork.
    pub fork_height: u64,
    /// Share of stake delegated to the stakepool.
    pub pool_share: f64,
    /// Height from which the stakepool is offline.
    pub offline_at_height: u64,
}

impl Default for AttackKnobs {
    fn default() -> Self {
        AttackKnobs {
            stake_share: 0.0,
            hash_multiplier: 0.0,
            warmup_blocks: 20,
            amount: 100.0,
            max_deficit: 12,
            horizon_blocks: 150,
            quit_height: None,
            greedy_fraction: 0.0,
            pure_pos: false,
            fork_height: 3,
            pool_share: 0.0,
            offline_at_height: 1,
        }
    }
}

/// Shape of the generated honest network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkKnobs {
    pub honest_miners: u32,
    /// Total honest hashpower, hashes per second.
    pub honest_hashpower: f64,
    pub honest_stakers: u32,
    /// Stake entries across the whole network at genesis.
    pub tickets: u32,
    /// Online probability of ordinary stakers.
    pub staker_online: f64,
}

impl Default for NetworkKnobs {
    fn default() -> Self {
        NetworkKnobs {
            honest_miners: 4,
            honest_hashpower: 1.0e6,
            honest_stakers: 20,
            tickets: 4000,
            staker_online: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    /// Run until the best chain reaches this height.
    #[serde(default = "default_blocks")]
    pub blocks: u64,
    #[serde(default = "default_confirmations")]
    pub confirmations: u64,
    #[serde(default)]
    pub latency: Latency,
    #[serde(default)]
    pub mining: MiningMode,
    /// Coins per stake entry.
    #[serde(default = "default_ticket")]
    pub ticket_size: f64,
    /// Fee paid per stake submission, in coins.
    #[serde(default)]
    pub staking_fee: f64,
    /// Stakers resubmit released stake.
    #[serde(default = "yes")]
    pub restake: bool,
    /// Declare a stall after this many target block times without progress.
    #[serde(default = "default_stall")]
    pub stall_horizon_blocks: u64,
    /// Record per-event trace lines.
    #[serde(default = "yes")]
    pub trace: bool,
    /// Replay the final best chain through a fresh index.
    #[serde(default = "yes")]
    pub revalidate: bool,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub attack: AttackKnobs,
    #[serde(default)]
    pub network: NetworkKnobs,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
}

fn default_preset() -> Preset {
    Preset::ProjectPai
}
fn default_blocks() -> u64 {
    1000
}
fn default_confirmations() -> u64 {
    6
}
fn default_ticket() -> f64 {
    100.0
}
fn default_stall() -> u64 {
    100
}
fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        ScenarioConfig {
            scenario,
            preset: default_preset(),
            seed: 0,
            blocks: default_blocks(),
            confirmations: default_confirmations(),
            latency: Latency::default(),
            mining: MiningMode::default(),
            ticket_size: default_ticket(),
            staking_fee: 0.0,
            restake: true,
            stall_horizon_blocks: default_stall(),
            trace: true,
            revalidate: true,
            params: ParamOverrides::default(),
            attack: AttackKnobs::default(),
            network: NetworkKnobs::default(),
            nodes: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn chain_params(&self) -> Result<ChainParams, ConfigError> {
        Ok(self.params.apply(ChainParams::preset(self.preset))?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chain_params()?;
        if self.blocks == 0 {
            return Err(invalid("blocks must be at least 1"));
        }
        if self.confirmations == 0 {
            return Err(invalid("confirmations must be at least 1"));
        }
        if self.ticket_size.is_nan() || self.ticket_size <= 0.0 || self.staking_fee < 0.0 {
            return Err(invalid("ticket_size must be positive and staking_fee non-negative"));
        }
        match self.latency {
            Latency::Fixed { seconds } if seconds >= 0.0 => {}
            Latency::Uniform { min, max } if min >= 0.0 && max >= min => {}
            _ => return Err(invalid("latency must be non-negative with min <= max")),
        }
        let a = &self.attack;
        for (name, v) in
            [("stake_share", a.stake_share), ("greedy_fraction", a.greedy_fraction), ("pool_share", a.pool_share)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("attack.{name} must lie in [0, 1]")));
            }
        }
        if a.hash_multiplier < 0.0 {
            return Err(invalid("attack.hash_multiplier must be non-negative"));
        }
        let n = &self.network;
        if !(0.0..=1.0).contains(&n.staker_online) || n.honest_hashpower < 0.0 {
            return Err(invalid("network.staker_online must lie in [0, 1] and honest_hashpower be non-negative"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(invalid(format!("duplicate node id `{}`", node.id)));
            }
            if node.hashpower < 0.0 || node.stake < 0.0 || node.balance < 0.0 {
                return Err(invalid(format!("node `{}`: amounts must be non-negative", node.id)));
            }
            if !(0.0..=1.0).contains(&node.online) {
                return Err(invalid(format!("node `{}`: online must lie in [0, 1]", node.id)));
            }
        }
        for node in &self.nodes {
            if let Some(d) = &node.delegate {
                if !self.nodes.iter().any(|n| &n.id == d && n.stakepool) {
                    return Err(invalid(format!("node `{}`: delegate `{d}` is not a stakepool node", node.id)));
                }
            }
        }
        Ok(())
    }
}
