//! Default networks and the scripted attack scenarios.

use rayon::prelude::*;

use super::config::{ConfigError, NodeSpec, ScenarioConfig, ScenarioKind, Strategy};
use super::engine::{Engine, SimOutput};
use super::report::ScenarioReport;
use crate::params::Height;

/// Splits `total` into `parts` near-equal shares, larger ones first.
fn split(total: u64, parts: u32) -> Vec<u64> {
    if parts == 0 {
        return Vec::new();
    }
    let (q, r) = (total / parts as u64, total % parts as u64);
    (0..parts as u64).map(|i| q + u64::from(i < r)).collect()
}

/// Node list for `cfg`: its explicit `nodes`, or one generated from the
/// `[network]` and `[attack]` knobs.
pub fn build_nodes(cfg: &ScenarioConfig) -> Vec<NodeSpec> {
    if !cfg.nodes.is_empty() {
        return cfg.nodes.clone();
    }
    let net = &cfg.network;
    let a = &cfg.attack;
    let total = net.tickets as u64;
    let honest_hash = net.honest_hashpower;
    let mut nodes = Vec::new();
    let mut honest_tickets = total;

    for (i, _) in (0..net.honest_miners).enumerate() {
        nodes.push(NodeSpec::new(format!("miner-{i}")).miner(honest_hash / net.honest_miners as f64));
    }

    match cfg.scenario {
        ScenarioKind::Honest => {}
        ScenarioKind::DoubleSpend => {
            let t = (a.stake_share * total as f64).round() as u64;
            honest_tickets -= t;
            let mut n = NodeSpec::new("attacker")
                .miner(a.hash_multiplier * honest_hash)
                .staker(t as f64 * cfg.ticket_size)
                .adversary(Strategy::PrivateForkDoubleSpend);
            n.balance = a.amount + 1.0;
            nodes.push(n);
        }
        ScenarioKind::StripMine => {
            nodes.push(NodeSpec::new("attacker").miner(a.hash_multiplier * honest_hash).adversary(Strategy::StripMine));
        }
        ScenarioKind::NothingAtStake => {
            let t = (a.stake_share * total as f64).round() as u64;
            honest_tickets -= t;
            nodes.push(
                NodeSpec::new("attacker")
                    .miner(a.hash_multiplier * honest_hash)
                    .staker(t as f64 * cfg.ticket_size)
                    .adversary(Strategy::NothingAtStake),
            );
        }
        ScenarioKind::Stakepool => {
            let mut pool = NodeSpec::new("pool");
            pool.stakepool = true;
            nodes.push(pool);
            let t = (a.pool_share * total as f64).round() as u64;
            honest_tickets -= t;
            let delegators =
                if t == 0 { 0 } else { ((a.pool_share * net.honest_stakers as f64).round() as u32).max(1) };
            for (i, share) in split(t, delegators).into_iter().enumerate() {
                let mut n = NodeSpec::new(format!("delegator-{i}")).staker(share as f64 * cfg.ticket_size);
                n.online = 0.0;
                n.delegate = Some("pool".into());
                nodes.push(n);
            }
        }
    }

    let greedy = (a.greedy_fraction * net.honest_stakers as f64).round() as usize;
    for (i, share) in split(honest_tickets, net.honest_stakers).into_iter().enumerate() {
        let mut n = NodeSpec::new(format!("staker-{i}")).staker(share as f64 * cfg.ticket_size);
        n.online = net.staker_online;
        n.greedy = i < greedy;
        nodes.push(n);
    }
    nodes
}

/// Runs one simulation. Single-threaded and deterministic in the config.
pub fn run(cfg: &ScenarioConfig) -> Result<SimOutput, ConfigError> {
    cfg.validate()?;
    let nodes = build_nodes(cfg);
    Ok(Engine::new(cfg.clone(), nodes)?.run())
}

/// Defaults that make each scenario meaningful out of the box.
pub fn default_config(kind: ScenarioKind) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(kind);
    match kind {
        ScenarioKind::Honest => {}
        ScenarioKind::DoubleSpend => {
            c.attack.stake_share = 0.4;
            c.attack.hash_multiplier = 2.0;
        }
        ScenarioKind::StripMine => {
            c.attack.hash_multiplier = 9.0;
        }
        ScenarioKind::NothingAtStake => {
            c.attack.stake_share = 0.01;
            c.attack.greedy_fraction = 1.0;
            c.attack.hash_multiplier = 0.001;
            c.network.tickets = 1000;
        }
        ScenarioKind::Stakepool => {
            c.attack.pool_share = 0.8;
            c.attack.offline_at_height = 50;
            c.blocks = 300;
            c.stall_horizon_blocks = 1000;
        }
    }
    c
}

fn with_generated_nodes(base: &ScenarioConfig, kind: ScenarioKind) -> ScenarioConfig {
    let mut c = base.clone();
    c.scenario = kind;
    c.nodes.clear();
    c
}

/// Attacker with `stake_share` of all stake and `hash_multiplier` times the
/// honest hashpower forks privately at the payment and releases once it
/// leads after the merchant ships.
pub fn scenario_double_spend(
    base: &ScenarioConfig,
    stake_share: f64,
    hash_multiplier: f64,
) -> Result<SimOutput, ConfigError> {
    let mut c = with_generated_nodes(base, ScenarioKind::DoubleSpend);
    c.attack.stake_share = stake_share;
    c.attack.hash_multiplier = hash_multiplier;
    run(&c)
}

/// Attacker mines publicly with `hash_multiplier` times the honest
/// hashpower, then stops before `quit_height` (default: the first retarget
/// boundary). The run covers one full interval after quitting.
pub fn scenario_strip_mine(
    base: &ScenarioConfig,
    hash_multiplier: f64,
    quit_height: Option<Height>,
) -> Result<SimOutput, ConfigError> {
    let mut c = with_generated_nodes(base, ScenarioKind::StripMine);
    let interval = c.chain_params()?.retarget_interval;
    let quit = quit_height.unwrap_or(interval);
    c.attack.hash_multiplier = hash_multiplier;
    c.attack.quit_height = Some(quit);
    c.blocks = quit + interval - 1;
    run(&c)
}

/// One stakepool votes for `pool_share` of all stake, whose owners are
/// always offline; the pool itself goes offline at `offline_at`.
pub fn scenario_stakepool_failure(
    base: &ScenarioConfig,
    pool_share: f64,
    offline_at: Height,
) -> Result<SimOutput, ConfigError> {
    let mut c = with_generated_nodes(base, ScenarioKind::Stakepool);
    c.attack.pool_share = pool_share;
    c.attack.offline_at_height = offline_at;
    run(&c)
}

/// A small-stake attacker keeps a fork alive while `greedy_fraction` of
/// honest stakers vote on every fork they see.
pub fn scenario_nothing_at_stake(base: &ScenarioConfig, greedy_fraction: f64) -> Result<SimOutput, ConfigError> {
    let mut c = with_generated_nodes(base, ScenarioKind::NothingAtStake);
    c.attack.greedy_fraction = greedy_fraction;
    run(&c)
}

/// Runs independent configs in parallel; results keep the input order.
pub fn sweep(configs: &[ScenarioConfig]) -> Vec<Result<ScenarioReport, ConfigError>> {
    configs.par_iter().map(|c| run(c).map(|o| o.report)).collect()
}

/// Fraction of `seeds` runs of `base` (with seeds `0..seeds`) that
/// report SUCCEEDED.
pub fn success_rate(base: &ScenarioConfig, seeds: u64) -> Result<f64, ConfigError> {
    let configs: Vec<ScenarioConfig> = (0..seeds)
        .map(|s| {
            let mut c = base.clone();
            c.seed = s;
            c
        })
        .collect();
    let mut wins = 0u64;
    for r in sweep(&configs) {
        wins += u64::from(r?.outcome == super::report::Outcome::Succeeded);
    }
    Ok(wins as f64 / seeds as f64)
}
