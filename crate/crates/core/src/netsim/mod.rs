//! Deterministic discrete-event network simulator.
//!
//! Miners draw exponential block times (or hash for real at toy
//! difficulty), blocks reach other miners after a sampled latency, and
//! selected stake entries vote when a block is found. One run is
//! single-threaded; [`sweep`] runs independent configs in parallel.
//!
//! Scenarios:
//!
//! * `honest`: miners and stakers only.
//! * `double-spend`: the attacker pays a merchant, mines a private branch
//!   holding a conflicting transfer and releases it once the merchant has
//!   shipped and the branch carries more work. Only the attacker's own
//!   selected entries vote on private blocks, and it stops voting publicly.
//! * `strip-mine`: a large miner mines through one retarget interval and
//!   quits at the boundary.
//! * `nas`: a small-stake attacker maintains a public fork while greedy
//!   stakers vote on every fork. With `attack.pure_pos` blocks are produced
//!   in fixed slots and need no work.
//! * `stakepool`: delegated stake depends on one pool that goes offline.

mod config;
mod engine;
mod report;
mod scenarios;

pub use config::{
    AttackKnobs, ConfigError, Latency, MiningMode, NetworkKnobs, NodeSpec, ParamOverrides, ScenarioConfig,
    ScenarioKind, Strategy,
};
pub use engine::{SimOutput, ATTACKER_WALLET, MERCHANT};
pub use report::{
    trace_bytes, write_rows_csv, write_trace, AttackReport, BlockRow, Outcome, ScenarioReport, TraceEvent, WindowStat,
};
pub use scenarios::{
    build_nodes, default_config, run, scenario_double_spend, scenario_nothing_at_stake, scenario_stakepool_failure,
    scenario_strip_mine, success_rate, sweep,
};
