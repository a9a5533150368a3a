//! Fixtures shared by the benchmarks in `benches/`.

use hycon_core::netsim::{default_config, ScenarioConfig, ScenarioKind};
use hycon_core::pos::SortitionTable;
use hycon_core::{BlockHeader, Hash256, StakeId, COIN};

/// `entries` stake entries with weights cycling through 1..=7 coins.
pub fn sortition_table(entries: u64) -> SortitionTable {
    SortitionTable::new((0..entries).map(|i| (StakeId(i), (1 + i % 7) * COIN)))
}

pub fn header() -> BlockHeader {
    BlockHeader {
        parent: Hash256([0x11; 32]),
        height: 123_456,
        payload_commitment: Hash256([0x22; 32]),
        timestamp: 1_545_000_000,
        target: hycon_core::pow::max_target() >> 20,
        nonce: 42,
    }
}

/// Honest network over `blocks` blocks with retargeting every 100.
pub fn honest(blocks: u64) -> ScenarioConfig {
    let mut c = default_config(ScenarioKind::Honest);
    c.blocks = blocks;
    c.trace = false;
    c.params.retarget_interval = Some(100);
    c
}
