//! Run results: the summary report, the per-block time series and the
//! event trace.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::Serialize;

use crate::hashing::Hash256;
use crate::params::Height;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Completed,
    Succeeded,
    Failed,
    Stalled,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Completed => "COMPLETED",
            Outcome::Succeeded => "SUCCEEDED",
            Outcome::Failed => "FAILED",
            Outcome::Stalled => "STALLED",
        })
    }
}

/// One best-chain block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockRow {
    pub height: Height,
    /// Simulated seconds at which the block was found.
    pub time: f64,
    pub interval: f64,
    pub votes: u32,
    pub missed_votes: u32,
    /// Share of the selected entries that voted.
    pub participation: f64,
    pub live_entries: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowStat {
    pub first_height: Height,
    pub last_height: Height,
    pub mean_interval: f64,
    pub missed_vote_rate: f64,
}

/// Attack-specific measurements; unused fields stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AttackReport {
    pub start_height: Option<Height>,
    pub payment_height: Option<Height>,
    pub shipped_height: Option<Height>,
    pub release_height: Option<Height>,
    pub private_blocks: u64,
    pub max_deficit: u64,
    pub quit_height: Option<Height>,
    pub post_quit_mean_interval: Option<f64>,
    pub fork_point: Option<Height>,
    pub fork_max_depth: u64,
    pub fork_blocks: u64,
    /// Votes cast on the attacker's fork by anyone but the attacker.
    pub multi_fork_votes: u64,
    pub missed_rate_before: Option<f64>,
    pub missed_rate_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub reason: String,
    pub best_height: Height,
    pub sim_seconds: f64,
    /// Every block accepted into the public index, stale ones included.
    pub blocks_connected: u64,
    pub blocks_per_node: BTreeMap<String, u64>,
    pub reorgs: u64,
    pub reorg_depths: BTreeMap<usize, u64>,
    pub windows: Vec<WindowStat>,
    pub mean_interval: Option<f64>,
    pub mean_interval_after_first_retarget: Option<f64>,
    pub missed_votes: u64,
    pub selected_votes: u64,
    pub missed_vote_rate: f64,
    /// Best-chain gaps longer than ten target block times.
    pub stall_episodes: u64,
    pub conservation_checks: u64,
    pub invariant_violations: Vec<String>,
    pub best_chain_revalidated: bool,
    pub attack: AttackReport,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn write_rows_csv<W: io::Write>(rows: &[BlockRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Found { t: f64, node: String, height: Height, hash: Hash256, parent: Hash256, votes: u32, private: bool },
    Reorg { t: f64, depth: usize, old_tip: Hash256, new_tip: Hash256 },
    Attack { t: f64, step: String, height: Height },
    End { t: f64, outcome: Outcome, reason: String },
}

/// Newline-delimited JSON, one event per line.
pub fn write_trace<W: io::Write>(trace: &[TraceEvent], mut out: W) -> io::Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_bytes(trace: &[TraceEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Retarget-aligned windows over `rows` (which start at height 1).
pub(crate) fn windows(rows: &[BlockRow], interval: u64) -> Vec<WindowStat> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let first = rows[start].height;
        let boundary = (first / interval + 1) * interval;
        let end = rows[start..].iter().position(|r| r.height >= boundary).map_or(rows.len(), |p| start + p);
        let slice = &rows[start..end];
        let selected: u64 = slice.iter().map(|r| (r.votes + r.missed_votes) as u64).sum();
        let missed: u64 = slice.iter().map(|r| r.missed_votes as u64).sum();
        out.push(WindowStat {
            first_height: first,
            last_height: slice.last().expect("non-empty").height,
            mean_interval: mean(slice.iter().map(|r| r.interval)).expect("non-empty"),
            missed_vote_rate: if selected == 0 { 0.0 } else { missed as f64 / selected as f64 },
        });
        start = end;
    }
    out
}
