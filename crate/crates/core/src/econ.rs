//! Majority-attack threshold and attack-cost model.
//!
//! An attacker holding stake fraction `f` controls each of the `m` sortition
//! seats independently with probability `f`, so a block needs `n` of them
//! with probability `P(f) = sum_{k>=n} C(m,k) f^k (1-f)^(m-k)`. To keep pace
//! with the honest chain the attacker's hashpower must be
//! `P(1-f) / P(f)` times the honest hashpower.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("{name} = {value} outside its domain ({domain})")]
    Domain { name: &'static str, value: f64, domain: &'static str },
    #[error("quorum n={n} must satisfy 1 <= n <= m (m={m})")]
    Quorum { n: u32, m: u32 },
}

fn domain(name: &'static str, value: f64, ok: bool, domain: &'static str) -> Result<(), EconError> {
    if ok {
        Ok(())
    } else {
        Err(EconError::Domain { name, value, domain })
    }
}

fn check_quorum(m: u32, n: u32) -> Result<(), EconError> {
    if n == 0 || n > m {
        return Err(EconError::Quorum { n, m });
    }
    Ok(())
}

/// Market and fleet constants of the cost model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconParams {
    /// USD per coin.
    pub price: f64,
    pub total_supply: f64,
    pub public_supply: f64,
    /// USD per GPU.
    pub gpu_price: f64,
    /// Size of the honest fleet; its hashpower is the unit.
    pub gpu_count: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        EconParams {
            price: 0.052201,
            total_supply: 1_563_172_500.0,
            public_supply: 735_000_000.0,
            gpu_price: 6_369.0,
            gpu_count: 100.0,
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<(), EconError> {
        for (name, v) in [
            ("price", self.price),
            ("total_supply", self.total_supply),
            ("public_supply", self.public_supply),
            ("gpu_price", self.gpu_price),
            ("gpu_count", self.gpu_count),
        ] {
            domain(name, v, v.is_finite() && v > 0.0, "must be positive")?;
        }
        domain(
            "public_supply",
            self.public_supply,
            self.public_supply <= self.total_supply,
            "must not exceed total_supply",
        )
    }

    /// USD cost of the whole honest fleet.
    pub fn fleet_cost(&self) -> f64 {
        self.gpu_count * self.gpu_price
    }
}

fn binomial(m: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Probability that at least `n` of `m` independent seats go to a holder of
/// stake fraction `f`.
pub fn vote_majority_prob(f: f64, m: u32, n: u32) -> Result<f64, EconError> {
    domain("f", f, (0.0..=1.0).contains(&f), "[0, 1]")?;
    check_quorum(m, n)?;
    Ok((n..=m).map(|k| binomial(m, k) * f.powi(k as i32) * (1.0 - f).powi((m - k) as i32)).sum())
}

/// Attacker hashpower, as a multiple of honest hashpower, needed to match
/// honest block production at stake fraction `f_s`.
pub fn required_hash_ratio(f_s: f64, m: u32, n: u32) -> Result<f64, EconError> {
    domain("f_s", f_s, f_s > 0.0 && f_s < 1.0, "(0, 1)")?;
    Ok(vote_majority_prob(1.0 - f_s, m, n)? / vote_majority_prob(f_s, m, n)?)
}

/// Stake fraction at which an attacker with share `p` of all hashpower keeps
/// pace: solves `required_hash_ratio(f) = p / (1 - p)` by bisection.
pub fn stake_for_hash_share(p: f64, m: u32, n: u32) -> Result<f64, EconError> {
    domain("p", p, p > 0.0 && p < 1.0, "(0, 1)")?;
    check_quorum(m, n)?;
    let goal = p / (1.0 - p);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // required_hash_ratio is strictly decreasing on (0, 1)
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if required_hash_ratio(mid, m, n)? > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One attack-cost row. Money in USD, fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub hash_share: f64,
    pub stake_ratio: f64,
    pub percent_of_public: f64,
    pub coin_cost: f64,
    pub multiplier: f64,
    pub gpu_cost: f64,
    pub total_cost: f64,
    pub feasible: bool,
}

pub fn cost_row(econ: &EconParams, m: u32, n: u32, p: f64) -> Result<CostRow, EconError> {
    let f_s = stake_for_hash_share(p, m, n)?;
    let coins = f_s * econ.total_supply;
    let coin_cost = coins * econ.price;
    let percent_of_public = 100.0 * coins / econ.public_supply;
    let multiplier = p / (1.0 - p);
    let gpu_cost = multiplier * econ.fleet_cost();
    Ok(CostRow {
        hash_share: p,
        stake_ratio: f_s,
        percent_of_public,
        coin_cost,
        multiplier,
        gpu_cost,
        total_cost: coin_cost + gpu_cost,
        feasible: percent_of_public <= 100.0,
    })
}

pub fn cost_table(econ: &EconParams, m: u32, n: u32, shares: &[f64]) -> Result<Vec<CostRow>, EconError> {
    econ.validate()?;
    shares.iter().map(|&p| cost_row(econ, m, n, p)).collect()
}

/// Hash shares 95%, 90%, ..., 5%.
pub fn default_shares() -> Vec<f64> {
    (1..=19).rev().map(|k| k as f64 * 0.05).collect()
}

/// Total attack cost for hash share `p` with the coin priced at `price`.
pub fn cost_at_price(price: f64, p: f64, econ: &EconParams, m: u32, n: u32) -> Result<f64, EconError> {
    domain("price", price, price.is_finite() && price >= 0.0, "non-negative")?;
    let row = cost_row(econ, m, n, p)?;
    Ok(row.stake_ratio * econ.total_supply * price + row.gpu_cost)
}

pub const TABLE_HEADER: [&str; 7] = [
    "Stake Ratio (%)",
    "Percent of Publicly Available Coin Supply (%)",
    "Cost of Coin Purchase ($ Million)",
    "Honest Hashrate Multiplier",
    "Cost of GPU Acquisition ($ Million)",
    "Total Attacking Cost ($ Million)",
    "feasible",
];

impl CostRow {
    /// Display strings: percentages and millions to two decimals.
    pub fn display_cells(&self) -> [String; 7] {
        [
            format!("{:.2}", 100.0 * self.stake_ratio),
            format!("{:.2}", self.percent_of_public),
            format!("{:.2}", self.coin_cost / 1e6),
            format!("{:.2}", self.multiplier),
            format!("{:.2}", self.gpu_cost / 1e6),
            format!("{:.2}", self.total_cost / 1e6),
            self.feasible.to_string(),
        ]
    }
}

pub fn write_table_csv<W: std::io::Write>(rows: &[CostRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record(r.display_cells())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Figure {
    /// Required hash ratio against stake fraction.
    Fig2,
    /// Attack cost against hash share, hybrid and pure PoW.
    Fig3,
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fig2" | "2" => Ok(Figure::Fig2),
            "fig3" | "3" => Ok(Figure::Fig3),
            _ => Err(format!("unknown figure `{s}` (expected fig2 or fig3)")),
        }
    }
}

/// Figure series on the open grid `i / (resolution + 1)`, `i = 1..=resolution`.
///
/// `Fig2` rows are `[f_s, ratio]`. `Fig3` rows are `[p, hybrid, pure_pow]` in
/// USD, where pure PoW needs `p > 0.5` and is `NaN` otherwise.
pub fn figure_data(
    kind: Figure,
    econ: &EconParams,
    m: u32,
    n: u32,
    resolution: usize,
) -> Result<Vec<Vec<f64>>, EconError> {
    domain("resolution", resolution as f64, resolution >= 2, "at least 2")?;
    let grid = (1..=resolution).map(|i| i as f64 / (resolution + 1) as f64);
    match kind {
        Figure::Fig2 => grid.map(|f| Ok(vec![f, required_hash_ratio(f, m, n)?])).collect(),
        Figure::Fig3 => grid
            .map(|p| {
                let row = cost_row(econ, m, n, p)?;
                let pow = if p > 0.5 { row.multiplier * econ.fleet_cost() } else { f64::NAN };
                Ok(vec![p, row.total_cost, pow])
            })
            .collect(),
    }
}

pub fn figure_header(kind: Figure) -> &'static [&'static str] {
    match kind {
        Figure::Fig2 => &["stake_fraction", "required_hash_ratio"],
        Figure::Fig3 => &["hash_share", "hybrid_cost_usd", "pow_cost_usd"],
    }
}

const MC_CHUNK: u64 = 1 << 16;

/// Fraction of `trials` in which at least `n` of `m` seats, each attacker
/// controlled with probability `f_s`, go to the attacker. Chunks use
/// separate ChaCha streams of one seed, so the result does not depend on
/// the thread count.
pub fn monte_carlo_majority(f_s: f64, m: u32, n: u32, trials: u64, seed: u64) -> Result<f64, EconError> {
    domain("f_s", f_s, (0.0..=1.0).contains(&f_s), "[0, 1]")?;
    domain("trials", trials as f64, trials >= 1, "at least 1")?;
    check_quorum(m, n)?;
    let chunks = trials.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = MC_CHUNK.min(trials - c * MC_CHUNK);
            (0..len).filter(|_| (0..m).filter(|_| rng.random::<f64>() < f_s).count() as u32 >= n).count() as u64
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}
