//! Protocol constants and the two built-in parameter presets.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::HashAlgo;

/// Coin amounts are integers in units of 10⁻⁸ coin.
pub type Amount = u64;
pub type Height = u64;

/// Smallest units per coin.
pub const COIN: Amount = 100_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("unknown preset `{0}` (expected PROJECT_PAI or DECRED_LIKE)")]
    UnknownPreset(String),
    #[error("reward split must sum to exactly 1, got {0}")]
    SplitSum(Ratio<u64>),
    #[error("quorum n={n} must satisfy m/2 < n <= m (m={m})")]
    Quorum { n: u32, m: u32 },
    #[error("max retarget factor must exceed 1")]
    RetargetFactor,
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
    #[error("reward reduction ratio must lie in (0, 1]")]
    ReductionRatio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preset {
    ProjectPai,
    DecredLike,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::ProjectPai => "PROJECT_PAI",
            Preset::DecredLike => "DECRED_LIKE",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ParamsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PROJECT_PAI" | "PAI" => Ok(Preset::ProjectPai),
            "DECRED_LIKE" | "DECRED" => Ok(Preset::DecredLike),
            _ => Err(ParamsError::UnknownPreset(s.to_string())),
        }
    }
}

/// All protocol constants. Fractions are exact rationals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    /// Seconds.
    pub target_block_time: u64,
    pub retarget_interval: u64,
    pub max_retarget_factor: Ratio<u64>,
    pub initial_block_reward: Amount,
    pub reward_reduction: Ratio<u64>,
    pub reward_reduction_interval: u64,
    pub split_miner: Ratio<u64>,
    pub split_voters: Ratio<u64>,
    pub split_dev: Ratio<u64>,
    pub m_voters: u32,
    pub n_quorum: u32,
    pub stake_maturity: u64,
    pub lock_after: u64,
    pub window_alpha: u64,
    pub total_supply_cap: Amount,
    pub hash_algo: HashAlgo,
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let sum = self.split_miner + self.split_voters + self.split_dev;
        if !sum.is_one() {
            return Err(ParamsError::SplitSum(sum));
        }
        if self.m_voters == 0 || 2 * self.n_quorum <= self.m_voters || self.n_quorum > self.m_voters {
            return Err(ParamsError::Quorum { n: self.n_quorum, m: self.m_voters });
        }
        if self.max_retarget_factor <= Ratio::one() {
            return Err(ParamsError::RetargetFactor);
        }
        for (name, v) in [
            ("retarget_interval", self.retarget_interval),
            ("target_block_time", self.target_block_time),
            ("reward_reduction_interval", self.reward_reduction_interval),
            ("window_alpha", self.window_alpha),
        ] {
            if v == 0 {
                return Err(ParamsError::NonPositive(name));
            }
        }
        if self.reward_reduction.is_zero() || self.reward_reduction > Ratio::one() {
            return Err(ParamsError::ReductionRatio);
        }
        Ok(())
    }

    pub fn preset(preset: Preset) -> ChainParams {
        match preset {
            Preset::ProjectPai => ChainParams {
                target_block_time: 600,
                retarget_interval: 2016,
                max_retarget_factor: Ratio::from_integer(4),
                initial_block_reward: 1500 * COIN,
                reward_reduction: Ratio::new(50, 100),
                reward_reduction_interval: 210_000,
                split_miner: Ratio::new(60, 100),
                split_voters: Ratio::new(30, 100),
                split_dev: Ratio::new(10, 100),
                m_voters: 5,
                n_quorum: 3,
                stake_maturity: 256,
                lock_after: 256,
                window_alpha: 8,
                total_supply_cap: 2_100_000_000 * COIN,
                hash_algo: HashAlgo::DoubleSha256,
            },
            Preset::DecredLike => ChainParams {
                target_block_time: 300,
                retarget_interval: 144,
                max_retarget_factor: Ratio::from_integer(4),
                initial_block_reward: 3_119_582_664,
                reward_reduction: Ratio::new(100, 101),
                reward_reduction_interval: 6144,
                split_miner: Ratio::new(60, 100),
                split_voters: Ratio::new(30, 100),
                split_dev: Ratio::new(10, 100),
                m_voters: 5,
                n_quorum: 3,
                stake_maturity: 256,
                lock_after: 256,
                window_alpha: 8,
                total_supply_cap: 21_000_000 * COIN,
                hash_algo: HashAlgo::Sha3_256,
            },
        }
    }

    /// Expected seconds for one full retarget interval.
    pub fn expected_timespan(&self) -> u64 {
        self.retarget_interval * self.target_block_time
    }
}

pub fn preset_params(name: &str) -> Result<ChainParams, ParamsError> {
    Ok(ChainParams::preset(name.parse()?))
}

/// Scheduled block subsidy at `height`, before any supply-cap clipping.
///
/// `initial * ratio^floor(height / interval)`, computed exactly and
/// truncated to the smallest unit once.
pub fn block_reward_at(height: Height, params: &ChainParams) -> Amount {
    let epochs = height / params.reward_reduction_interval;
    let (num, den) = (*params.reward_reduction.numer(), *params.reward_reduction.denom());
    if num == den || epochs == 0 {
        return params.initial_block_reward;
    }
    // initial * num^k < den^k  =>  zero; bail early so huge heights stay cheap.
    let initial = BigUint::from(params.initial_block_reward);
    let mut n_pow = BigUint::one();
    let mut d_pow = BigUint::one();
    for _ in 0..epochs {
        n_pow *= num;
        d_pow *= den;
        if &initial * &n_pow < d_pow {
            return 0;
        }
    }
    (initial * n_pow / d_pow).to_u64().expect("reward never grows")
}

/// Subsidy actually minted at `height` given what has already been minted.
pub fn capped_reward(height: Height, minted: Amount, params: &ChainParams) -> Amount {
    block_reward_at(height, params).min(params.total_supply_cap.saturating_sub(minted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_pai_column() {
        let p = preset_params("PROJECT_PAI").unwrap();
        assert_eq!(p.retarget_interval, 2016);
        assert_eq!(p.target_block_time, 600);
        assert_eq!(p.initial_block_reward, 1500 * COIN);
        assert_eq!(p.reward_reduction_interval, 210_000);
        assert_eq!(p.total_supply_cap, 2_100_000_000 * COIN);
        assert_eq!(p.reward_reduction, Ratio::new(1, 2));
        assert_eq!(p.split_miner, Ratio::new(3, 5));
        assert_eq!(p.split_voters, Ratio::new(3, 10));
        assert_eq!(p.split_dev, Ratio::new(1, 10));
        assert_eq!((p.m_voters, p.n_quorum), (5, 3));
        p.validate().unwrap();
    }

    #[test]
    fn decred_column() {
        let p = preset_params("DECRED_LIKE").unwrap();
        assert_eq!(p.target_block_time, 300);
        assert_eq!(p.retarget_interval, 144);
        assert_eq!(p.reward_reduction, Ratio::new(100, 101));
        assert_eq!(p.reward_reduction_interval, 6144);
        assert_eq!(p.initial_block_reward, 3_119_582_664);
        assert_eq!(p.total_supply_cap, 21_000_000 * COIN);
        p.validate().unwrap();
    }

    #[test]
    fn unknown_preset() {
        assert_eq!(preset_params("BITCOIN"), Err(ParamsError::UnknownPreset("BITCOIN".into())));
    }

    #[test]
    fn reward_schedule() {
        let p = ChainParams::preset(Preset::ProjectPai);
        assert_eq!(block_reward_at(0, &p), 1500 * COIN);
        assert_eq!(block_reward_at(209_999, &p), 1500 * COIN);
        assert_eq!(block_reward_at(210_000, &p), 750 * COIN);
        assert_eq!(block_reward_at(420_000, &p), 375 * COIN);
        assert_eq!(block_reward_at(210_000 * 64, &p), 0);
        assert_eq!(block_reward_at(u64::MAX, &p), 0);
    }

    #[test]
    fn decred_reward_is_exact_rational() {
        let p = ChainParams::preset(Preset::DecredLike);
        // 3119582664 * 100 / 101, truncated
        assert_eq!(block_reward_at(6144, &p), 3_088_695_706);
        // two epochs: exact 3119582664 * 10000 / 10201
        assert_eq!(block_reward_at(2 * 6144, &p), 3_058_114_561);
    }

    #[test]
    fn cap_clips_subsidy() {
        let p = ChainParams::preset(Preset::ProjectPai);
        assert_eq!(capped_reward(0, p.total_supply_cap - 10, &p), 10);
        assert_eq!(capped_reward(0, p.total_supply_cap, &p), 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ChainParams::preset(Preset::ProjectPai);
        p.n_quorum = 6;
        assert!(matches!(p.validate(), Err(ParamsError::Quorum { .. })));
        p.n_quorum = 2;
        assert!(matches!(p.validate(), Err(ParamsError::Quorum { .. })));
        let mut p = ChainParams::preset(Preset::ProjectPai);
        p.split_dev = Ratio::new(11, 100);
        assert!(matches!(p.validate(), Err(ParamsError::SplitSum(_))));
        let mut p = ChainParams::preset(Preset::ProjectPai);
        p.max_retarget_factor = Ratio::one();
        assert_eq!(p.validate(), Err(ParamsError::RetargetFactor));
    }

    proptest::proptest! {
        #[test]
        fn reward_non_increasing(a in 0u64..20_000_000, b in 0u64..20_000_000) {
            for p in [ChainParams::preset(Preset::ProjectPai), ChainParams::preset(Preset::DecredLike)] {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                proptest::prop_assert!(block_reward_at(lo, &p) >= block_reward_at(hi, &p));
            }
        }
    }
}
