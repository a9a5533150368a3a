//! Difficulty retargeting and the two mining backends.
//!
//! Targets are 256-bit integers; a header is mined when its digest, read
//! big-endian, is at most the target. Expected hashes per block are
//! `2^256 / target`, which is also the block's contribution to chain work.

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::block::BlockHeader;
use crate::hashing::{meets_target, Hash256, HashAlgo};
use crate::params::{ChainParams, Height};

/// `2^256 - 1`.
pub fn max_target() -> BigUint {
    (BigUint::one() << 256u32) - 1u8
}

fn two_256() -> BigUint {
    BigUint::one() << 256u32
}

/// Expected hashes needed to meet `target`.
pub fn work(target: &BigUint) -> BigUint {
    if target.is_zero() {
        return two_256();
    }
    two_256() / target
}

/// `old * clamp(actual / expected, 1/f, f)`, clamped to `[1, 2^256 - 1]`.
pub fn retarget(old: &BigUint, actual_timespan: u64, params: &ChainParams) -> BigUint {
    let expected = params.expected_timespan() as u128;
    let f = Ratio::new(*params.max_retarget_factor.numer() as u128, *params.max_retarget_factor.denom() as u128);
    let ratio = Ratio::new(actual_timespan.max(1) as u128, expected);
    let ratio = ratio.clamp(f.recip(), f);
    let scaled = old * BigUint::from(*ratio.numer()) / BigUint::from(*ratio.denom());
    scaled.clamp(BigUint::one(), max_target())
}

/// Target of a block plus the timestamp of the first block of its interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DifficultyState {
    pub target: BigUint,
    pub interval_start: u64,
}

impl DifficultyState {
    pub fn genesis(target: BigUint, timestamp: u64) -> Self {
        DifficultyState { target, interval_start: timestamp }
    }

    /// Target required of the child of a block at `height` with `timestamp`
    /// whose difficulty state is `self`. Changes only when the child height
    /// is a multiple of the retarget interval; the measured span runs from
    /// the first to the last block of the closing interval.
    pub fn child_target(&self, height: Height, timestamp: u64, params: &ChainParams) -> BigUint {
        let child = height + 1;
        if child.is_multiple_of(params.retarget_interval) {
            retarget(&self.target, timestamp.saturating_sub(self.interval_start), params)
        } else {
            self.target.clone()
        }
    }

    /// State of a newly connected child.
    pub fn child(&self, height: Height, timestamp: u64, child_time: u64, params: &ChainParams) -> Self {
        let child = height + 1;
        DifficultyState {
            target: self.child_target(height, timestamp, params),
            interval_start: if child.is_multiple_of(params.retarget_interval) {
                child_time
            } else {
                self.interval_start
            },
        }
    }
}

/// Searches `[start, start + max_attempts)` for the first nonce whose header
/// digest meets the template's target.
pub fn mine_real(template: &BlockHeader, algo: HashAlgo, start: u64, max_attempts: u64) -> Option<(u64, Hash256)> {
    let mut bytes = template.encode();
    for i in 0..max_attempts {
        let nonce = start.wrapping_add(i);
        bytes[112..120].copy_from_slice(&nonce.to_be_bytes());
        let d = crate::hashing::digest(algo, &bytes);
        if meets_target(&d, &template.target) {
            return Some((nonce, d));
        }
    }
    None
}

/// Exponential block-finding time with mean `2^256 / (target * hashpower)`.
pub fn sample_block_time<R: Rng + ?Sized>(hashpower: f64, target: &BigUint, rng: &mut R) -> f64 {
    assert!(hashpower > 0.0, "hashpower must be positive");
    let mean = expected_hashes(target) / hashpower;
    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
}

pub fn expected_hashes(target: &BigUint) -> f64 {
    work(target).to_f64().unwrap_or(f64::INFINITY)
}

/// Target at which `hashpower` finds a block every `block_time` seconds.
pub fn target_for(hashpower: f64, block_time: f64) -> BigUint {
    let hashes = (hashpower * block_time).max(1.0);
    let t = 2f64.powi(256) / hashes;
    BigUint::from_f64(t).unwrap_or_else(BigUint::one).clamp(BigUint::one(), max_target())
}

/// Produces a block-finding time for one miner working on `header`.
pub trait MiningBackend {
    /// Seconds until a solution is found, or `None` if the backend gave up.
    /// A real backend also writes the winning nonce into `header`.
    fn mine(&mut self, header: &mut BlockHeader, hashpower: f64) -> Option<f64>;

    /// Whether produced headers carry a genuine proof of work.
    fn real_pow(&self) -> bool;
}

/// Hashes nonces for real; the elapsed time is `attempts / hashpower`.
pub struct RealMiner {
    pub algo: HashAlgo,
    pub max_attempts: u64,
    pub next_nonce: u64,
}

impl MiningBackend for RealMiner {
    fn mine(&mut self, header: &mut BlockHeader, hashpower: f64) -> Option<f64> {
        let start = self.next_nonce;
        let (nonce, _) = mine_real(header, self.algo, start, self.max_attempts)?;
        header.nonce = nonce;
        self.next_nonce = nonce.wrapping_add(1);
        Some((nonce.wrapping_sub(start) + 1) as f64 / hashpower)
    }

    fn real_pow(&self) -> bool {
        true
    }
}

/// Draws the time from the exponential model; the nonce is left untouched.
pub struct StochasticMiner<R> {
    pub rng: R,
}

impl<R: Rng> MiningBackend for StochasticMiner<R> {
    fn mine(&mut self, header: &mut BlockHeader, hashpower: f64) -> Option<f64> {
        Some(sample_block_time(hashpower, &header.target, &mut self.rng))
    }

    fn real_pow(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pai() -> ChainParams {
        ChainParams::preset(Preset::ProjectPai)
    }

    fn template(seed: u8, target: BigUint) -> BlockHeader {
        BlockHeader {
            parent: Hash256([seed; 32]),
            height: seed as u64,
            payload_commitment: Hash256([seed.wrapping_mul(7); 32]),
            timestamp: 1_000,
            target,
            nonce: 0,
        }
    }

    #[test]
    fn retarget_examples() {
        let p = pai();
        let old = BigUint::from(1u64) << 200u32;
        let e = p.expected_timespan();
        assert_eq!(retarget(&old, e, &p), old);
        assert_eq!(retarget(&old, e / 2, &p), &old / 2u8);
        assert_eq!(retarget(&old, e / 100, &p), &old / 4u8);
        assert_eq!(retarget(&old, e * 100, &p), &old * 4u8);
        assert_eq!(retarget(&max_target(), e * 4, &p), max_target());
        assert_eq!(retarget(&BigUint::one(), 1, &p), BigUint::one());
    }

    #[test]
    fn retarget_only_on_boundaries() {
        let p = pai();
        let d = DifficultyState::genesis(BigUint::from(1u64) << 220u32, 0);
        assert_eq!(d.child_target(5, 100, &p), d.target);
        // block 2015 closes the interval in a quarter of the expected time
        let t = d.child_target(2015, p.expected_timespan() / 4, &p);
        assert_eq!(t, &d.target / 4u8);
        let c = d.child(2015, 0, 777, &p);
        assert_eq!(c.interval_start, 777);
    }

    #[test]
    fn maximal_target_wins_first_try() {
        let h = template(1, max_target());
        assert_eq!(mine_real(&h, HashAlgo::Sha3_256, 42, 1).map(|x| x.0), Some(42));
    }

    #[test]
    fn zero_target_not_found() {
        let h = template(2, BigUint::zero());
        assert_eq!(mine_real(&h, HashAlgo::Sha3_256, 0, 1_000_000), None);
    }

    #[test]
    fn toy_target_attempts_match_geometric_mean() {
        // success probability per nonce is ~2^-16, so the mean attempt
        // count over many templates is ~65536 with sd 65536/sqrt(n)
        let target = max_target() >> 16u32;
        let n = 100;
        let mut total = 0u64;
        for seed in 0..n {
            let h = template(seed as u8, target.clone());
            let (nonce, d) = mine_real(&h, HashAlgo::DoubleSha256, 0, 1 << 24).expect("found");
            let mut mined = h.clone();
            mined.nonce = nonce;
            assert_eq!(mined.hash(HashAlgo::DoubleSha256), d);
            assert!(meets_target(&d, &target));
            total += nonce + 1;
        }
        let mean = total as f64 / n as f64;
        let expected = 65536.0;
        assert!((mean - expected).abs() < 4.0 * expected / (n as f64).sqrt(), "mean {mean}");
        assert!(mean < 65536.0 * 2.0 * std::f64::consts::LN_2 + 4.0 * expected / 10.0);
    }

    #[test]
    fn sampled_mean_matches_exponential() {
        let hp = 1e6;
        let target = target_for(hp, 600.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_block_time(hp, &target, &mut rng)).sum::<f64>() / n as f64;
        let analytic = expected_hashes(&target) / hp;
        assert!((analytic - 600.0).abs() < 1e-6);
        assert!((mean - 600.0).abs() < 3.0 * 600.0 / (n as f64).sqrt(), "mean {mean}");

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let doubled: f64 = (0..n).map(|_| sample_block_time(2.0 * hp, &target, &mut rng)).sum::<f64>() / n as f64;
        assert!((doubled * 2.0 - mean).abs() < 1e-6 * mean);
    }

    #[test]
    fn sampling_is_deterministic() {
        let target = target_for(10.0, 600.0);
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| sample_block_time(10.0, &target, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| sample_block_time(10.0, &target, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn long_run_converges_to_block_time() {
        // constant hashpower, 50 intervals, start 3x too easy
        let p = ChainParams { retarget_interval: 144, ..pai() };
        let hp = 5e5;
        let mut d = DifficultyState::genesis(target_for(hp, 200.0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = 0.0;
        let mut start_after_first = 0.0;
        let blocks = 144 * 50;
        for h in 1..=blocks {
            // `d` is the parent's state; compute this block's target
            let parent_time = t as u64;
            let target = d.child_target(h - 1, parent_time, &p);
            t += sample_block_time(hp, &target, &mut rng);
            d = DifficultyState {
                target,
                interval_start: if h % p.retarget_interval == 0 { t as u64 } else { d.interval_start },
            };
            if h == p.retarget_interval {
                start_after_first = t;
            }
        }
        let mean = (t - start_after_first) / (blocks - p.retarget_interval) as f64;
        assert!((mean - 600.0).abs() < 0.05 * 600.0, "mean {mean}");
    }

    proptest::proptest! {
        #[test]
        fn retarget_within_factor(span in 1u64..100_000_000, shift in 8u32..240) {
            let p = pai();
            let old = BigUint::from(0xfeed_u32) << shift;
            let new = retarget(&old, span, &p);
            proptest::prop_assert!(new >= &old / 4u8 && new <= (&old * 4u8).min(max_target()));
        }
    }
}
