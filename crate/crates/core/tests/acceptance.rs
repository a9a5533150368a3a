//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Run with `cargo test -p hycon-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hycon_core::consensus::split_reward;
use hycon_core::econ::{self, cost_at_price, cost_table, default_shares, monte_carlo_majority, vote_majority_prob};
use hycon_core::netsim::{self, default_config, Outcome, ScenarioKind, ScenarioReport};
use hycon_core::pos::SortitionTable;
use hycon_core::{distribute_reward, AccountId, ChainParams, Hash256, HashAlgo, Preset, SortitionSeed, StakeId, COIN};

mod common;

use common::pai;

type Check = Result<String, String>;

fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

/// Reference attack-cost table: stake %, % of public supply, coin $M,
/// multiplier, GPU $M, total $M. Ordered from 95% hash share down to 5%.
const TABLE: [[f64; 6]; 19] = [
    [18.93, 40.25, 15.44, 19.0, 12.09, 27.54],
    [24.66, 52.45, 20.13, 9.0, 5.73, 25.86],
    [28.99, 61.66, 23.66, 5.67, 3.6, 27.26],
    [32.66, 69.46, 26.65, 4.0, 2.55, 29.2],
    [35.94, 76.44, 29.33, 3.0, 1.91, 31.24],
    [38.98, 82.91, 31.81, 2.33, 1.48, 33.29],
    [41.86, 89.02, 34.16, 1.86, 1.18, 35.33],
    [44.63, 94.91, 36.41, 1.5, 0.95, 37.36],
    [47.33, 100.66, 38.62, 1.22, 0.78, 39.4],
    [50.0, 106.34, 40.8, 1.0, 0.64, 41.44],
    [52.67, 112.02, 42.98, 0.82, 0.52, 43.5],
    [55.37, 117.77, 45.19, 0.67, 0.42, 45.61],
    [58.14, 123.66, 47.44, 0.54, 0.34, 47.78],
    [61.02, 129.77, 49.79, 0.43, 0.27, 50.06],
    [64.06, 136.23, 52.27, 0.33, 0.21, 52.48],
    [67.34, 143.22, 54.95, 0.25, 0.16, 55.11],
    [71.01, 151.02, 57.94, 0.18, 0.11, 58.05],
    [75.34, 160.22, 61.47, 0.11, 0.07, 61.54],
    [81.07, 172.43, 66.16, 0.05, 0.03, 66.19],
];

fn econ_table() -> Check {
    let p = pai();
    let rows = cost_table(&econ::EconParams::default(), p.m_voters, p.n_quorum, &default_shares())
        .map_err(|e| e.to_string())?;
    if rows.len() != TABLE.len() {
        return Err(format!("{} rows", rows.len()));
    }
    let mut bad = Vec::new();
    for (i, (row, want)) in rows.iter().zip(TABLE.iter()).enumerate() {
        let cells = row.display_cells();
        for (j, w) in want.iter().enumerate() {
            let got: f64 = cells[j].parse().expect("numeric cell");
            if rel_err(got, *w) > 0.005 {
                bad.push(format!("row {} col {}: {} vs {}", i + 1, j + 1, got, w));
            }
        }
    }
    let infeasible = rows.iter().filter(|r| !r.feasible).count();
    let msg = format!("{} of 114 cells within 0.5%, {infeasible} rows infeasible", 114 - bad.len());
    if bad.is_empty() && infeasible == 10 {
        Ok(msg)
    } else {
        Err(format!("{msg} (expected 114 and 10); off: {}", bad.join("; ")))
    }
}

fn cost_at_prices() -> Check {
    let p = pai();
    let e = econ::EconParams::default();
    let mut msg = Vec::new();
    for (price, want) in [(0.25, 86.05e6), (1.00, 307.93e6)] {
        let got = cost_at_price(price, 0.95, &e, p.m_voters, p.n_quorum).map_err(|e| e.to_string())?;
        let line = format!("${price:.2}: {:.2}M vs {:.2}M", got / 1e6, want / 1e6);
        if rel_err(got, want) > 0.005 {
            return Err(line);
        }
        msg.push(line);
    }
    Ok(msg.join(", "))
}

fn binomial_identity() -> Check {
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let f = i as f64 / 999.0;
        let poly = 6.0 * f.powi(5) - 15.0 * f.powi(4) + 10.0 * f.powi(3);
        let got = vote_majority_prob(f, 5, 3).map_err(|e| e.to_string())?;
        worst = worst.max((got - poly).abs());
    }
    if worst >= 0.5e-12 {
        return Err(format!("max deviation {worst:e}"));
    }
    let half = econ::required_hash_ratio(0.5, 5, 3).map_err(|e| e.to_string())?;
    if half != 1.0 {
        return Err(format!("ratio(0.5) = {half}"));
    }
    for (f, want) in [(0.1893, 19.0), (0.2466, 9.0)] {
        let got = econ::required_hash_ratio(f, 5, 3).map_err(|e| e.to_string())?;
        if rel_err(got, want) > 0.005 {
            return Err(format!("ratio({f}) = {got}"));
        }
    }
    Ok(format!("max deviation {worst:.1e}, ratio(0.5) = 1"))
}

fn monte_carlo() -> Check {
    let trials = 1_000_000u64;
    let mut msg = Vec::new();
    for (i, f) in [0.1893, 0.4, 0.5].into_iter().enumerate() {
        let exact = vote_majority_prob(f, 5, 3).map_err(|e| e.to_string())?;
        let est = monte_carlo_majority(f, 5, 3, trials, 1000 + i as u64).map_err(|e| e.to_string())?;
        let se = (exact * (1.0 - exact) / trials as f64).sqrt();
        let z = (est - exact) / se;
        if z.abs() > 3.0 {
            return Err(format!("f={f}: {est} vs {exact} (z = {z:.2})"));
        }
        msg.push(format!("f={f} z={z:+.2}"));
    }
    Ok(msg.join(", "))
}

fn sortition_share() -> Check {
    // 10,000 equal entries; the first 4,000 belong to one owner.
    let table = SortitionTable::new((0..10_000u64).map(|i| (StakeId(i), 100 * COIN)));
    let owned = |id: &StakeId| id.0 < 4000;
    let trials = 100_000u64;
    let mut hits = 0u64;
    for t in 0..trials {
        let mut parent = [0u8; 32];
        parent[..8].copy_from_slice(&t.to_be_bytes());
        let seed = SortitionSeed::derive(HashAlgo::Sha3_256, &Hash256(parent), t + 1);
        let picks = table.select(&seed, 5).map_err(|e| e.to_string())?;
        hits += u64::from(picks.iter().filter(|id| owned(id)).count() >= 3);
    }
    let rate = hits as f64 / trials as f64;
    if (rate - 0.3174).abs() > 0.01 {
        return Err(format!("P(>=3 of 5) = {rate:.4}"));
    }
    Ok(format!("P(>=3 of 5) = {rate:.4}"))
}

fn ds_rate(fs: f64, r: f64, seeds: u64, reports: &mut Vec<ScenarioReport>) -> Result<f64, String> {
    let base = default_config(ScenarioKind::DoubleSpend);
    let mut wins = 0;
    for seed in 0..seeds {
        let mut c = base.clone();
        c.seed = seed;
        c.trace = false;
        let rep = netsim::scenario_double_spend(&c, fs, r).map_err(|e| e.to_string())?.report;
        wins += u64::from(rep.outcome == Outcome::Succeeded);
        reports.push(rep);
    }
    Ok(wins as f64 / seeds as f64)
}

fn double_spend(reports: &mut Vec<ScenarioReport>) -> Check {
    let fs_grid = [0.05, 0.3, 0.6];
    let r_grid = [1.0, 3.0, 10.0];
    let mut rate = [[0.0; 3]; 3];
    for (i, &fs) in fs_grid.iter().enumerate() {
        for (j, &r) in r_grid.iter().enumerate() {
            rate[i][j] = ds_rate(fs, r, 100, reports)?;
        }
    }
    let weak = rate[0][2];
    let strong = rate[2][0];
    let grid = format!("{rate:?}");
    if weak >= 0.05 {
        return Err(format!("(0.05, 10x) succeeded {weak}; grid {grid}"));
    }
    if strong <= 0.5 {
        return Err(format!("(0.6, 1x) succeeded {strong}; grid {grid}"));
    }
    // r is attacker hashpower as a multiple of honest hashpower
    for i in 0..3 {
        for j in 0..3 {
            if i + 1 < 3 && rate[i + 1][j] < rate[i][j] {
                return Err(format!("not monotone in stake at ({i},{j}); grid {grid}"));
            }
            if j + 1 < 3 && rate[i][j + 1] < rate[i][j] {
                return Err(format!("not monotone in r at ({i},{j}); grid {grid}"));
            }
        }
    }
    Ok(format!("(0.05, 10x) {weak:.2}, (0.6, 1x) {strong:.2}, grid {grid}"))
}

fn strip_mine(reports: &mut Vec<ScenarioReport>) -> Check {
    let base = default_config(ScenarioKind::StripMine);
    let target = pai().target_block_time as f64;
    let mut msg = Vec::new();
    for (mult, want) in [(9.0, 4.0), (1.0, 2.0)] {
        let rep = netsim::scenario_strip_mine(&base, mult, None).map_err(|e| e.to_string())?.report;
        let slow = rep.attack.post_quit_mean_interval.ok_or("no post-quit blocks")? / target;
        reports.push(rep);
        let line = format!("{mult}x: {slow:.2}x target");
        if rel_err(slow, want) > 0.15 {
            return Err(line);
        }
        msg.push(line);
    }
    Ok(msg.join(", "))
}

fn nothing_at_stake(reports: &mut Vec<ScenarioReport>) -> Check {
    let mut rates = Vec::new();
    for pure in [true, false] {
        let mut c = default_config(ScenarioKind::NothingAtStake);
        c.attack.pure_pos = pure;
        c.trace = false;
        let mut wins = 0;
        for seed in 0..100 {
            c.seed = seed;
            let rep = netsim::run(&c).map_err(|e| e.to_string())?.report;
            wins += u64::from(rep.outcome == Outcome::Succeeded);
            reports.push(rep);
        }
        rates.push(wins as f64 / 100.0);
    }
    let msg = format!("pure PoS {:.2}, hybrid {:.2}", rates[0], rates[1]);
    if rates[0] > 0.5 && rates[1] < 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn convergence(reports: &mut Vec<ScenarioReport>) -> Check {
    let mut c = default_config(ScenarioKind::Honest);
    let interval = pai().retarget_interval;
    c.blocks = 50 * interval;
    c.trace = false;
    let rep = netsim::run(&c).map_err(|e| e.to_string())?.report;
    let target = pai().target_block_time as f64;
    let mean = rep.mean_interval_after_first_retarget;
    let ok = rep.outcome == Outcome::Completed && mean.is_some_and(|m| rel_err(m, target) < 0.05);
    let msg = format!("{} after {} blocks, mean interval {:?}", rep.outcome, rep.best_height, mean);
    reports.push(rep);
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Tries forged vote sets against a small index and checks none of them is
/// accepted or moves the best tip.
fn forged_votes_rejected() -> Result<u64, String> {
    let mut idx = common::staked_index();
    let miner = AccountId(999);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut attempts = 0;
    for _ in 0..30 {
        let tip = idx.best_tip();
        let honest = common::honest_votes(&idx, &tip);
        let selected: Vec<StakeId> = honest.iter().map(|v| v.0).collect();
        let outsider = (0..common::STAKES).map(StakeId).find(|s| !selected.contains(s)).expect("pool > m");

        let mut bad = vec![
            honest[..2].to_vec(),
            vec![honest[0], honest[1], (outsider, common::owner(outsider))],
            vec![honest[0], honest[1], (honest[2].0, AccountId(777))],
            vec![honest[0], honest[1], honest[1]],
        ];
        let mut swapped = honest.clone();
        swapped[rng.random_range(0..5)].0 = outsider;
        bad.push(swapped);
        for votes in &bad {
            attempts += 1;
            if idx.extend_chain(common::forge(&idx, tip, miner, votes, None)).is_ok() || idx.best_tip() != tip {
                return Err(format!("forged votes {votes:?} accepted on {}", tip.short()));
            }
        }
        attempts += 1;
        let elsewhere = common::forge(&idx, tip, miner, &honest[..3], Some(Hash256([7; 32])));
        if idx.extend_chain(elsewhere).is_ok() {
            return Err("vote for another candidate accepted".into());
        }
        let quorum = rng.random_range(3..=5);
        idx.extend_chain(common::forge(&idx, tip, miner, &honest[..quorum], None))
            .map_err(|e| format!("honest block: {e}"))?;
    }
    Ok(attempts)
}

fn invariants(reports: &[ScenarioReport]) -> Check {
    let mut checks = 0u64;
    for r in reports {
        if let Some(v) = r.invariant_violations.first() {
            return Err(format!("{} seed {}: {v}", r.scenario, r.seed));
        }
        if r.best_height > 0 && !r.best_chain_revalidated {
            return Err(format!("{} seed {}: best chain failed revalidation", r.scenario, r.seed));
        }
        if r.best_height > 0 && r.conservation_checks == 0 {
            return Err(format!("{} seed {}: no conservation checks", r.scenario, r.seed));
        }
        checks += r.conservation_checks;
    }
    let forged = forged_votes_rejected()?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let presets = [pai(), ChainParams::preset(Preset::DecredLike)];
    let sweep = 200_000;
    for _ in 0..sweep {
        let reward = rng.random_range(0..=u64::MAX / 64);
        for p in &presets {
            let v = rng.random_range(0..=p.m_voters);
            let s = split_reward(reward, v, p);
            if s.miner + s.per_voter * v as u64 + s.dev + s.burned + s.withheld != reward {
                return Err(format!("split of {reward} with {v} votes leaks: {s:?}"));
            }
        }
    }
    Ok(format!(
        "{} runs, {checks} block conservation checks, {forged} forged blocks rejected, {sweep} reward splits",
        reports.len()
    ))
}

fn reward_examples() -> Check {
    let p = pai();
    let r = 1500 * COIN;
    let got = |v| {
        distribute_reward(r, v, &p)
            .map(|s| (s.miner / COIN, s.per_voter * v as u64 / COIN, s.dev / COIN, s.burned / COIN))
    };
    let s5 = got(5).map_err(|e| e.to_string())?;
    let s4 = got(4).map_err(|e| e.to_string())?;
    let msg = format!("v=5 {s5:?}, v=4 {s4:?}");
    if s5 == (900, 450, 150, 0) && s4 == (720, 360, 150, 90) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let mut reports = Vec::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, limit: Duration, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let res = f();
        let took = t.elapsed();
        let (ok, detail) = match res {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d} (over time limit {limit:?})")),
            Err(d) => (false, d),
        };
        failed += u32::from(!ok);
        println!("{} {n:>2} {name} [{:.2?}] {detail}", if ok { "PASS" } else { "FAIL" }, took);
    };

    report(1, "econ table", Duration::from_secs(1), &mut econ_table);
    report(2, "cost at price", Duration::from_secs(1), &mut cost_at_prices);
    report(3, "binomial identity", Duration::from_secs(1), &mut binomial_identity);
    report(4, "monte carlo", Duration::from_secs(30), &mut monte_carlo);
    report(5, "sortition share", Duration::from_secs(120), &mut sortition_share);
    report(6, "double spend", Duration::from_secs(600), &mut || double_spend(&mut reports));
    report(7, "strip mining", Duration::from_secs(60), &mut || strip_mine(&mut reports));
    report(8, "nothing at stake", Duration::from_secs(300), &mut || nothing_at_stake(&mut reports));
    report(11, "retarget convergence", Duration::from_secs(60), &mut || convergence(&mut reports));
    let all = std::mem::take(&mut reports);
    report(9, "invariants", Duration::from_secs(120), &mut || invariants(&all));
    report(10, "reward split", Duration::from_secs(1), &mut reward_examples);

    if failed == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
