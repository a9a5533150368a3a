use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use num_bigint::BigUint;

use hycon_bench::{header, honest, sortition_table};
use hycon_core::econ::{self, EconParams};
use hycon_core::netsim::{self, default_config, ScenarioKind};
use hycon_core::{retarget, ChainParams, HashAlgo, Preset, SortitionSeed};

fn bench_hashing(c: &mut Criterion) {
    let bytes = header().encode();
    let mut g = c.benchmark_group("header_digest");
    for algo in HashAlgo::ALL {
        g.bench_function(algo.name(), |b| b.iter(|| hycon_core::digest(algo, black_box(&bytes))));
    }
    g.finish();
}

fn bench_sortition(c: &mut Criterion) {
    let table = sortition_table(10_000);
    let seed = SortitionSeed::derive(HashAlgo::Sha3_256, &header().parent, 7);
    c.bench_function("select_5_of_10k", |b| b.iter(|| table.select(black_box(&seed), 5).unwrap()));
    c.bench_function("build_table_10k", |b| b.iter(|| sortition_table(black_box(10_000))));
}

fn bench_retarget(c: &mut Criterion) {
    let params = ChainParams::preset(Preset::ProjectPai);
    let old: BigUint = header().target;
    c.bench_function("retarget", |b| b.iter(|| retarget(black_box(&old), black_box(1_000_000), &params)));
}

fn bench_econ(c: &mut Criterion) {
    let e = EconParams::default();
    let shares = econ::default_shares();
    c.bench_function("cost_table", |b| b.iter(|| econ::cost_table(&e, 5, 3, black_box(&shares)).unwrap()));
    c.bench_function("monte_carlo_100k", |b| b.iter(|| econ::monte_carlo_majority(0.4, 5, 3, 100_000, 1).unwrap()));
}

fn bench_netsim(c: &mut Criterion) {
    let mut g = c.benchmark_group("netsim");
    g.sample_size(10);
    let cfg = honest(500);
    g.bench_function("honest_500_blocks", |b| {
        b.iter_batched(|| cfg.clone(), |c| netsim::run(&c).unwrap(), BatchSize::SmallInput)
    });
    let mut ds = default_config(ScenarioKind::DoubleSpend);
    ds.trace = false;
    g.bench_function("double_spend_run", |b| {
        b.iter_batched(|| ds.clone(), |c| netsim::scenario_double_spend(&c, 0.4, 2.0).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, bench_hashing, bench_sortition, bench_retarget, bench_econ, bench_netsim);
criterion_main!(benches);
