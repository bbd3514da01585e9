//! Cascade mining throughput across bank sizes and stage counts.

use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use casmine_bench::{random_bank, random_query, rng, views};
use casmine_core::miner::{mine, CascadeConfig};

fn bench_mining(c: &mut Criterion) {
    let dim = 64;
    let vs = views(2);
    let mut group = c.benchmark_group("cascade_mine");
    for &slots in &[256usize, 1024, 4096] {
        let mut r = rng(slots as u64);
        let bank = random_bank(&mut r, &vs, slots, dim);
        let query = random_query(&mut r, &vs, dim);
        let exclude = BTreeSet::new();
        group.throughput(Throughput::Elements(slots as u64));
        for &stages in &[1usize, 3, 5] {
            let schedule: Vec<_> = (0..stages).map(|s| vs[s % vs.len()].clone()).collect();
            let cfg = CascadeConfig {
                stages,
                selection_ratio: 0.5,
                view_schedule: schedule,
                final_top_k: 10,
            };
            group.bench_with_input(
                BenchmarkId::new(format!("stages{stages}"), slots),
                &cfg,
                |b, cfg| {
                    b.iter(|| mine(black_box(&query), black_box(&bank), cfg, &exclude).unwrap())
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_mining);
criterion_main!(benches);
