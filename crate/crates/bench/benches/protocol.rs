use criterion::{criterion_group, criterion_main, Criterion};
use powertalk_bench::{dispatch_grid, params};
use powertalk_core::dispatch::{delta_metric, DispatchConfig};
use powertalk_core::mac::{run_session, to_bits, SessionOptions};
use powertalk_core::sim::{timeline, Scenario};
use powertalk_core::Substreams;
use std::hint::black_box;

fn session(c: &mut Criterion) {
    let grid = dispatch_grid();
    let p = params(8, true);
    let payloads: Vec<Vec<bool>> = (0..6).map(|u| to_bits(37 * u as u64 + 11, 8)).collect();
    let streams = Substreams::new(0);
    c.bench_function("run_session U=6 Q=8 crc", |b| {
        b.iter(|| run_session(black_box(&grid), &p, &payloads, &[], &streams, &SessionOptions::default()).unwrap())
    });
}

fn delta(c: &mut Criterion) {
    let grid = dispatch_grid();
    let config = DispatchConfig {
        demand: None,
        capacity_range: 1000.0,
        period_duration: 5.0,
        penalty_cost: None,
        monte_carlo_runs: 100,
        q_values: vec![4],
        gamma_values: vec![0.2],
        price_overhead: true,
    };
    let p = params(4, false);
    c.bench_function("delta_metric M=100 Q=4", |b| {
        b.iter(|| delta_metric(black_box(&grid), &p, &config, &Substreams::new(1)).unwrap())
    });
}

fn jam_timeline(c: &mut Criterion) {
    let s = Scenario::shipped("fig6").unwrap();
    let mut group = c.benchmark_group("timeline");
    group.sample_size(10);
    group.bench_function("fig6", |b| b.iter(|| timeline(black_box(&s), 0).unwrap()));
    group.finish();
}

criterion_group!(benches, session, delta, jam_timeline);
criterion_main!(benches);
