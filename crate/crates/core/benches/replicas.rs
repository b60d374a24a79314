use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dp_nash::harness::{run_monte_carlo, terminal_distribution, Scenario};
use dp_nash::Execution;

const FIXED: &str = include_str!("../../../scenarios/fixed_cycle.json");

fn monte_carlo(c: &mut Criterion) {
    let base = Scenario::from_json(FIXED).unwrap();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for replicas in [256, 2000] {
        let s = base.with_replicas(replicas).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", replicas), &s, |b, s| {
            b.iter(|| run_monte_carlo(s, &Execution::Sequential).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", replicas), &s, |b, s| {
            b.iter(|| run_monte_carlo(s, &Execution::Parallel(None)).unwrap())
        });
    }
    group.finish();
}

fn distribution(c: &mut Criterion) {
    let s = Scenario::from_json(FIXED).unwrap();
    let mut group = c.benchmark_group("terminal_distribution");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| terminal_distribution(&s, 20_000, &Execution::Sequential).unwrap())
    });
    group.bench_function("parallel", |b| {
        b.iter(|| terminal_distribution(&s, 20_000, &Execution::Parallel(None)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, monte_carlo, distribution);
criterion_main!(benches);
