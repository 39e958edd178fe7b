use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mldlmc_bench::{kuramoto, rare_event};
use mldlmc_core::{
    level_difference, simulate_decoupled_path, simulate_particle_system, Executor, Hierarchy,
    RandomBlock, Sampler, StreamKey, WienerPath,
};

fn particle_system(c: &mut Criterion) {
    let model = kuramoto();
    let h = Hierarchy::default();
    let mut group = c.benchmark_group("particle_system");
    for level in [2usize, 4, 6] {
        let (p, n) = (h.particles(level), h.steps(level));
        let block = RandomBlock::new(StreamKey::root(1), p, n);
        group.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, _| {
            b.iter(|| simulate_particle_system(&model, p, n, 1.0, black_box(&block)).unwrap())
        });
    }
    group.finish();
}

fn decoupled_path(c: &mut Criterion) {
    let h = Hierarchy::default();
    let (p, n) = (h.particles(4), h.steps(4));
    let mut group = c.benchmark_group("decoupled_path");
    for (name, tilted) in [("plain", false), ("tilted", true)] {
        let problem = rare_event(2.5, tilted);
        let block = RandomBlock::new(StreamKey::root(2), p, n);
        let law = simulate_particle_system(&problem.model, p, n, 1.0, &block).unwrap();
        let mut rng = StreamKey::root(3).rng(0);
        let path = WienerPath::sample(&problem.model, &mut rng, n, 1.0);
        group.bench_function(name, |b| {
            b.iter(|| {
                simulate_decoupled_path(&problem.model, &law, &problem.control, black_box(&path))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn level_differences(c: &mut Criterion) {
    let problem = rare_event(2.5, true);
    let exec = Executor::serial();
    let mut group = c.benchmark_group("level_difference");
    group.sample_size(10);
    for sampler in [Sampler::Naive, Sampler::Antithetic] {
        group.bench_function(sampler.name(), |b| {
            b.iter(|| {
                level_difference(&problem, sampler, 3, 4, 100, StreamKey::root(4), &exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, particle_system, decoupled_path, level_differences);
criterion_main!(benches);
