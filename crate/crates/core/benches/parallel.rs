use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use lfrgp::exec::Execution;
use lfrgp::experiment::{self, ExperimentConfig};
use lfrgp::gp;
use lfrgp::sector;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn band_and_sector(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let learned = experiment::learn_sector(&cfg, 300, 0, Execution::Sequential).unwrap();
    let grid = gp::linspace(-1.0, 1.0, 2001);
    let mut group = c.benchmark_group("band_and_sector");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("band_points", name), &exec, |b, &exec| {
            b.iter(|| black_box(learned.posterior.band_points(&grid, exec).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("extract_sector", name), &exec, |b, &exec| {
            b.iter(|| black_box(sector::extract_sector(&learned.posterior, &cfg.sector, exec).unwrap()))
        });
    }
    group.finish();
}

fn sweep_learning(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let trials: Vec<u64> = (0..8).collect();
    let mut group = c.benchmark_group("sweep_learning");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("learn_sectors_n100", name), &exec, |b, &exec| {
            b.iter(|| {
                let sectors = exec.map(&trials, |&t| experiment::learn_sector(&cfg, 100, t, Execution::Sequential).unwrap().sector);
                black_box(sectors)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, band_and_sector, sweep_learning);
criterion_main!(benches);
