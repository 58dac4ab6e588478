use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use blockforge::env::enumerate_actions;
use blockforge::features::{rasterize_action, state_features, task_features};
use blockforge::learner::{forward_psi, init_params, Architecture};
use blockforge::stability::is_stable;
use blockforge::{ActionSpaceConfig, Assembly, ConstructionSpace};
use blockforge_bench::{arch, open_task, square, staircase, tower};

fn stability(c: &mut Criterion) {
    let space = ConstructionSpace::BENCHMARK;
    let mut g = c.benchmark_group("stability");
    for n in [1, 3, 6] {
        let t = tower(n);
        g.bench_with_input(BenchmarkId::new("tower", n), &t, |b, t| b.iter(|| is_stable(black_box(t), &space, 0.6)));
    }
    let a = arch();
    g.bench_function("arch", |b| b.iter(|| is_stable(black_box(&a), &space, 0.6)));
    g.finish();
}

fn enumerate(c: &mut Criterion) {
    let task = open_task();
    let cfg = ActionSpaceConfig::default();
    let mut g = c.benchmark_group("enumerate_actions");
    g.sample_size(20);
    g.bench_function("empty", |b| b.iter(|| enumerate_actions(black_box(&Assembly::new()), &task, &cfg)));
    let s = staircase();
    g.bench_function("three_blocks", |b| b.iter(|| enumerate_actions(black_box(&s), &task, &cfg)));
    g.finish();
}

fn forward(c: &mut Criterion) {
    let task = open_task();
    let mut g = c.benchmark_group("forward_psi");
    g.sample_size(20);
    for (d, width) in [(32, 8), (32, 16), (64, 16)] {
        let arch = Architecture {
            base_width: width,
            ..Architecture::default()
        };
        let params = init_params(0, &arch);
        let s = staircase();
        let psi = state_features(&s, d);
        let phi = rasterize_action(&square(0.5, 2.5), d);
        let img = task_features(&task, d);
        g.bench_function(BenchmarkId::new(format!("w{width}"), d), |b| {
            b.iter(|| forward_psi(&params, black_box(&psi), &phi, &img).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stability, enumerate, forward);
criterion_main!(benches);
