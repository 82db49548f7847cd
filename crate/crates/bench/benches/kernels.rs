use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use psz_bench::desk_fixture;
use psz_core::eval::{evaluate_neighborhood, sample_anchors, Aggregation, FreeFieldAtfs, GeneratorPair, NeighborhoodConfig, SummaryMode};
use psz_core::training::batch_objective;

fn generator(c: &mut Criterion) {
    let f = desk_fixture();
    c.bench_function("generator_forward_batch32", |b| {
        b.iter(|| f.params.forward_batch(black_box(&f.batch)).unwrap())
    });
    let (out, tape) = f.params.forward_batch(&f.batch).unwrap();
    let adjoint = Array2::<f64>::ones(out.raw_dim());
    c.bench_function("generator_backward_batch32", |b| {
        b.iter(|| f.params.backward(&tape, black_box(&adjoint.view())).unwrap())
    });
}

fn objective(c: &mut Criterion) {
    let f = desk_fixture();
    let shifted: Vec<_> = f.batch.iter().map(|x| x.add(&[0.0, 0.0, 0.005, -0.005])).collect();
    let mut group = c.benchmark_group("training_step");
    group.sample_size(20);
    group.bench_function("baseline", |b| {
        b.iter(|| batch_objective(&f.params, &f.problem, &f.config.scene, &f.grid, black_box(&f.batch), None).unwrap())
    });
    group.bench_function("with_consistency", |b| {
        b.iter(|| batch_objective(&f.params, &f.problem, &f.config.scene, &f.grid, black_box(&f.batch), Some(&shifted)).unwrap())
    });
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let f = desk_fixture();
    let scene = &f.config.scene;
    let atfs = FreeFieldAtfs::new(scene, &f.grid, &[f.config.band]).unwrap();
    let models = [f.params.clone()];
    let pair = GeneratorPair::new(&models).unwrap();
    let cfg = NeighborhoodConfig {
        r_max: 0.05,
        spacing: 0.01,
        mode: SummaryMode::Cvar10,
        aggregation: Aggregation::PerBand,
        listeners: vec![1],
    };
    let anchor = sample_anchors(7, scene, cfg.r_max, 1).unwrap()[0];
    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    group.bench_function("neighborhood_11x11", |b| {
        b.iter(|| evaluate_neighborhood(black_box(&anchor), &atfs, &pair, scene, &f.grid, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, generator, objective, evaluation);
criterion_main!(benches);
