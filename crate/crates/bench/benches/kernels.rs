use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use wavepinn_bench::{inputs, low_rank, point_sets};
use wavepinn_core::diffnet::{Activation, Mlp};
use wavepinn_core::pca_filter::fit_pca;
use wavepinn_core::pinn_trainer::{loss, VelocityModel};
use wavepinn_core::wavegen::{solve_wave_with, Boundary, GeneratorPreset, Grid2D, SolverOptions, SpeedField};

fn diffnet(c: &mut Criterion) {
    let net = Mlp::init(&[3, 64, 64, 64, 64, 1], Activation::Tanh, 10.0, 0).unwrap();
    let x = inputs(512, 1);
    c.bench_function("forward 4x64, 512 points", |b| b.iter(|| net.record(black_box(x.view()), &[]).unwrap()));
    c.bench_function("second derivatives 4x64, 512 points", |b| {
        b.iter(|| net.record(black_box(x.view()), &[0, 1, 2]).unwrap())
    });
    let (data, residual, scaling) = point_sets(512, 2);
    let v = VelocityModel::scalar(2.0, 10.0);
    c.bench_function("loss gradient 4x64, 512+512 points", |b| {
        b.iter(|| loss(&net, &v, black_box(&data), &residual, 100.0, &scaling, true).unwrap())
    });
}

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    let mut g = Grid2D::desk();
    g.nt = 100;
    let p = GeneratorPreset::desk();
    let v = SpeedField::uniform(&g, 2.9).unwrap();
    let src = p.source(0.0);
    for r in [1, 2] {
        let opts = SolverOptions {
            oversample: r,
            ..p.solver_options(Boundary::Absorbing)
        };
        group.bench_function(format!("desk grid, 100 steps, oversample {r}"), |b| {
            b.iter(|| solve_wave_with(&v, &g, Some(&src), &opts).unwrap())
        });
    }
    group.finish();
}

fn pca(c: &mut Criterion) {
    let snapshot = low_rank(60, 60, 5, 3);
    c.bench_function("pca fit 60x60", |b| b.iter(|| fit_pca(black_box(snapshot.view())).unwrap()));
    let stack = low_rank(240, 240, 45, 4);
    let mut group = c.benchmark_group("pca");
    group.sample_size(10);
    group.bench_function("fit 240x240", |b| {
        b.iter_batched(|| stack.clone(), |m| fit_pca(m.view()).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, diffnet, solver, pca);
criterion_main!(benches);
