use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use maxlow_core::data::bump_data;
use maxlow_core::grid::presets::cube_with_cavity;
use maxlow_core::maxwell::Resolvent;
use maxlow_core::statics::{build_B, StaticSolver};
use maxlow_core::whole_space::{solve_whole_space, sphere_points};
use maxlow_core::{assemble, BoundaryLabel, Complex64, FieldKind, GridDomain, HelmholtzKernel, MaterialLaw, Side};

fn representation(c: &mut Criterion) {
    let mut group = c.benchmark_group("representation");
    group.sample_size(10);
    for n in [8usize, 12] {
        let grid = Arc::new(GridDomain::whole_space([n; 3], 0.125, [0.0; 3]).unwrap());
        let (f, g) = bump_data(&grid, 0.4, 1);
        let kernel = HelmholtzKernel::new(Complex64::new(1.0, 0.0), 1.0, 1.0).unwrap();
        let targets = sphere_points(4.0, 50);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_whole_space(black_box(&f), &g, &kernel, &targets).unwrap())
        });
    }
    group.finish();
}

fn cavity(n: usize) -> (Arc<GridDomain>, MaterialLaw) {
    let d = Arc::new(cube_with_cavity(n, 2, 0.25, BoundaryLabel::Gamma1).unwrap());
    let law = MaterialLaw::random_spd(d.len(FieldKind::Cell), 1.0, 1.0, 0.3, 7).unwrap();
    (d, law)
}

fn assembly(c: &mut Criterion) {
    let (d, law) = cavity(8);
    c.bench_function("assemble/8", |b| b.iter(|| assemble(black_box(&d), &law).unwrap()));
}

fn resolvent(c: &mut Criterion) {
    let (d, law) = cavity(6);
    let op = assemble(&d, &law).unwrap();
    let rhs: Vec<Complex64> = (0..op.n_e() + op.n_f()).map(|k| Complex64::new((k as f64).sin(), 0.0)).collect();
    let mut group = c.benchmark_group("resolvent");
    group.sample_size(10);
    group.bench_function("factor/6", |b| b.iter(|| Resolvent::new(&op, None, Complex64::new(0.5, 0.1)).unwrap()));
    let r = Resolvent::new(&op, None, Complex64::new(0.5, 0.1)).unwrap();
    group.bench_function("solve/6", |b| b.iter(|| r.solve(black_box(&rhs))));
    group.finish();
}

fn statics(c: &mut Criterion) {
    let (d, law) = cavity(8);
    let op = assemble(&d, &law).unwrap();
    let mut group = c.benchmark_group("statics");
    group.sample_size(10);
    group.bench_function("basis/8", |b| b.iter(|| build_B(black_box(&op), Side::Electric).unwrap()));
    group.bench_function("solver/8", |b| b.iter(|| StaticSolver::new(black_box(&op)).unwrap()));
    group.finish();
}

criterion_group!(benches, representation, assembly, resolvent, statics);
criterion_main!(benches);
