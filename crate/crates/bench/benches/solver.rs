use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use porous_bench::wetting_front;
use porous_core::linalg::cg_solve;
use porous_core::Assembler;
use porous_core::Stepper;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for n in [16, 32, 64] {
        let sc = wetting_front(n);
        let asm = Assembler::new(&sc.mesh);
        let coeff = vec![1.0; sc.mesh.node_count()];
        let u = sc.initial[0].clone();
        g.bench_with_input(BenchmarkId::new("stiffness", n), &n, |b, _| {
            b.iter(|| asm.stiffness(black_box(&coeff)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("convection", n), &n, |b, _| {
            b.iter(|| asm.convection(black_box(&coeff), black_box(&u), false).unwrap())
        });
    }
    g.finish();
}

fn krylov(c: &mut Criterion) {
    let mut g = c.benchmark_group("cg");
    for n in [16, 32, 64] {
        let sc = wetting_front(n);
        let asm = Assembler::new(&sc.mesh);
        let nodes = sc.mesh.node_count();
        let mut k = asm.stiffness(&vec![1.0; nodes]).unwrap();
        k.scale(sc.tau);
        k.add_diagonal(&asm.lumped_mass(&vec![1.0; nodes]).unwrap());
        let rhs = asm.lumped_mass(&sc.initial[0]).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| cg_solve(&k, black_box(&rhs), &vec![0.0; nodes], 1e-10, 10 * nodes).unwrap())
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    for n in [16, 32] {
        let sc = wetting_front(n);
        let stepper = Stepper::new(&sc);
        let s0 = sc.initial_state();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| stepper.advance(black_box(&s0), 1).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, krylov, step);
criterion_main!(benches);
