use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hydrolim::scl::{riemann_solve, CauchyScheme};
use hydrolim::{FluxFunction, PiecewiseConstantProfile};

fn riemann(c: &mut Criterion) {
    let g = FluxFunction::two_step();
    c.bench_function("riemann_solve/two_step_contact", |b| {
        b.iter(|| riemann_solve(&g, black_box(0.9), black_box(0.05)))
    });
}

fn cauchy(c: &mut Criterion) {
    let g = FluxFunction::simple_exclusion(1.0);
    let u0 = PiecewiseConstantProfile::from_steps(&[-1.0, -0.5, 0.0, 0.5], &[0.0, 0.9, 0.2, 0.7, 0.0]).unwrap();
    let scheme = CauchyScheme::new(&g, 0.01, 0.45).unwrap();
    c.bench_function("cauchy/tasep_dx0.01_t1", |b| b.iter(|| scheme.solve(black_box(&u0), 1.0).unwrap()));
}

criterion_group!(benches, riemann, cauchy);
criterion_main!(benches);
