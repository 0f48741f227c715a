use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hydrolim::graphical::{evolve, generate_events};
use hydrolim::harness::sample_initial_state;
use hydrolim::models::JumpKernel;
use hydrolim::{Boundary, Configuration, Environment, Model, PiecewiseConstantProfile};

fn torus_half_filled(model: &Model, len: usize) -> Configuration {
    let eta = sample_initial_state(&PiecewiseConstantProfile::constant(0.5 * model.cap() as f64), 1, 0, len, model.cap(), 3)
        .unwrap();
    Configuration::new(0, eta.occupancies().to_vec(), model.cap(), Boundary::Periodic).unwrap()
}

fn evolve_models(c: &mut Criterion) {
    let len = 4096;
    let time = 50.0;
    let models = [
        ("tasep", Model::tasep()),
        ("two_step", Model::kstep_exclusion(2, JumpKernel::table(&[(1, 1.0)]).unwrap()).unwrap()),
    ];
    let env = Environment::homogeneous(0, len);
    let mut group = c.benchmark_group("evolve");
    for (name, model) in &models {
        let fam = model.bind(&env).unwrap();
        let eta = torus_half_filled(model, len);
        let stream = generate_events(fam, 0, len, time, 1).unwrap();
        group.throughput(Throughput::Elements(stream.count_until(time) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(name), &eta, |b, eta| {
            b.iter(|| evolve(black_box(eta), &stream, time).unwrap())
        });
    }
    group.finish();
}

fn event_generation(c: &mut Criterion) {
    let len = 4096;
    let model = Model::tasep();
    let env = Environment::homogeneous(0, len);
    let fam = model.bind(&env).unwrap();
    c.bench_function("generate_events/4096x50", |b| {
        b.iter(|| {
            let s = generate_events(fam, 0, len, 50.0, black_box(9)).unwrap();
            s.iter().count()
        })
    });
}

criterion_group!(benches, evolve_models, event_generation);
criterion_main!(benches);
