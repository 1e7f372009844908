use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dampwave_bench::fixture;
use dampwave_core::damping::FeedbackLaw;
use dampwave_core::envelope::{build_rate_functions, solve_envelope};
use dampwave_core::mesh::{assemble_operators, build_icosphere};
use dampwave_core::multiplier::{build_global_multiplier, Margins};
use dampwave_core::solver::{stability_budget, Integrator};

fn operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_operators");
    for level in [3, 4, 5] {
        let mesh = build_icosphere(level).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(level), &mesh, |b, m| b.iter(|| assemble_operators(m)));
    }
    g.finish();
}

fn solver_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver_step");
    for (name, law) in [
        ("linear", FeedbackLaw::linear(1.0).unwrap()),
        ("power3", FeedbackLaw::power(3.0).unwrap()),
    ] {
        for level in [3, 4] {
            let (mesh, damping, state) = fixture(level);
            let integrator = Integrator::new(&mesh, &damping, &law).unwrap();
            let dt = 0.5 * stability_budget(&mesh);
            g.bench_function(BenchmarkId::new(name, level), |b| b.iter(|| integrator.step(&state, dt).unwrap()));
        }
    }
    g.finish();
}

fn multiplier(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_global_multiplier");
    g.sample_size(10);
    for level in [3, 4] {
        let mesh = build_icosphere(level).unwrap();
        let eps = 0.1 * mesh.total_area();
        let margins = Margins::new(0.05, 0.05, 0.05);
        g.bench_with_input(BenchmarkId::from_parameter(level), &mesh, |b, m| {
            b.iter(|| build_global_multiplier(m, eps, &margins).unwrap())
        });
    }
    g.finish();
}

fn envelope(c: &mut Criterion) {
    let mut g = c.benchmark_group("envelope");
    for (name, law) in [
        ("linear", FeedbackLaw::linear(1.0).unwrap()),
        ("power3", FeedbackLaw::power(3.0).unwrap()),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let rf = build_rate_functions(&law, 120.0, 1.0, 0.5).unwrap();
                solve_envelope(&rf, 1.0, 20.0, 0.05).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, operators, solver_step, multiplier, envelope);
criterion_main!(benches);
