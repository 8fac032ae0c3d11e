use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use padoa_core::oracle::{enumerate, milp_direct};
use padoa_core::random::{random_instance, tiny, RandomSpec};
use padoa_core::tcl::{generate, TclConfig, Topology};
use padoa_core::{solve_fixed_z, solve_oa, solve_padoa, OaOptions, PadoaOptions};

fn fixed_integer(c: &mut Criterion) {
    let p = tiny();
    c.bench_function("fixed_z/tiny", |b| {
        b.iter(|| solve_fixed_z(black_box(&p), &[1.0, 1.0], 1e-8).unwrap())
    });
}

fn random_suite(c: &mut Criterion) {
    let problems: Vec<_> = (0..10).map(|s| random_instance(s, &RandomSpec::default())).collect();
    let mut group = c.benchmark_group("random10");
    group.bench_function("enumerate", |b| {
        b.iter(|| problems.iter().map(|p| enumerate(p, 1e-9).unwrap().value).sum::<f64>())
    });
    group.bench_function("oa", |b| {
        b.iter(|| problems.iter().map(|p| solve_oa(p, &OaOptions::new(1e-6)).unwrap().value).sum::<f64>())
    });
    group.bench_function("padoa", |b| {
        b.iter(|| problems.iter().map(|p| solve_padoa(p, &PadoaOptions::new(1e-6)).unwrap().value).sum::<f64>())
    });
    group.finish();
}

fn tcl(c: &mut Criterion) {
    let mut group = c.benchmark_group("tcl_h8");
    group.sample_size(10);
    for (rooms, topology) in [(3, Topology::Complete), (4, Topology::Cycle)] {
        let milp = generate(&TclConfig::new(rooms, 8, topology)).unwrap();
        group.bench_with_input(BenchmarkId::new("milp_direct", rooms), &milp, |b, p| {
            b.iter(|| milp_direct(p).unwrap().value)
        });
        group.bench_with_input(BenchmarkId::new("padoa_gamma0", rooms), &milp, |b, p| {
            b.iter(|| solve_padoa(p, &PadoaOptions::new(1e-6)).unwrap().value)
        });
        let mut config = TclConfig::new(rooms, 8, topology);
        config.gamma = 1.0;
        let quadratic = generate(&config).unwrap();
        group.bench_with_input(BenchmarkId::new("padoa_gamma1", rooms), &quadratic, |b, p| {
            b.iter(|| solve_padoa(p, &PadoaOptions::new(1e-6)).unwrap().value)
        });
    }
    group.finish();
}

criterion_group!(benches, fixed_integer, random_suite, tcl);
criterion_main!(benches);
