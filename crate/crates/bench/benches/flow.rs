use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lbmcf_bench::finite_state;
use lbmcf_core::barriers::capped_kappa;
use lbmcf_core::{
    construct_semistable, verify_hyperbola_subsolution, HyperbolaBarrier, PotentialProfile,
    RateVariant,
};

fn graph_steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("graph_step");
    for n in [512, 1024, 4096] {
        let st = finite_state(n).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &st, |bch, st| {
            bch.iter_batched(
                || st.clone(),
                |mut s| {
                    for _ in 0..10 {
                        let dt = s.stable_dt();
                        s.step(dt).unwrap();
                    }
                    s
                },
                criterion::BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

fn stationary_trace(c: &mut Criterion) {
    c.bench_function("construct_semistable", |b| {
        b.iter(|| construct_semistable(3, 10.0, None).unwrap())
    });
}

fn hyperbola_certificate(c: &mut Criterion) {
    let r = 2.0;
    let a = 6.0 * r;
    let prof = PotentialProfile::quadratic_on(a, capped_kappa(a, r, 0.9)).unwrap();
    let hb = HyperbolaBarrier::standard(3, r, prof.k, RateVariant::OuterSquared).unwrap();
    let t = hb.hitting_time(2.0 * r);
    c.bench_function("hyperbola_certificate_128", |b| {
        b.iter(|| verify_hyperbola_subsolution(&hb, &prof, t, 128).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = graph_steps, stationary_trace, hyperbola_certificate
}
criterion_main!(benches);
