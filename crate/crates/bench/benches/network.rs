use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use megasim_bench::slim_fly_experiment;

fn permutation_run(c: &mut Criterion) {
    let (e, prepared) = slim_fly_experiment(5, 4, 1.0);
    let mut g = c.benchmark_group("network");
    g.sample_size(10);
    g.throughput(Throughput::Elements(prepared.flows.len() as u64));
    g.bench_function("slimfly_q5_permutation", |b| {
        b.iter(|| e.run::<std::io::Sink>(&prepared, None).unwrap().0.run.events)
    });
    g.finish();
}

criterion_group!(benches, permutation_run);
criterion_main!(benches);
