use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedsim_bench::{dataset, shard, updates};
use fedsim_core::aggregation::{aggregate_mixed, ScalingRule};
use fedsim_core::model_data::{local_update, loss_and_gradient};
use fedsim_core::ParameterVector;
use std::hint::black_box;

fn gradient(c: &mut Criterion) {
    let data = dataset();
    let params = ParameterVector::zeros(data.param_len());
    let mut group = c.benchmark_group("loss_and_gradient");
    for n in [32, 256, 2048] {
        let idx = shard(&data, n).sample_indices;
        group.bench_with_input(BenchmarkId::from_parameter(n), &idx, |b, idx| {
            b.iter(|| loss_and_gradient(black_box(&params), &data, idx).unwrap())
        });
    }
    group.finish();
}

fn local(c: &mut Criterion) {
    let data = dataset();
    let start = ParameterVector::zeros(data.param_len());
    let s = shard(&data, 200);
    c.bench_function("local_update/200x20steps", |b| {
        b.iter(|| local_update(black_box(&start), &data, &s, 0.1, 20, 20, 3).unwrap())
    });
}

fn aggregate(c: &mut Criterion) {
    let len = dataset().param_len();
    let all = updates(100, len);
    let (fresh, stale): (Vec<_>, Vec<_>) = all.into_iter().partition(|u| u.staleness == 0);
    let mut group = c.benchmark_group("aggregate_mixed");
    for (name, rule) in [
        ("equal", ScalingRule::Equal),
        ("dynsgd", ScalingRule::DynSgd),
        ("hybrid", ScalingRule::Hybrid { beta: 0.35 }),
    ] {
        group.bench_function(name, |b| b.iter(|| aggregate_mixed(black_box(&fresh), &stale, rule)));
    }
    group.finish();
}

criterion_group!(benches, gradient, local, aggregate);
criterion_main!(benches);
