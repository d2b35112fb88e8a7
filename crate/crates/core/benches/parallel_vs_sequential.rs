use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbmd_core::market_models::{sample_returns_with, MixtureModel};
use rbmd_core::mirror_descent::{dmd_run, initial_point, OptimizerConfig, StepSchedule};
use rbmd_core::parallel::map_indexed;
use rbmd_core::rb_solver::{ObjectiveContext, RiskBudget};
use rbmd_core::{MeasureSpec, Parallelism};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn sampling(c: &mut Criterion) {
    let model = MixtureModel::three_asset_example();
    let mut group = c.benchmark_group("sample_returns_200k");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_returns_with(&model, 200_000, black_box(7), par).unwrap())
        });
    }
    group.finish();
}

fn replications(c: &mut Criterion) {
    let model = MixtureModel::three_asset_example();
    let ctx = ObjectiveContext::new(RiskBudget::uniform(3), MeasureSpec::expected_shortfall(0.95), model.clone())
        .unwrap();
    let mut cfg = OptimizerConfig::new(100.0, StepSchedule::power_law(1.0, 0.55), 500, initial_point(&model, 100.0))
        .unwrap();
    cfg.track_gap = false;
    let mut group = c.benchmark_group("dmd_replications_8x500");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_indexed(8, par, |_| dmd_run(&ctx, &cfg).unwrap().y_final))
        });
    }
    group.finish();
}

criterion_group!(benches, sampling, replications);
criterion_main!(benches);
