//! Sequential versus parallel execution of the data-parallel paths: scoring
//! the full label block, ranking one label, and cross-validation folds.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use labelfact_core::eval::{run_benchmark, BenchmarkConfig, BenchmarkData};
use labelfact_core::rank::{full_label_block_with, top_texts_for_label_with};
use labelfact_core::synth::planted_ratings;
use labelfact_core::{Execution, FactorModel, HyperParams, ObservationStore};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn scoring(c: &mut Criterion) {
    let (m, n1, n2, k) = (50_000, 20_000, 8, 16);
    let model = FactorModel::init(m, n1 + n2, k, 1, 0.1);
    let store = ObservationStore::new(m, n1, n2);
    let rows: Vec<usize> = (0..m).collect();

    let mut group = c.benchmark_group("label_block");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| full_label_block_with(exec, &model, n1, n2, &rows).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("top_texts");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| top_texts_for_label_with(exec, &model, &store, 0, 1000, false).unwrap())
        });
    }
    group.finish();
}

fn folds(c: &mut Criterion) {
    let data = BenchmarkData::from_ratings(&planted_ratings(300, 200, 4, 0.2, 3)).unwrap();
    let mut group = c.benchmark_group("cross_validation");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = BenchmarkConfig {
            hp: HyperParams {
                alpha: 0.02,
                max_passes: 20,
                ..Default::default()
            },
            folds: 10,
            exec,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_benchmark(&data, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scoring, folds);
criterion_main!(benches);
