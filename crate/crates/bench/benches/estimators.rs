//! Throughput benchmarks for the estimation pipeline: nuisance fitting,
//! the per-subject score kernel, the full cross-fitted estimator, and the
//! weighted scalar hazard-model solve.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use msm_aipw::estimator::{fit_aipw, fit_naive_cox, NuisanceSpec};
use msm_aipw::nuisance::ClipConfig;
use msm_aipw::scores::{accumulate_fold, build_time_grid};
use msm_aipw::sim::{generate, ScenarioFamily};
use msm_aipw::Dataset;
use std::hint::black_box;

fn scenario_data(n: usize) -> Dataset {
    generate(ScenarioFamily::Main, n, 1, 7)
        .expect("benchmark scenario should generate")
        .data
}

fn bench_nuisance_fit(c: &mut Criterion) {
    let data = scenario_data(500);
    let spec = NuisanceSpec::working_models(ClipConfig::default());
    c.bench_function("nuisance_fit_n500", |b| {
        b.iter(|| spec.fit(black_box(&data)).unwrap())
    });
}

fn bench_subject_scores(c: &mut Criterion) {
    let data = scenario_data(500);
    let spec = NuisanceSpec::working_models(ClipConfig::default());
    let nuis = spec.fit(&data).unwrap();
    let grid = build_time_grid(&data, &nuis).unwrap();
    let gn = nuis.on_grid(grid.times());
    let indices: Vec<usize> = (0..data.n()).collect();
    c.bench_function("subject_scores_n500", |b| {
        b.iter(|| accumulate_fold(black_box(&data), &indices, &gn))
    });
}

fn bench_aipw_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("aipw_fit");
    group.sample_size(10);
    for &n in &[250usize, 1000] {
        let data = scenario_data(n);
        let spec = NuisanceSpec::working_models(ClipConfig::default());
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| fit_aipw(black_box(d), &spec, 5, 7).unwrap())
        });
    }
    group.finish();
}

fn bench_scalar_cox(c: &mut Criterion) {
    let data = scenario_data(2000);
    c.bench_function("unadjusted_cox_n2000", |b| {
        b.iter(|| fit_naive_cox(black_box(&data)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_nuisance_fit,
    bench_subject_scores,
    bench_aipw_fit,
    bench_scalar_cox
);
criterion_main!(benches);
