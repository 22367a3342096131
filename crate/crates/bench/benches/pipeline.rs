use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ensemble_judge::agents::{confidence_from_logprobs, parse_output, render_prompt};
use ensemble_judge::eval::regime_of;
use ensemble_judge::features::build_features;
use ensemble_judge::ingest::{preprocess, PreprocessConfig};
use ensemble_judge::meta::{fit_logistic, tune_c, Design, FitOptions, DEFAULT_C_GRID};
use ensemble_judge::Lens;
use ensemble_judge_bench::{feature_rows, synthetic_outputs};

fn text_stages(c: &mut Criterion) {
    let raw = "TICKER: ACME\nFORM: 8-K\n\nHeader\nHeader\nRevenue  rose 5% to $12.3M.\n".repeat(200);
    let cfg = PreprocessConfig::default();
    c.bench_function("preprocess_10k_chars", |b| b.iter(|| preprocess(black_box(&raw), &cfg)));
    let clean = preprocess(&raw, &cfg);
    c.bench_function("render_prompt", |b| b.iter(|| render_prompt(Lens::Risk, black_box(&clean))));
    let gen = r#"Sure. {"label":"positive","rationale":"Margins widened.","confidence":0.82} Done."#;
    c.bench_function("parse_output", |b| b.iter(|| parse_output(black_box(gen), true)));
    let lps = [-0.01, -0.2, -0.05];
    c.bench_function("confidence_from_logprobs", |b| b.iter(|| confidence_from_logprobs(black_box(&lps))));
}

fn aggregation(c: &mut Criterion) {
    let data = synthetic_outputs(5_000, 42);
    c.bench_function("build_features_5k", |b| {
        b.iter(|| {
            for (_, outs) in &data {
                black_box(build_features(&outs.iter().collect::<Vec<_>>()).unwrap());
            }
        })
    });
    c.bench_function("regime_of_5k", |b| {
        b.iter(|| {
            for (_, outs) in &data {
                black_box(regime_of(&outs.iter().collect::<Vec<_>>(), 0.1).unwrap());
            }
        })
    });

    let rows = feature_rows(&data);
    let x = Design::from_rows(&rows.iter().map(|r| r.features.0).collect::<Vec<_>>()).unwrap();
    let y: Vec<u8> = rows.iter().map(|r| r.target).collect();
    let opts = FitOptions::default();
    let mut group = c.benchmark_group("meta");
    group.sample_size(20);
    group.bench_function("fit_logistic_5k", |b| b.iter(|| fit_logistic(&x, &y, 1.0, &opts).unwrap()));
    let (train, dev) = rows.split_at(4_000);
    group.bench_function("tune_c_grid", |b| b.iter(|| tune_c(train, dev, &DEFAULT_C_GRID, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, text_stages, aggregation);
criterion_main!(benches);
