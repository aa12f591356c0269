use criterion::{criterion_group, criterion_main, Criterion};
use sida_bench::fixture;
use sida_core::augment::{patch_style_transfer, MixParams};
use sida_core::tensor::{adain, channel_stats, RandomSource};
use sida_core::trainer::{adapt, pretrain_source, TrainConfig};
use std::hint::black_box;

fn bench_style_ops(c: &mut Criterion) {
    let fx = fixture(8);
    let f = &fx.source[0].feature;
    let entries = fx.bank.entries();
    let (main, aux) = (&entries[3], &entries[0]);

    c.bench_function("channel_stats_32x32x32", |b| b.iter(|| channel_stats(black_box(f))));
    c.bench_function("adain_32x32x32", |b| b.iter(|| adain(black_box(f), &main.stats).unwrap()));
    c.bench_function("patch_style_transfer_m3", |b| {
        let params = MixParams::default();
        let mut rng = RandomSource::new(1);
        b.iter(|| patch_style_transfer(black_box(f), main, aux, &params, &mut rng).unwrap())
    });
}

fn bench_extract(c: &mut Criterion) {
    let fx = fixture(1);
    let img = &fx.benchmark.source_train[0].image;
    c.bench_function("extract_64x64", |b| b.iter(|| fx.extractor.extract(black_box(img)).unwrap()));
}

fn bench_training(c: &mut Criterion) {
    let fx = fixture(32);
    let cfg = TrainConfig {
        iters: 20,
        ..TrainConfig::default()
    };
    let pre = pretrain_source(&cfg, &fx.source, 5).unwrap().params;
    let night = fx.bank.domains()[1].clone();

    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("pretrain_20_iters", |b| {
        b.iter(|| pretrain_source(&cfg, black_box(&fx.source), 5).unwrap())
    });
    group.bench_function("adapt_20_iters", |b| {
        b.iter(|| adapt(&cfg, black_box(&fx.source), &fx.bank, &night, &pre).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_style_ops, bench_extract, bench_training);
criterion_main!(benches);
