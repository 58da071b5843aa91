use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use evfusion::encoders::Encoder;
use evfusion::events::simulate_events;
use evfusion::fusion::{train_stage1, FusionConfig, FusionModel, TrainConfig, Triplet};
use evfusion::illumination::degrade;
use evfusion_bench::{frame, stub_source, triplets};

fn image_ops(c: &mut Criterion) {
    let img = frame();
    c.bench_function("degrade_32x32", |b| b.iter(|| degrade(black_box(&img), 0.1).unwrap()));
    let gray = img.to_gray();
    c.bench_function("simulate_events_32x32", |b| {
        b.iter(|| simulate_events(black_box(&gray), 1, 0.1).unwrap())
    });
    let source = stub_source();
    c.bench_function("stub_encode_vision", |b| b.iter(|| source.vision().encode(black_box(&img)).unwrap()));
    c.bench_function("stub_encode_dino", |b| b.iter(|| source.dino_encoder().encode(black_box(&img)).unwrap()));
}

fn fusion(c: &mut Criterion) {
    let corpus = triplets(8, &[0.1, 10.0]);
    let model = FusionModel::init(&FusionConfig::default()).unwrap();
    let t = &corpus[0];
    c.bench_function("fusion_forward", |b| {
        b.iter(|| model.forward(black_box(&t.extreme), &t.dino, &t.event).unwrap())
    });
    let batch: Vec<&Triplet> = corpus.iter().take(4).collect();
    c.bench_function("fusion_loss_and_grad_batch4", |b| {
        b.iter(|| model.loss_and_grad(black_box(&batch)).unwrap())
    });
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    c.bench_function("train_one_epoch_16_triplets", |b| {
        b.iter(|| train_stage1(black_box(&corpus), &cfg, &FusionConfig::default()).unwrap())
    });
}

criterion_group!(benches, image_ops, fusion);
criterion_main!(benches);
