use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use huesearch_bench::prepared_survey;
use huesearch_core::imgproc::msrcp;
use huesearch_core::pipeline::label_identity;
use huesearch_core::region::{dominant_color, smooth_semantic_map};
use huesearch_core::synth::{part_vocabulary, pedestrian_fixture, SceneParams};
use huesearch_core::tree::train_tree;
use huesearch_core::{LabelingParams, QuantizationParams, RetinexParams, Rgb, SmoothingParams, TreeTrainParams};

fn tree_benches(c: &mut Criterion) {
    let data = prepared_survey(200_000, 1);
    let mut group = c.benchmark_group("tree");
    group.sample_size(10);
    group.bench_function("train", |b| b.iter(|| train_tree(black_box(&data), &TreeTrainParams::default()).unwrap()));
    let tree = train_tree(&data, &TreeTrainParams::default()).unwrap();
    let colors: Vec<Rgb> = (0..65_536u32).map(|i| Rgb::new((i * 7) as u8, (i >> 8) as u8, ((i * 13) >> 4) as u8)).collect();
    group.throughput(Throughput::Elements(colors.len() as u64));
    group.bench_function("predict_64k", |b| {
        b.iter(|| colors.iter().map(|&c| tree.predict(black_box(c)).len()).sum::<usize>())
    });
    group.finish();
}

fn image_benches(c: &mut Criterion) {
    let fixture = pedestrian_fixture(4, 2, &SceneParams::market());
    let frame = &fixture[0].frames.frames[0];
    let classes = part_vocabulary();
    let upper = (0..classes.len() as u8).find(|&c| classes.name(c) == Some("upper")).expect("upper class");
    let mut group = c.benchmark_group("imaging");
    group.bench_function("msrcp", |b| b.iter(|| msrcp(black_box(&frame.image), &RetinexParams::default()).unwrap()));
    let mask = frame.map.mask(upper);
    group.bench_function("dominant_color", |b| {
        b.iter(|| dominant_color(black_box(&frame.image), &mask, upper, &QuantizationParams::default()).unwrap())
    });
    let smoothing = SmoothingParams::new(20.0).unwrap();
    group.bench_function("smooth_sigma20", |b| b.iter(|| smooth_semantic_map(black_box(&frame.map), &smoothing).unwrap()));
    group.finish();
}

fn labeling_benches(c: &mut Criterion) {
    let tree = train_tree(&prepared_survey(200_000, 1), &TreeTrainParams::default()).unwrap();
    let fixture = pedestrian_fixture(4, 3, &SceneParams::market());
    let mut params = LabelingParams::new(part_vocabulary());
    c.bench_function("label_identity", |b| {
        b.iter_batched(|| &fixture[0].frames, |f| label_identity(f, &tree, &params).unwrap(), BatchSize::SmallInput)
    });
    params.smoothing = Some(SmoothingParams::new(5.0).unwrap());
    c.bench_function("label_identity_smoothed", |b| b.iter(|| label_identity(black_box(&fixture[0].frames), &tree, &params).unwrap()));
}

criterion_group!(benches, tree_benches, image_benches, labeling_benches);
criterion_main!(benches);
