use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use vtmm_bench::{batch, network, random_matrix, synth};
use vtmm_core::scoring::{class_score, score_videos};
use vtmm_core::{AnnotatedFeature, FeatureKind, ScoreMode};

fn inference(c: &mut Criterion) {
    let net = network(1);
    let (videos, texts) = batch(&net, 64, 2);
    c.bench_function("predict_batch_64", |b| {
        b.iter(|| {
            net.predict_batch(black_box(videos.view()), black_box(texts.view()))
                .unwrap()
        })
    });

    let videos = random_matrix(20, net.dims().video_in, 3);
    let texts = random_matrix(50, net.dims().text_in, 4);
    c.bench_function("degree_matrix_20x50", |b| {
        b.iter(|| {
            net.degree_matrix(black_box(videos.view()), black_box(texts.view()))
                .unwrap()
        })
    });
}

fn training(c: &mut Criterion) {
    let mut net = network(5);
    let (videos, texts) = batch(&net, 16, 6);
    let labels: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    c.bench_function("train_step_16", |b| {
        b.iter_batched(
            || (videos.clone(), texts.clone()),
            |(v, t)| {
                let cache = net.forward_train(v, t, &mut rng).unwrap();
                let grads = net.backward(&cache, &labels).unwrap();
                net.sgd_step(&grads, 1e-3).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

fn scoring(c: &mut Criterion) {
    let features: Vec<AnnotatedFeature> = (0..32)
        .map(|i| {
            AnnotatedFeature::new(
                format!("f{i}"),
                if i % 4 == 0 { -0.5 } else { 1.0 },
                FeatureKind::CommonShort,
            )
        })
        .collect();
    let degrees: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
    c.bench_function("class_score_32", |b| {
        b.iter(|| class_score("c", black_box(&features), black_box(&degrees), ScoreMode::Literal).unwrap())
    });

    let net = network(8);
    let (s, encoder) = synth(5, 10);
    let videos: Vec<_> = s.dataset.select(None);
    c.bench_function("score_videos_50x5", |b| {
        b.iter(|| score_videos(&net, &videos, &s.annotations, &encoder, ScoreMode::Subtractive).unwrap())
    });
}

criterion_group!(benches, inference, training, scoring);
criterion_main!(benches);
