use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dpad_core::data::{synthetic_digits, SyntheticSplit};
use dpad_core::dp::{dp_sgd_step, sgd_step, DpConfig, NoiseStream};
use dpad_core::nn::{build_model, LossKind, ModelArch, Sample};

fn image_batch(n: usize) -> (Vec<Sample>, Vec<Sample>) {
    let ds = synthetic_digits(n, SyntheticSplit::Train, 0);
    (ds.to_autoencoder_samples(), ds.to_classifier_samples())
}

fn per_example_gradients(c: &mut Criterion) {
    let (ae, cls) = image_batch(64);
    let ae_refs: Vec<&Sample> = ae.iter().collect();
    let cls_refs: Vec<&Sample> = cls.iter().collect();
    let mut g = c.benchmark_group("per_example_gradients_b64");
    let dense = build_model(&ModelArch::default_dense_autoencoder(), 1).unwrap();
    g.bench_function("dense_autoencoder", |b| {
        b.iter(|| black_box(dense.batch_gradients(&ae_refs, LossKind::ReconstructionMse).unwrap()))
    });
    let classifier = build_model(&ModelArch::default_classifier(), 1).unwrap();
    g.bench_function("classifier", |b| {
        b.iter(|| black_box(classifier.batch_gradients(&cls_refs, LossKind::CrossEntropy).unwrap()))
    });
    let conv = build_model(&ModelArch::default_conv_autoencoder(), 1).unwrap();
    let few: Vec<&Sample> = ae_refs[..8].to_vec();
    g.bench_function("conv_autoencoder_b8", |b| {
        b.iter(|| black_box(conv.batch_gradients(&few, LossKind::ReconstructionMse).unwrap()))
    });
    let lstm = build_model(&ModelArch::default_lstm(29, 10), 1).unwrap();
    let seqs: Vec<Sample> =
        (0..64).map(|i| Sample::next_token((0..10).map(|t| 2 + (i + t) % 27).collect(), 2 + i % 27)).collect();
    let seq_refs: Vec<&Sample> = seqs.iter().collect();
    g.bench_function("lstm", |b| {
        b.iter(|| black_box(lstm.batch_gradients(&seq_refs, LossKind::CrossEntropy).unwrap()))
    });
    g.finish();
}

fn training_steps(c: &mut Criterion) {
    let (ae, _) = image_batch(200);
    let refs: Vec<&Sample> = ae.iter().collect();
    let model = build_model(&ModelArch::default_dense_autoencoder(), 1).unwrap();
    let mut g = c.benchmark_group("step_dense_autoencoder_b200");
    g.sample_size(20);
    g.bench_function("sgd", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| sgd_step(&mut m, &refs, LossKind::ReconstructionMse, 0.1).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let cfg = DpConfig::private(1.0, 1.0, 0.1, 200, 1, 7);
    let noise = NoiseStream::new(7);
    g.bench_function("dp_sgd", |b| {
        b.iter_batched(
            || (model.clone(), noise.for_step(0)),
            |(mut m, mut rng)| dp_sgd_step(&mut m, &refs, LossKind::ReconstructionMse, &cfg, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, per_example_gradients, training_steps);
criterion_main!(benches);
