use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use merclip_bench::model_and_inputs;
use merclip_core::ingest::Task;
use merclip_core::train::Trainer;

fn forward_backward(c: &mut Criterion) {
    let (model, inputs, _) = model_and_inputs(Task::Emotion, 4);
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("loss_and_grads/1", |b| b.iter(|| black_box(model.loss_and_grads(&[&inputs[0]], 0).unwrap().loss)));
    group.bench_function("infer/4", |b| b.iter(|| black_box(model.infer(&inputs).unwrap().len())));
    group.finish();
}

fn optimizer_step(c: &mut Criterion) {
    let (model, inputs, cfg) = model_and_inputs(Task::Sentiment, 4);
    let mut trainer = Trainer::new(model, cfg.train.clone()).unwrap();
    let batch: Vec<_> = inputs.iter().collect();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step/batch4", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            black_box(trainer.train_step(&batch, i).unwrap().loss)
        })
    });
    group.finish();
}

criterion_group!(benches, forward_backward, optimizer_step);
criterion_main!(benches);
