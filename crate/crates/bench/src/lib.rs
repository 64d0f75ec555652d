//! Shared inputs for the benchmarks.

use merclip_core::config::RunConfig;
use merclip_core::data::DataSplit;
use merclip_core::ingest::synthetic::{generate, SyntheticSpec};
use merclip_core::ingest::{preprocess, Task};
use merclip_core::model::{Model, SampleInput};
use merclip_core::pipeline::build_model;
use merclip_core::tensor::Mat;

/// Tiny preset with two frames per clip, as used by the desk-scale runs.
pub fn desk_config(task: Task) -> RunConfig {
    RunConfig::default()
        .for_task(task, "mosei")
        .with_overrides(&["preprocess.frames=2".into(), format!("train.task=\"{}\"", task.as_str())])
        .expect("valid overrides")
}

pub fn model_and_inputs(task: Task, samples: usize) -> (Model, Vec<SampleInput>, RunConfig) {
    let cfg = desk_config(task);
    let spec = SyntheticSpec {
        max_duration: 2.0,
        ..SyntheticSpec::train_only(samples, 0)
    };
    let prepared = generate(&spec)
        .iter()
        .map(|r| preprocess(r, &cfg.preprocess).expect("synthetic sample"))
        .collect();
    let split = DataSplit::from_samples(prepared);
    let inputs = split
        .all_inputs(task, cfg.backbone.patch, &cfg.preprocess)
        .expect("inputs");
    (build_model(&cfg).expect("model"), inputs, cfg)
}

/// Deterministic dense matrix with entries in `[-1, 1]`.
pub fn pattern(rows: usize, cols: usize, phase: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|i| (i as f64 * 0.618 + phase).sin()).collect())
}
