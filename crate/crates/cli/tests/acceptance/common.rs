use std::path::PathBuf;

use merclip_core::autograd::Graph;
use merclip_core::config::RunConfig;
use merclip_core::data::DataSplit;
use merclip_core::ingest::synthetic::{generate, SyntheticSpec};
use merclip_core::ingest::{preprocess, Task};
use merclip_core::model::{Model, SampleInput};

pub type Outcome = Result<String, String>;

pub fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Tiny preset with the desk-scale data and optimizer settings: two frames
/// per video, one audio segment, batch 4, learning rate 3e-4.
pub fn desk_config(task: Task, overrides: &[String]) -> Result<RunConfig, String> {
    let mut sets = vec![
        "preprocess.frames=2".to_string(),
        "train.batch_size=4".to_string(),
        "train.lr=3e-4".to_string(),
        format!("train.task=\"{}\"", task.as_str()),
    ];
    sets.extend_from_slice(overrides);
    RunConfig::preset("tiny").and_then(|c| c.for_task(task, "mosei").with_overrides(&sets)).map_err(fail)
}

/// `n` synthetic training samples of at most two seconds of audio.
pub fn synthetic_split(cfg: &RunConfig, n: usize, seed: u64) -> Result<DataSplit, String> {
    let spec = SyntheticSpec {
        max_duration: 2.0,
        ..SyntheticSpec::train_only(n, seed)
    };
    let samples = generate(&spec)
        .iter()
        .map(|raw| preprocess(raw, &cfg.preprocess))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    Ok(DataSplit::from_samples(samples))
}

pub fn inputs(cfg: &RunConfig, split: &DataSplit) -> Result<Vec<SampleInput>, String> {
    split.all_inputs(cfg.task(), cfg.backbone.patch, &cfg.preprocess).map_err(fail)
}

/// Forward-only loss of one sample; used as the finite-difference oracle.
pub fn sample_loss(model: &Model, input: &SampleInput) -> f64 {
    let mut g = Graph::new(&model.store);
    let side = model.label_side(&mut g).expect("label side");
    let fwd = model.forward(&mut g, input, &side).expect("forward");
    let loss = model.loss(&mut g, fwd.scores, input).expect("included sample");
    g.value(loss).item()
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/labels").join(name)
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_merclip"))
}
