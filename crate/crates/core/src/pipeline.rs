//! End-to-end steps shared by the command line and the ablation sweep:
//! build a model from a run configuration, train it, evaluate it, and
//! rebuild it from a checkpoint.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{load_split, DataSplit};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, write_predictions, EvalReport, Evaluation};
use crate::ingest::{Manifest, Split};
use crate::model::Model;
use crate::train::{load_into, read_meta, FitData, TrainReport, Trainer};
use crate::weights::Archive;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Builds the model of `cfg`, applying any pretrained weights it names.
pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    let mut model = Model::new(cfg.model_config()?, cfg.seed)?;
    if let Some(p) = &cfg.init.image_weights {
        let a = Archive::load(&cfg.resolve(p))?;
        a.apply(&mut model.store, "vision.")?;
        a.apply(&mut model.store, "audio.")?;
    }
    if let Some(p) = &cfg.init.text_weights {
        let a = Archive::load(&cfg.resolve(p))?;
        a.apply(&mut model.store, "language.")?;
        if model.label_encoder.is_some() {
            a.apply(&mut model.store, "label_encoder.")?;
        }
    }
    Ok(model)
}

pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found")));
    }
    Manifest::load(&path)
}

pub fn split_data(cfg: &RunConfig, manifest: &Manifest, split: Split) -> Result<DataSplit> {
    let prepared: Option<PathBuf> = cfg.prepared_dir();
    load_split(manifest, split, prepared.as_deref(), &cfg.media_root(), &cfg.preprocess)
}

/// Trains on the `train` split with `val` for model selection (when
/// present) and leaves the selected parameters in the returned trainer.
/// `config.toml` and the run report are written to `out`.
pub fn train_run(cfg: &RunConfig, out: &Path, checkpoints: bool) -> Result<(Trainer, TrainReport)> {
    cfg.validate()?;
    cfg.save_to_dir(out)?;
    let manifest = load_manifest(cfg)?;
    let train = split_data(cfg, &manifest, Split::Train)?;
    let val = split_data(cfg, &manifest, Split::Val)?;
    let model = build_model(cfg)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let data = FitData {
        train: &train,
        val: (!val.is_empty()).then_some(&val),
        pre: &cfg.preprocess,
        seed: cfg.seed,
        checkpoints,
    };
    let report = trainer.fit(&data, Some(out), serde_json::to_value(cfg)?)?;
    trainer.restore_best()?;
    Ok((trainer, report))
}

/// Evaluates `model` on one split and, with `out` set, writes
/// `report.json`, `metrics.tsv` and `predictions.jsonl` there.
pub fn eval_run(model: &Model, cfg: &RunConfig, split: Split, out: Option<&Path>) -> Result<Evaluation> {
    let manifest = load_manifest(cfg)?;
    let data = split_data(cfg, &manifest, split)?;
    let mut ev = evaluate(model, &data, &cfg.preprocess, cfg.eval.batch_size, &cfg.train.dataset, split.as_str())?;
    ev.report.config = serde_json::to_value(cfg)?;
    if let Some(dir) = out {
        ev.report.write(dir)?;
        write_predictions(&dir.join(PREDICTIONS_FILE), &ev.predictions)?;
    }
    Ok(ev)
}

/// Train, then evaluate the selected parameters on `eval.split`.
pub fn train_and_eval(cfg: &RunConfig, out: &Path, checkpoints: bool) -> Result<EvalReport> {
    let (trainer, _) = train_run(cfg, out, checkpoints)?;
    let split: Split = cfg.eval.split.parse()?;
    Ok(eval_run(&trainer.model, cfg, split, Some(out))?.report)
}

/// Rebuilds the configuration and model stored in a checkpoint directory.
pub fn model_from_checkpoint(dir: &Path) -> Result<(RunConfig, Model)> {
    let meta = read_meta(dir)?;
    let cfg: RunConfig = serde_json::from_value(meta.config).map_err(|e| Error::Format {
        path: dir.join(crate::train::META_FILE),
        reason: format!("config snapshot: {e}"),
    })?;
    // Pretrained weights are already part of the checkpoint.
    let mut model = Model::new(cfg.model_config()?, cfg.seed)?;
    load_into(&mut model, dir)?;
    Ok((cfg, model))
}

/// Resolves a checkpoint argument: a checkpoint directory itself, or a run
/// directory containing `best/`.
pub fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    for cand in [path.to_path_buf(), path.join("best")] {
        if cand.join(crate::train::META_FILE).is_file() {
            return Ok(cand);
        }
    }
    Err(Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint (meta.json) found"),
    ))
}
