//! Fine-tuning loop: AdamW over every trainable parameter group, label
//! encoder frozen, per-epoch validation and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalReport};
use crate::ingest::{PreprocessConfig, Task};
use crate::model::{Model, SampleInput};
use crate::params::{Gradients, ParamGroup, ParamStore};
use crate::tensor::Mat;
use crate::weights::Archive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    BestVal,
    LastEpoch,
}

/// Arithmetic mode. Only double precision is implemented; runs are
/// bitwise deterministic in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub dataset: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup_steps: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub selection: Selection,
    /// Also keep `epoch_<n>` checkpoints every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Emotion,
            dataset: "mosei".into(),
            batch_size: 16,
            epochs: 20,
            lr: 8e-6,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            max_steps: None,
            selection: Selection::BestVal,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    /// Defaults for a dataset tag; MOSI uses batch 8 and lr 2.2e-5.
    pub fn for_dataset(task: Task, dataset: &str) -> Self {
        let mut c = Self {
            task,
            dataset: dataset.to_string(),
            ..Self::default()
        };
        if dataset == "mosi" {
            c.batch_size = 8;
            c.lr = 2.2e-5;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive when set");
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay. Frozen parameters and parameters
/// without a gradient in the current step are left untouched.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    state: Vec<Option<(Mat, Mat)>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        Self {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            state: vec![None; store.len()],
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().filter(|(_, e)| e.trainable()).map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = self.state[id.index()].get_or_insert_with(|| (Mat::zeros(g.rows(), g.cols()), Mat::zeros(g.rows(), g.cols())));
            let p = store.value_mut(id).data_mut();
            let decay = 1.0 - lr * self.weight_decay;
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let step_size = lr / bc1;
            let root_bc2 = bc2.sqrt();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p = *p * decay - step_size * *m / (v.sqrt() / root_bc2 + eps);
            }
        }
    }

    fn archives(&self, store: &ParamStore) -> (Archive, Archive) {
        let mut m = Archive { entries: Vec::new() };
        let mut v = Archive { entries: Vec::new() };
        for (id, e) in store.iter() {
            if let Some((a, b)) = &self.state[id.index()] {
                m.entries.push((e.name.clone(), a.clone()));
                v.entries.push((e.name.clone(), b.clone()));
            }
        }
        (m, v)
    }

    fn restore(&mut self, store: &ParamStore, m: Archive, v: Archive) -> Result<()> {
        self.state = vec![None; store.len()];
        for ((name, a), (name_v, b)) in m.entries.into_iter().zip(v.entries) {
            let id = store.id(&name).filter(|_| name == name_v).ok_or_else(|| Error::SchemaMismatch {
                name: name.clone(),
                detail: "optimizer state for unknown parameter".into(),
            })?;
            if store.value(id).shape() != a.shape() || a.shape() != b.shape() {
                return Err(Error::SchemaMismatch {
                    name,
                    detail: "optimizer state shape differs from parameter".into(),
                });
            }
            self.state[id.index()] = Some((a, b));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub included: usize,
    pub grad_norms: BTreeMap<String, f64>,
}

/// A model together with its optimizer.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    /// Parameters of the epoch chosen by [`Trainer::fit`].
    pub best_params: Option<ParamStore>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.task != model.task() {
            return Err(Error::Config("train.task differs from the model task".into()));
        }
        let optimizer = AdamW::new(&config, &model.store);
        Ok(Self {
            model,
            optimizer,
            config,
            best_params: None,
        })
    }

    fn current_lr(&self) -> f64 {
        let w = self.config.warmup_steps as f64;
        let next = (self.optimizer.step + 1) as f64;
        if w > 0.0 && next < w {
            self.config.lr * next / w
        } else {
            self.config.lr
        }
    }

    /// Forward, backward and one AdamW update. `batch_index` identifies the
    /// batch in diagnostics.
    pub fn train_step(&mut self, batch: &[&SampleInput], batch_index: usize) -> Result<StepStats> {
        let out = self.model.loss_and_grads(batch, batch_index)?;
        if !out.grads.all_finite() {
            let ids: Vec<&str> = batch.iter().map(|s| s.sample_id.as_str()).collect();
            return Err(Error::NonFiniteLoss {
                batch: batch_index,
                detail: format!("non-finite gradient for samples {ids:?}"),
            });
        }
        let grad_norms = ParamGroup::ALL
            .iter()
            .filter(|&&g| !self.model.store.ids_in_group(g).is_empty())
            .map(|&g| (g.as_str().to_string(), out.grads.group_norm(&self.model.store, g)))
            .collect();
        if out.included > 0 {
            let lr = self.current_lr();
            self.optimizer.update(&mut self.model.store, &out.grads, lr);
        }
        Ok(StepStats {
            step: self.optimizer.step,
            loss: out.loss,
            included: out.included,
            grad_norms,
        })
    }

    pub fn save_checkpoint(&self, dir: &Path, epoch: usize, config: serde_json::Value) -> Result<CheckpointMeta> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = Archive::from_store(&self.model.store, "");
        params.save(&dir.join(PARAMS_FILE))?;
        let (m, v) = self.optimizer.archives(&self.model.store);
        m.save(&dir.join("adam_m.mcw"))?;
        v.save(&dir.join("adam_v.mcw"))?;
        let meta = CheckpointMeta {
            epoch,
            step: self.optimizer.step,
            digests: model_digests(&self.model),
            config,
        };
        let p = dir.join(META_FILE);
        fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
        Ok(meta)
    }

    /// Restores parameters and optimizer state saved by
    /// [`Trainer::save_checkpoint`] into a model of the same architecture.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<CheckpointMeta> {
        let meta = load_into(&mut self.model, dir)?;
        let m = Archive::load(&dir.join("adam_m.mcw"))?;
        let v = Archive::load(&dir.join("adam_v.mcw"))?;
        self.optimizer.restore(&self.model.store, m, v)?;
        self.optimizer.step = meta.step;
        Ok(meta)
    }

    /// Swaps in the parameters chosen by the last [`Trainer::fit`].
    pub fn restore_best(&mut self) -> Result<()> {
        if let Some(best) = &self.best_params {
            self.model.store.copy_values_from(best)?;
        }
        Ok(())
    }

    /// Epoch loop with seeded shuffling and validation after every epoch.
    /// With `out` set, the run report goes to `out/train_report.jsonl` and,
    /// if `data.checkpoints`, `best`/`last` checkpoints are written there.
    /// `snapshot` is stored in every checkpoint so the run can be rebuilt
    /// without the original flags.
    pub fn fit(&mut self, data: &FitData<'_>, out: Option<&Path>, snapshot: serde_json::Value) -> Result<TrainReport> {
        if data.train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        if data.val.is_some_and(DataSplit::is_empty) {
            return Err(Error::EmptySplit("val".into()));
        }
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(RunLog::create(&dir.join(REPORT_FILE))?)
            }
            None => None,
        };
        let header = serde_json::json!({
            "kind": "header",
            "task": self.config.task,
            "dataset": self.config.dataset,
            "batch_size": self.config.batch_size,
            "epochs": self.config.epochs,
            "lr": self.config.lr,
            "weight_decay": self.config.weight_decay,
            "optimizer": {"name": "adamw", "beta1": self.config.beta1, "beta2": self.config.beta2, "eps": self.config.eps},
            "selection": self.config.selection,
            "selection_note": "model selection on the validation split is an addition of this implementation",
            "seed": data.seed,
            "trainable_scalars": self.model.store.iter().filter(|(_, e)| e.trainable()).map(|(_, e)| e.value.len()).sum::<usize>(),
            "frozen_scalars": self.model.store.scalar_count(Some(ParamGroup::LabelEncoder)),
        });
        if let Some(l) = &mut log {
            l.write(&header)?;
        }
        let task = self.model.task();
        let patch = self.model.config.backbone.patch;
        let mut report = TrainReport::default();
        let mut best: Option<f64> = None;
        let mut batch_index = 0;
        'epochs: for epoch in 1..=self.config.epochs {
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(data.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0;
            let mut stop = false;
            for chunk in order.chunks(self.config.batch_size) {
                let inputs = data.train.inputs(chunk, task, patch, data.pre)?;
                let refs: Vec<&SampleInput> = inputs.iter().collect();
                let stats = self.train_step(&refs, batch_index)?;
                batch_index += 1;
                if stats.included > 0 {
                    epoch_loss += stats.loss;
                    epoch_batches += 1;
                }
                if let Some(l) = &mut log {
                    let mut v = serde_json::to_value(&stats)?;
                    v["kind"] = "step".into();
                    v["epoch"] = epoch.into();
                    l.write(&v)?;
                }
                report.losses.push(stats.loss);
                if self.config.max_steps.is_some_and(|m| self.optimizer.step as usize >= m) {
                    stop = true;
                    break;
                }
            }
            let train_loss = if epoch_batches > 0 { epoch_loss / epoch_batches as f64 } else { 0.0 };
            let val = match data.val {
                Some(v) => Some(evaluate(&self.model, v, data.pre, self.config.batch_size, &self.config.dataset, "val")?.report),
                None => None,
            };
            let metric = val.as_ref().map(EvalReport::selection_metric);
            if let Some(l) = &mut log {
                l.write(&serde_json::json!({
                    "kind": "epoch",
                    "epoch": epoch,
                    "step": self.optimizer.step,
                    "train_loss": train_loss,
                    "val_metrics": val.as_ref().map(|r| &r.metrics),
                }))?;
            }
            report.epochs.push(EpochRecord {
                epoch,
                step: self.optimizer.step,
                train_loss,
                val_metric: metric,
            });
            let choose = match self.config.selection {
                Selection::BestVal => metric.is_some_and(|m| best.is_none_or(|b| m > b)),
                Selection::LastEpoch => true,
            };
            if choose {
                best = metric;
                report.best_epoch = Some(epoch);
                report.best_metric = metric;
                self.best_params = Some(self.model.store.clone());
            }
            if let Some(dir) = out.filter(|_| data.checkpoints) {
                if choose {
                    self.save_checkpoint(&dir.join("best"), epoch, snapshot.clone())?;
                }
                self.save_checkpoint(&dir.join("last"), epoch, snapshot.clone())?;
                if self.config.checkpoint_every > 0 && epoch % self.config.checkpoint_every == 0 {
                    self.save_checkpoint(&dir.join(format!("epoch_{epoch}")), epoch, snapshot.clone())?;
                }
            }
            if stop {
                break 'epochs;
            }
        }
        // Without a validation split the last epoch is the only candidate.
        if report.best_epoch.is_none() {
            self.best_params = Some(self.model.store.clone());
            if let Some(dir) = out.filter(|_| data.checkpoints) {
                copy_dir(&dir.join("last"), &dir.join("best"))?;
            }
            report.best_epoch = report.epochs.last().map(|e| e.epoch);
        }
        report.steps = self.optimizer.step;
        if let Some(l) = &mut log {
            l.write(&serde_json::json!({
                "kind": "summary",
                "steps": report.steps,
                "best_epoch": report.best_epoch,
                "best_metric": report.best_metric,
            }))?;
        }
        Ok(report)
    }
}

pub const PARAMS_FILE: &str = "params.mcw";
pub const META_FILE: &str = "meta.json";
pub const REPORT_FILE: &str = "train_report.jsonl";

/// Inputs of [`Trainer::fit`].
pub struct FitData<'a> {
    pub train: &'a DataSplit,
    pub val: Option<&'a DataSplit>,
    pub pre: &'a PreprocessConfig,
    pub seed: u64,
    pub checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    /// `all`, `trainable`, and one entry per parameter group.
    pub digests: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

pub fn model_digests(model: &Model) -> BTreeMap<String, String> {
    let s = &model.store;
    let mut d = BTreeMap::new();
    d.insert("all".to_string(), s.digest());
    d.insert("trainable".to_string(), s.digest_where(|e| e.trainable()));
    for g in ParamGroup::ALL {
        if !s.ids_in_group(g).is_empty() {
            d.insert(g.as_str().to_string(), s.group_digest(g));
        }
    }
    d
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let p = dir.join(META_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads checkpoint parameters into `model` and checks the stored digest.
pub fn load_into(model: &mut Model, dir: &Path) -> Result<CheckpointMeta> {
    let meta = read_meta(dir)?;
    Archive::load(&dir.join(PARAMS_FILE))?.apply(&mut model.store, "")?;
    if meta.digests.get("all") != Some(&model.store.digest()) {
        return Err(Error::Format {
            path: dir.join(META_FILE),
            reason: "parameter digest does not match the checkpoint".into(),
        });
    }
    Ok(meta)
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let dst: PathBuf = to.join(entry.file_name());
        fs::copy(entry.path(), &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

struct RunLog {
    path: PathBuf,
    file: fs::File,
}

impl RunLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            file: fs::File::create(path).map_err(|e| Error::io(path, e))?,
        })
    }

    fn write(&mut self, v: &serde_json::Value) -> Result<()> {
        writeln!(self.file, "{v}").map_err(|e| Error::io(&self.path, e))
    }
}
