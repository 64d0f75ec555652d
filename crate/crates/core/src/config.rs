//! Layered run configuration.
//!
//! A run configuration starts from a preset, merges any number of TOML
//! files on top (later files win, tables merge key by key) and finally
//! applies `section.key=value` overrides. Override values are parsed as TOML
//! literals and fall back to plain strings, so `cmd.order=VLA` and
//! `train.lr=1e-4` both work.
//!
//! Relative data paths resolve against `data.root`, then the
//! `MERCLIP_DATA_ROOT` environment variable, then the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmd::CmdConfig;
use crate::encoders::BackboneConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::ingest::{PreprocessConfig, Task};
use crate::label_encoder::{default_query_word, LabelKind, LabelSet, DEFAULT_PROMPT_LEN};
use crate::model::{Components, ModelConfig};
use crate::train::TrainConfig;

pub const DATA_ROOT_ENV: &str = "MERCLIP_DATA_ROOT";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub prompt_len: usize,
    pub components: Components,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            prompt_len: DEFAULT_PROMPT_LEN,
            components: Components::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelsSection {
    pub kind: LabelKind,
    /// Custom label file; overrides `kind` when set.
    pub path: Option<PathBuf>,
    /// Task query word; unset uses the task default, `""` means no word.
    pub query_word: Option<String>,
}

impl Default for LabelsSection {
    fn default() -> Self {
        Self {
            kind: LabelKind::Words,
            path: None,
            query_word: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: String,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: Option<PathBuf>,
    pub manifest: PathBuf,
    /// Media paths in the manifest resolve against this directory; defaults
    /// to the manifest's directory.
    pub media_root: Option<PathBuf>,
    /// Output of `preprocess`; samples found there skip raw decoding.
    pub prepared: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: None,
            manifest: PathBuf::from("manifest.jsonl"),
            media_root: None,
            prepared: None,
        }
    }
}

/// Optional pretrained weights (`.mcw` archives). Image-tower archives
/// initialize both the vision and audio encoders; text-tower archives
/// initialize the language encoder and the frozen label encoder.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub image_weights: Option<PathBuf>,
    pub text_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub backbone: BackboneConfig,
    pub cmd: CmdConfig,
    pub head: HeadConfig,
    pub model: ModelSection,
    pub labels: LabelsSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub data: DataSection,
    pub init: InitSection,
    pub provenance: Option<Provenance>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            preprocess: PreprocessConfig::default(),
            backbone: BackboneConfig::tiny(),
            cmd: CmdConfig::default(),
            head: HeadConfig::default(),
            model: ModelSection::default(),
            labels: LabelsSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            data: DataSection::default(),
            init: InitSection::default(),
            provenance: None,
        }
    }
}

impl RunConfig {
    /// `tiny` (random tiny backbone, the default) or `full`
    /// (ViT-B/32-scale towers).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::default()),
            "full" => Ok(Self {
                backbone: BackboneConfig::full(),
                ..Self::default()
            }),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected tiny or full)"))),
        }
    }

    /// Training defaults for a task and dataset tag on top of `self`.
    pub fn for_task(mut self, task: Task, dataset: &str) -> Self {
        self.train = TrainConfig {
            max_steps: self.train.max_steps,
            ..TrainConfig::for_dataset(task, dataset)
        };
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Merges `files` then `overrides` onto `self`.
    pub fn layered(self, files: &[PathBuf], overrides: &[String]) -> Result<Self> {
        let mut table = self.to_table()?;
        for f in files {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            let layer: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Format {
                path: f.clone(),
                reason: e.to_string(),
            })?;
            merge(&mut table, layer);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        self.layered(&[], overrides)
    }

    fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the serialized configuration without its provenance block.
    pub fn config_hash(&self) -> Result<String> {
        let bare = Self {
            provenance: None,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(bare.to_toml()?.as_bytes())))
    }

    pub fn with_provenance(mut self) -> Result<Self> {
        self.provenance = Some(Provenance {
            config_hash: self.config_hash()?,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        });
        Ok(self)
    }

    /// Writes `config.toml` (with provenance) into `dir`.
    pub fn save_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let text = self.clone().with_provenance()?.to_toml()?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.backbone.validate()?;
        self.cmd.validate()?;
        self.train.validate()?;
        if self.preprocess.image_size != self.backbone.image_size {
            return Err(Error::Config(format!(
                "preprocess.image_size {} differs from backbone.image_size {}",
                self.preprocess.image_size, self.backbone.image_size
            )));
        }
        if self.preprocess.max_text_len > self.backbone.max_len {
            return Err(Error::Config(format!(
                "preprocess.max_text_len {} exceeds backbone.max_len {}",
                self.preprocess.max_text_len, self.backbone.max_len
            )));
        }
        if self.model.prompt_len + 2 > self.backbone.max_len {
            return Err(Error::Config("model.prompt_len leaves no room in backbone.max_len".into()));
        }
        if !(self.head.threshold > 0.0 && self.head.threshold < 1.0) {
            return Err(Error::Config("head.threshold must lie in (0, 1)".into()));
        }
        if self.head.logit_scale_init <= 0.0 {
            return Err(Error::Config("head.logit_scale_init must be positive".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.train.task
    }

    /// Directory relative data paths resolve against.
    pub fn data_root(&self) -> PathBuf {
        self.data
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root().join(p)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.data.manifest)
    }

    pub fn media_root(&self) -> PathBuf {
        match &self.data.media_root {
            Some(p) => self.resolve(p),
            None => self
                .manifest_path()
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }

    pub fn prepared_dir(&self) -> Option<PathBuf> {
        self.data.prepared.as_deref().map(|p| self.resolve(p))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match &self.labels.path {
            Some(p) => LabelSet::load(self.task(), &self.resolve(p)),
            None => Ok(LabelSet::builtin(self.task(), self.labels.kind)),
        }
    }

    pub fn query_word(&self) -> String {
        self.labels
            .query_word
            .clone()
            .unwrap_or_else(|| default_query_word(self.task()).to_string())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.validate()?;
        Ok(ModelConfig {
            task: self.task(),
            backbone: self.backbone.clone(),
            cmd: self.cmd.clone(),
            head: self.head.clone(),
            prompt_len: self.model.prompt_len,
            components: self.model.components,
            labels: self.label_set()?,
            query_word: self.query_word(),
        })
    }
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = parse_literal(raw.trim());
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut t = table;
    for p in path {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = match entry {
            toml::Value::Table(inner) => inner,
            _ => return Err(Error::Config(format!("override `{spec}`: `{p}` is not a section"))),
        };
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmd::FusionOrder;

    #[test]
    fn overrides_parse_literals_and_strings() {
        let c = RunConfig::default()
            .with_overrides(&[
                "cmd.order=VLA".into(),
                "train.lr=1e-4".into(),
                "train.max_steps=7".into(),
                "model.components.cmd=false".into(),
                "labels.query_word=\"\"".into(),
            ])
            .unwrap();
        assert_eq!(c.cmd.order, "VLA".parse::<FusionOrder>().unwrap());
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.max_steps, Some(7));
        assert!(!c.model.components.cmd);
        assert_eq!(c.query_word(), "");
        assert!(RunConfig::default().with_overrides(&["nope.key=1".into()]).is_err());
    }

    #[test]
    fn round_trip_keeps_hash() {
        let c = RunConfig::preset("full").unwrap().with_provenance().unwrap();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash().unwrap(), c.provenance.unwrap().config_hash);
    }
}
