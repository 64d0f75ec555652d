//! Dataset splits backed by memory or by preprocessed sample containers.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::container::{read_sample, write_sample};
use crate::ingest::{preprocess, Manifest, PreparedSample, PreprocessConfig, RawSample, Split, Task};
use crate::model::SampleInput;

#[derive(Debug, Clone)]
enum Item {
    Memory(Arc<PreparedSample>),
    Disk(PathBuf),
}

/// An ordered collection of preprocessed samples. Disk-backed items are
/// read on demand so large corpora need not fit in memory.
#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    items: Vec<Item>,
}

impl DataSplit {
    pub fn from_samples(samples: Vec<PreparedSample>) -> Self {
        Self {
            items: samples.into_iter().map(|s| Item::Memory(Arc::new(s))).collect(),
        }
    }

    pub fn from_paths(paths: Vec<PathBuf>) -> Self {
        Self {
            items: paths.into_iter().map(Item::Disk).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<Arc<PreparedSample>> {
        match &self.items[i] {
            Item::Memory(s) => Ok(s.clone()),
            Item::Disk(p) => read_sample(p).map(Arc::new),
        }
    }

    /// Model inputs for the samples at `idx`.
    pub fn inputs(&self, idx: &[usize], task: Task, patch: usize, pre: &PreprocessConfig) -> Result<Vec<SampleInput>> {
        idx.iter()
            .map(|&i| SampleInput::from_prepared(&*self.get(i)?, task, patch, pre))
            .collect()
    }

    pub fn all_inputs(&self, task: Task, patch: usize, pre: &PreprocessConfig) -> Result<Vec<SampleInput>> {
        self.inputs(&(0..self.len()).collect::<Vec<_>>(), task, patch, pre)
    }
}

/// Container path of one sample inside a preprocessed directory.
pub fn container_path(dir: &Path, sample_id: &str) -> PathBuf {
    dir.join("samples").join(format!("{sample_id}.mers"))
}

/// Preprocesses every record of `manifest` (media resolved against
/// `media_root`) into `out_dir`, writing a copy of the manifest alongside.
/// Returns the number of samples written.
pub fn preprocess_manifest(manifest: &Manifest, media_root: &Path, out_dir: &Path, cfg: &PreprocessConfig) -> Result<usize> {
    cfg.validate()?;
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    manifest.records().par_iter().try_for_each(|rec| -> Result<()> {
        let raw = RawSample::load(rec, media_root)?;
        let prepared = preprocess(&raw, cfg)?;
        write_sample(&container_path(out_dir, &rec.sample_id), &prepared, cfg.max_text_len)
    })?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest.len())
}

/// The records of one split as a [`DataSplit`]: read from `prepared` when
/// its container exists, otherwise preprocessed from raw media in memory.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    prepared: Option<&Path>,
    media_root: &Path,
    cfg: &PreprocessConfig,
) -> Result<DataSplit> {
    let mut items = Vec::new();
    for rec in manifest.split(split) {
        match prepared.map(|d| container_path(d, &rec.sample_id)) {
            Some(p) if p.exists() => items.push(Item::Disk(p)),
            _ => {
                let raw = RawSample::load(rec, media_root)?;
                items.push(Item::Memory(Arc::new(preprocess(&raw, cfg)?)));
            }
        }
    }
    Ok(DataSplit { items })
}
