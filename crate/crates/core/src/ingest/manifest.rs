//! Line-delimited JSON manifests.
//!
//! One record per line:
//!
//! ```text
//! {"sample_id":"s0001","split":"train","video_dir":"media/s0001/frames",
//!  "audio_path":"media/s0001/audio.wav","transcript_path":"media/s0001/text.txt",
//!  "sentiment_score":1.4,"emotion_intensities":[0.6,0,0,0,0.3,0],"duration":4.2}
//! ```
//!
//! Media paths are relative to the data root.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub split: Split,
    pub video_dir: PathBuf,
    pub audio_path: PathBuf,
    pub transcript_path: PathBuf,
    pub sentiment_score: f64,
    pub emotion_intensities: [f64; 6],
    pub duration: f64,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidSample {
            id: self.sample_id.clone(),
            reason: reason.into(),
        };
        if !(-3.0..=3.0).contains(&self.sentiment_score) {
            return Err(bad("sentiment_score outside [-3, 3]"));
        }
        if self.emotion_intensities.iter().any(|&v| !(v >= 0.0)) {
            return Err(bad("negative emotion intensity"));
        }
        if !(self.duration > 0.0) {
            return Err(bad("duration must be positive"));
        }
        Ok(())
    }
}

/// Reference split sizes of the public corpora.
pub const MOSI_SPLITS: [usize; 3] = [1284, 229, 686];
pub const MOSEI_SPLITS: [usize; 3] = [16326, 1871, 4659];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate ids and invalid records.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateSample(r.sample_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        for r in &self.records {
            *counts.entry(r.split).or_default() += 1;
        }
        counts
    }

    /// Checks split sizes against a known corpus (`"mosi"` or `"mosei"`).
    pub fn check_reference_counts(&self, dataset: &str) -> Result<()> {
        let expect = match dataset {
            "mosi" => MOSI_SPLITS,
            "mosei" => MOSEI_SPLITS,
            _ => return Ok(()),
        };
        let counts = self.split_counts();
        let got = [counts[&Split::Train], counts[&Split::Val], counts[&Split::Test]];
        if got != expect {
            return Err(Error::Config(format!(
                "{dataset} split counts {got:?} differ from the reference {expect:?}"
            )));
        }
        Ok(())
    }
}
