//! Per-sample embedding export.
//!
//! Files are UTF-8 TSV with a header row:
//! `sample_id  label  dim0  dim1 ...`. The label column is the `+`-joined
//! list of present emotions (`none` when empty) or the sentiment class.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::DataSplit;
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::ingest::{PreprocessConfig, Sentiment, Target, EMOTIONS};
use crate::model::{Model, SampleInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Pooled output of each modality encoder.
    Modality,
    /// Final decoder state (or the fusion perceptron's hidden layer).
    Fused,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(Stage::Modality),
            "fused" => Ok(Stage::Fused),
            other => Err(Error::UnknownStage(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// `V`, `L`, `A` or `fused`; also the file stem.
    pub name: String,
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn target_label(t: &Target) -> String {
    match t {
        Target::Emotion(e) => {
            let present: Vec<&str> = EMOTIONS.iter().zip(e).filter(|(_, &v)| v != 0).map(|(n, _)| *n).collect();
            if present.is_empty() {
                "none".into()
            } else {
                present.join("+")
            }
        }
        Target::Sentiment(Sentiment::Positive) => "positive".into(),
        Target::Sentiment(Sentiment::Negative) => "negative".into(),
        Target::Sentiment(Sentiment::Excluded) => "excluded".into(),
    }
}

impl EmbeddingTable {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ids: Vec::new(),
            labels: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample_id\tlabel");
        for d in 0..self.width() {
            write!(out, "\tdim{d}").expect("string write");
        }
        out.push('\n');
        for ((id, label), v) in self.ids.iter().zip(&self.labels).zip(&self.vectors) {
            out.push_str(id);
            out.push('\t');
            out.push_str(label);
            for x in v {
                // `{:?}` prints the shortest string that round-trips.
                write!(out, "\t{x:?}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(format!("{}.tsv", self.name));
        fs::write(&p, self.to_tsv()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt("empty file".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 2 || cols[0] != "sample_id" || cols[1] != "label" {
            return Err(fmt("header must start with sample_id and label".into()));
        }
        let width = cols.len() - 2;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("embeddings");
        let mut t = Self::new(name);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != width + 2 {
                return Err(fmt(format!("line {} has {} columns, expected {}", i + 2, f.len(), width + 2)));
            }
            let v = f[2..]
                .iter()
                .map(|x| x.parse::<f64>().map_err(|e| fmt(format!("line {}: {e}", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            t.ids.push(f[0].to_string());
            t.labels.push(f[1].to_string());
            t.vectors.push(v);
        }
        Ok(t)
    }
}

/// Embeddings of every sample of `split` at `stage`: three tables (`V`,
/// `L`, `A`) for the modality stage, one (`fused`) otherwise.
pub fn export_embeddings(model: &Model, split: &DataSplit, pre: &PreprocessConfig, stage: Stage, batch: usize) -> Result<Vec<EmbeddingTable>> {
    let task = model.task();
    let patch = model.config.backbone.patch;
    let mut tables: Vec<EmbeddingTable> = match stage {
        Stage::Modality => Modality::ALL.iter().map(|m| EmbeddingTable::new(&m.letter().to_string())).collect(),
        Stage::Fused => vec![EmbeddingTable::new("fused")],
    };
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let inputs = split.inputs(chunk, task, patch, pre)?;
        match stage {
            Stage::Modality => {
                for input in &inputs {
                    for (t, m) in tables.iter_mut().zip(Modality::ALL) {
                        t.ids.push(input.sample_id.clone());
                        t.labels.push(target_label(&input.target));
                        t.vectors.push(modality_global(model, input, m)?);
                    }
                }
            }
            Stage::Fused => {
                for (inf, input) in model.infer(&inputs)?.into_iter().zip(&inputs) {
                    tables[0].ids.push(inf.sample_id);
                    tables[0].labels.push(target_label(&input.target));
                    tables[0].vectors.push(inf.fused);
                }
            }
        }
    }
    Ok(tables)
}

fn modality_global(model: &Model, input: &SampleInput, m: Modality) -> Result<Vec<f64>> {
    let mut g = Graph::new(&model.store);
    let enc = &model.encoders;
    let f = match m {
        Modality::Vision => enc.vision.forward_sequence(&mut g, m, &input.vision)?,
        Modality::Audio => enc.audio.forward_sequence(&mut g, m, &input.audio)?,
        Modality::Language => enc.language.forward_ids(&mut g, &input.tokens)?,
    };
    Ok(g.value(f.global).data().to_vec())
}
