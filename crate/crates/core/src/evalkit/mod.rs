//! Evaluation reports, ablation grids and embedding export.

pub mod ablation;
pub mod embed;
pub mod metrics;
pub mod plot;
pub mod tsne;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::ablation::{run_ablation, AblationCell, AblationGrid, AblationRow, AblationTable, GridKind};
pub use self::embed::{export_embeddings, EmbeddingTable, Stage};
pub use self::metrics::{binary_metrics, multilabel_metrics, per_class, BinaryMetrics, ClassMetrics, MultilabelMetrics};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::head::PredictionRecord;
use crate::ingest::{PreprocessConfig, Task};
use crate::model::Model;

/// Published full-scale results, in percent, keyed by metric name.
pub fn reference_targets(task: Task, dataset: &str) -> Option<&'static [(&'static str, f64)]> {
    match (task, dataset) {
        (Task::Emotion, "mosei") => Some(&[
            ("accuracy", 49.3),
            ("precision", 53.1),
            ("recall", 63.4),
            ("micro_f1", 57.8),
        ]),
        (Task::Sentiment, "mosei") => Some(&[("acc2", 85.3), ("f1", 85.1)]),
        (Task::Sentiment, "mosi") => Some(&[("acc2", 84.0), ("f1", 84.0)]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDelta {
    pub metric: String,
    pub value: f64,
    pub reference: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub dataset: String,
    pub split: String,
    pub samples: usize,
    pub excluded: usize,
    /// Fractions in `[0, 1]`.
    pub metrics: BTreeMap<String, f64>,
    pub per_class: Vec<ClassMetrics>,
    pub config: serde_json::Value,
}

/// Percent with one decimal, as tables report it.
pub fn percent(v: f64) -> f64 {
    (v * 1000.0).round() / 10.0
}

impl EvalReport {
    /// Validation metric used for model selection.
    pub fn selection_metric(&self) -> f64 {
        let key = match self.task {
            Task::Emotion => "micro_f1",
            Task::Sentiment => "acc2",
        };
        self.metrics.get(key).copied().unwrap_or(0.0)
    }

    pub fn reference_deltas(&self) -> Vec<ReferenceDelta> {
        reference_targets(self.task, &self.dataset)
            .unwrap_or(&[])
            .iter()
            .filter_map(|&(k, r)| {
                let v = percent(*self.metrics.get(k)?);
                Some(ReferenceDelta {
                    metric: k.to_string(),
                    value: v,
                    reference: r,
                    delta: ((v - r) * 10.0).round() / 10.0,
                })
            })
            .collect()
    }

    /// `metric<TAB>value_pct<TAB>reference_pct<TAB>delta_pct`; the last two
    /// columns are empty without a published reference.
    pub fn to_tsv(&self) -> String {
        let deltas = self.reference_deltas();
        let mut out = String::from("metric\tvalue_pct\treference_pct\tdelta_pct\n");
        for (k, v) in &self.metrics {
            match deltas.iter().find(|d| &d.metric == k) {
                Some(d) => writeln!(out, "{k}\t{:.1}\t{:.1}\t{:+.1}", percent(*v), d.reference, d.delta),
                None => writeln!(out, "{k}\t{:.1}\t\t", percent(*v)),
            }
            .expect("string write");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("report.json");
        fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("metrics.tsv");
        fs::write(&p, self.to_tsv()).map_err(|e| Error::io(&p, e))
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Runs inference over `split` in chunks of `batch` samples and scores it.
pub fn evaluate(
    model: &Model,
    split: &DataSplit,
    pre: &PreprocessConfig,
    batch: usize,
    dataset: &str,
    split_name: &str,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::EmptySplit(split_name.to_string()));
    }
    let task = model.task();
    let patch = model.config.backbone.patch;
    let mut predictions = Vec::with_capacity(split.len());
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let inputs = split.inputs(chunk, task, patch, pre)?;
        for (inf, input) in model.infer(&inputs)?.into_iter().zip(&inputs) {
            predictions.push(PredictionRecord {
                sample_id: inf.sample_id,
                similarities: inf.scores,
                probabilities: inf.prediction.probabilities,
                prediction: inf.prediction.labels,
                target: input.target_vector(),
                excluded: !input.included(),
            });
        }
    }
    let report = score(task, &predictions, &model.config.labels.labels, dataset, split_name)?;
    Ok(Evaluation { report, predictions })
}

/// Builds a report from prediction records.
pub fn score(task: Task, records: &[PredictionRecord], labels: &[String], dataset: &str, split: &str) -> Result<EvalReport> {
    let mut metrics = BTreeMap::new();
    let (per_class, excluded) = match task {
        Task::Emotion => {
            let pred: Vec<Vec<u8>> = records.iter().map(|r| r.prediction.clone()).collect();
            let target: Vec<Vec<u8>> = records.iter().map(|r| r.target.clone()).collect();
            let m = multilabel_metrics(&pred, &target)?;
            metrics.insert("accuracy".into(), m.accuracy);
            metrics.insert("precision".into(), m.precision);
            metrics.insert("recall".into(), m.recall);
            metrics.insert("micro_f1".into(), m.micro_f1);
            (per_class(&pred, &target, labels)?, 0)
        }
        Task::Sentiment => {
            let included: Vec<&PredictionRecord> = records.iter().filter(|r| !r.excluded).collect();
            let pred: Vec<Vec<u8>> = included.iter().map(|r| r.prediction.clone()).collect();
            let target: Vec<Vec<u8>> = included.iter().map(|r| r.target.clone()).collect();
            let m = binary_metrics(&pred, &target, &vec![false; pred.len()])?;
            metrics.insert("acc2".into(), m.acc2);
            metrics.insert("f1".into(), m.f1);
            (per_class(&pred, &target, labels)?, records.len() - included.len())
        }
    };
    Ok(EvalReport {
        task,
        dataset: dataset.to_string(),
        split: split.to_string(),
        samples: records.len(),
        excluded,
        metrics,
        per_class,
        config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_against_reference() {
        let mut metrics = BTreeMap::new();
        metrics.insert("acc2".to_string(), 0.8412);
        metrics.insert("f1".to_string(), 0.83);
        let r = EvalReport {
            task: Task::Sentiment,
            dataset: "mosi".into(),
            split: "test".into(),
            samples: 10,
            excluded: 0,
            metrics,
            per_class: Vec::new(),
            config: serde_json::Value::Null,
        };
        let d = r.reference_deltas();
        assert_eq!(d[0].metric, "acc2");
        assert_eq!(d[0].value, 84.1);
        assert!((d[0].delta - 0.1).abs() < 1e-9);
        assert!(r.to_tsv().contains("f1\t83.0\t84.0\t-1.0"));
    }
}
