//! Similarity-based prediction and losses.
//!
//! Emotion (multi-label): similarities are z-scored per sample, passed
//! through a sigmoid and thresholded strictly above 0.6. Training uses the
//! same z-score/sigmoid path under binary cross-entropy.
//!
//! Sentiment (binary): similarities are multiplied by the logit scale and
//! the larger logit wins, ties going to index 0. Training uses softmax
//! cross-entropy on the scaled similarities.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::ingest::Task;
use crate::tensor::Mat;

/// `exp(ln(1/0.07))`.
pub const LOGIT_SCALE_INIT: f64 = 1.0 / 0.07;
pub const STD_FLOOR: f64 = 1e-8;
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Emotion probabilities strictly above this are predicted present.
    pub threshold: f64,
    pub logit_scale_init: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            logit_scale_init: LOGIT_SCALE_INIT,
        }
    }
}

/// Cosine similarity of `z` with every row of `labels`.
pub fn similarity(z: &[f64], labels: &Mat) -> Result<Vec<f64>> {
    if z.len() != labels.cols() {
        return Err(Error::shape(format!(
            "vector of width {} against labels of width {}",
            z.len(),
            labels.cols()
        )));
    }
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nz <= NORM_FLOOR {
        return Err(Error::shape("zero-norm representation"));
    }
    (0..labels.rows())
        .map(|r| {
            let row = labels.row(r);
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr <= NORM_FLOOR {
                return Err(Error::shape(format!("zero-norm label embedding at row {r}")));
            }
            let dot: f64 = z.iter().zip(row).map(|(a, b)| a * b).sum();
            Ok(dot / (nz * nr))
        })
        .collect()
}

/// Population z-score with the standard deviation floored at [`STD_FLOOR`].
pub fn zscore(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(STD_FLOOR);
    scores.iter().map(|s| (s - mean) / sd).collect()
}

pub fn emotion_probabilities(scores: &[f64]) -> Vec<f64> {
    zscore(scores).into_iter().map(sigmoid).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Binary vector (emotion) or one-hot pair (sentiment).
    pub labels: Vec<u8>,
    /// Sigmoid probabilities (emotion) or softmax probabilities (sentiment).
    pub probabilities: Vec<f64>,
}

pub fn predict_emotions(scores: &[f64], threshold: f64) -> Prediction {
    let probabilities = emotion_probabilities(scores);
    Prediction {
        labels: probabilities.iter().map(|&p| u8::from(p > threshold)).collect(),
        probabilities,
    }
}

pub fn predict_sentiment(scores: &[f64], logit_scale: f64) -> Prediction {
    let logits: Vec<f64> = scores.iter().map(|s| logit_scale * s).collect();
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    let max = logits[best];
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Prediction {
        labels: (0..logits.len()).map(|i| u8::from(i == best)).collect(),
        probabilities: exps.iter().map(|e| e / z).collect(),
    }
}

pub fn predict(task: Task, scores: &[f64], logit_scale: f64, threshold: f64) -> Prediction {
    match task {
        Task::Emotion => predict_emotions(scores, threshold),
        Task::Sentiment => predict_sentiment(scores, logit_scale),
    }
}

/// Mean binary cross-entropy over all entries, probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probabilities: &Mat, targets: &Mat) -> Result<f64> {
    if probabilities.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "probabilities {:?} vs targets {:?}",
            probabilities.shape(),
            targets.shape()
        )));
    }
    let n = probabilities.len() as f64;
    Ok(probabilities
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n)
}

/// Mean softmax cross-entropy of `logit_scale * scores` (one row per sample)
/// against class indices.
pub fn ce_loss(scores: &Mat, targets: &[usize], logit_scale: f64) -> Result<f64> {
    if scores.rows() != targets.len() {
        return Err(Error::shape(format!("{} score rows for {} targets", scores.rows(), targets.len())));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let logits: Vec<f64> = scores.row(r).iter().map(|s| logit_scale * s).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[t];
    }
    Ok(total / targets.len() as f64)
}

/// Cosine similarities (`1 x C`) between `z` (`1 x d`) and label rows
/// (`C x d`) inside a graph.
pub fn similarity_graph(g: &mut Graph, z: Var, labels: Var) -> Result<Var> {
    let (_, wz) = g.shape(z);
    let (_, wl) = g.shape(labels);
    if wz != wl {
        return Err(Error::shape(format!("representation width {wz} vs label width {wl}")));
    }
    for v in [z, labels] {
        let m = g.value(v);
        for r in 0..m.rows() {
            if m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt() <= NORM_FLOOR {
                return Err(Error::shape("zero-norm vector in similarity"));
            }
        }
    }
    let zn = g.l2_normalize_rows(z);
    let ln = g.l2_normalize_rows(labels);
    Ok(g.matmul_bt(zn, ln))
}

/// Emotion training loss on a `1 x C` score row.
pub fn emotion_loss_graph(g: &mut Graph, scores: Var, targets: &[f64]) -> Var {
    let z = g.standardize_rows(scores, STD_FLOOR);
    let p = g.sigmoid(z);
    g.bce(p, targets)
}

/// Sentiment training loss; `log_scale` holds `ln(logit_scale)`.
pub fn sentiment_loss_graph(g: &mut Graph, scores: Var, log_scale: Var, target: usize) -> Var {
    let scale = g.exp(log_scale);
    let logits = g.mul_scalar(scores, scale);
    g.cross_entropy(logits, target)
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub similarities: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub prediction: Vec<u8>,
    /// Ground truth in the same encoding; empty when excluded.
    pub target: Vec<u8>,
    pub excluded: bool,
}
