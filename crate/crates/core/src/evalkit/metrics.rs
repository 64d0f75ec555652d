//! Multi-label and binary classification metrics.
//!
//! Multi-label accuracy is the example-based Jaccard index
//! `|Y ∩ Ŷ| / |Y ∪ Ŷ|` averaged over samples, with an empty union counted as
//! 1. Precision and recall are micro-averaged over every (sample, class)
//! decision. Ratios with a zero denominator are 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilabelMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub acc2: f64,
    pub f1: f64,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_shapes(pred: &[Vec<u8>], target: &[Vec<u8>]) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let width = pred.first().map_or(0, Vec::len);
    for (p, t) in pred.iter().zip(target) {
        if p.len() != width || t.len() != width {
            return Err(Error::shape("prediction and target rows differ in width"));
        }
    }
    Ok(width)
}

pub fn multilabel_metrics(pred: &[Vec<u8>], target: &[Vec<u8>]) -> Result<MultilabelMetrics> {
    check_shapes(pred, target)?;
    if pred.is_empty() {
        return Err(Error::NoIncludedSamples);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut jaccard = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in p.iter().zip(t) {
            let (a, b) = (a != 0, b != 0);
            inter += usize::from(a && b);
            union += usize::from(a || b);
            tp += usize::from(a && b);
            fp += usize::from(a && !b);
            fn_ += usize::from(!a && b);
        }
        jaccard += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MultilabelMetrics {
        accuracy: jaccard / pred.len() as f64,
        precision,
        recall,
        micro_f1: f1(precision, recall),
    })
}

/// Per-class precision, recall and F1 over binary matrices.
pub fn per_class(pred: &[Vec<u8>], target: &[Vec<u8>], labels: &[String]) -> Result<Vec<ClassMetrics>> {
    let width = check_shapes(pred, target)?;
    Ok((0..width)
        .map(|c| {
            let (mut tp, mut fp, mut fn_, mut support) = (0, 0, 0, 0);
            for (p, t) in pred.iter().zip(target) {
                let (a, b) = (p[c] != 0, t[c] != 0);
                tp += usize::from(a && b);
                fp += usize::from(a && !b);
                fn_ += usize::from(!a && b);
                support += usize::from(b);
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                label: labels.get(c).cloned().unwrap_or_else(|| c.to_string()),
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            }
        })
        .collect())
}

/// ACC2 and positive-class F1 over one-hot pairs (index 0 = positive).
/// Samples flagged in `excluded` are skipped.
pub fn binary_metrics(pred: &[Vec<u8>], target: &[Vec<u8>], excluded: &[bool]) -> Result<BinaryMetrics> {
    if pred.len() != target.len() || pred.len() != excluded.len() {
        return Err(Error::shape("prediction, target and exclusion lengths differ"));
    }
    let (mut correct, mut tp, mut fp, mut fn_, mut n) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for ((p, t), &ex) in pred.iter().zip(target).zip(excluded) {
        if ex {
            continue;
        }
        if p.len() != 2 || t.len() != 2 {
            return Err(Error::shape("binary metrics expect one-hot pairs"));
        }
        n += 1;
        let pp = p[0] != 0;
        let tp_ = t[0] != 0;
        correct += usize::from(pp == tp_);
        tp += usize::from(pp && tp_);
        fp += usize::from(pp && !tp_);
        fn_ += usize::from(!pp && tp_);
    }
    if n == 0 {
        return Err(Error::NoIncludedSamples);
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(BinaryMetrics {
        acc2: correct as f64 / n as f64,
        f1: f1(precision, recall),
        included: n,
        excluded: excluded.iter().filter(|&&e| e).count(),
    })
}
