use merclip_core::evalkit::{binary_metrics, multilabel_metrics, per_class};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{fail, Outcome};

const EPS: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EPS
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<Vec<u8>> {
    (0..n).map(|_| (0..c).map(|_| u8::from(rng.random_bool(0.4))).collect()).collect()
}

fn multilabel_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=10);
    let (pred, target) = (random_matrix(rng, n, 6), random_matrix(rng, n, 6));
    // Brute force over every (sample, class) cell.
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut jaccard = 0.0;
    let mut support = [0usize; 6];
    for (p, t) in pred.iter().zip(&target) {
        let inter = (0..6).filter(|&c| p[c] == 1 && t[c] == 1).count();
        let union = (0..6).filter(|&c| p[c] == 1 || t[c] == 1).count();
        jaccard += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        for c in 0..6 {
            match (p[c], t[c]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
            support[c] += usize::from(t[c] == 1);
        }
    }
    let (prec, rec) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    let m = multilabel_metrics(&pred, &target).map_err(fail)?;
    let want = [jaccard / n as f64, prec, rec, f1];
    let got = [m.accuracy, m.precision, m.recall, m.micro_f1];
    if !want.iter().zip(&got).all(|(a, b)| close(*a, *b)) {
        return Err(format!("multi-label {got:?} vs oracle {want:?} on {pred:?} / {target:?}"));
    }
    let names: Vec<String> = (0..6).map(|c| c.to_string()).collect();
    let pc = per_class(&pred, &target, &names).map_err(fail)?;
    if pc.iter().map(|c| c.support).ne(support) {
        return Err("per-class support differs from counted support".into());
    }
    Ok(())
}

fn binary_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=20);
    let onehot = |pos: bool| if pos { vec![1, 0] } else { vec![0, 1] };
    let pred: Vec<Vec<u8>> = (0..n).map(|_| onehot(rng.random_bool(0.5))).collect();
    let target: Vec<Vec<u8>> = (0..n).map(|_| onehot(rng.random_bool(0.5))).collect();
    let mut excluded: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
    let keep = rng.random_range(0..n);
    excluded[keep] = false;
    // Confusion matrix: rows = truth (positive, negative), cols = prediction.
    let mut cm = [[0usize; 2]; 2];
    for i in (0..n).filter(|&i| !excluded[i]) {
        cm[usize::from(target[i][0] == 0)][usize::from(pred[i][0] == 0)] += 1;
    }
    let included = cm.iter().flatten().sum::<usize>();
    let acc2 = ratio(cm[0][0] + cm[1][1], included);
    let f1 = ratio(2 * cm[0][0], 2 * cm[0][0] + cm[0][1] + cm[1][0]);
    let m = binary_metrics(&pred, &target, &excluded).map_err(fail)?;
    if m.included != included || m.excluded != n - included || !close(m.acc2, acc2) || !close(m.f1, f1) {
        return Err(format!("binary {m:?} vs oracle acc2 {acc2} f1 {f1} included {included}"));
    }
    Ok(())
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        multilabel_case(&mut rng)?;
        binary_case(&mut rng)?;
    }
    Ok("200 multi-label and 200 binary instances match brute-force counting".into())
}
