use merclip_core::evalkit::metrics::{binary_metrics, multilabel_metrics};
use merclip_core::evalkit::score;
use merclip_core::head::PredictionRecord;
use merclip_core::ingest::Task;
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..2, 6), n)
}

fn pair() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>)> {
    (1usize..=10).prop_flat_map(|n| (matrix(n), matrix(n)))
}

fn records(pred: &[Vec<u8>], target: &[Vec<u8>], excluded: &[bool]) -> Vec<PredictionRecord> {
    pred.iter()
        .zip(target)
        .zip(excluded)
        .enumerate()
        .map(|(i, ((p, t), &ex))| PredictionRecord {
            sample_id: format!("s{i}"),
            similarities: vec![0.0; p.len()],
            probabilities: vec![0.5; p.len()],
            prediction: p.clone(),
            target: t.clone(),
            excluded: ex,
        })
        .collect()
}

proptest! {
    #[test]
    fn micro_f1_lies_between_precision_and_recall((p, t) in pair()) {
        let m = multilabel_metrics(&p, &t).unwrap();
        if m.precision > 0.0 && m.recall > 0.0 {
            let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
            prop_assert!(m.micro_f1 >= lo - 1e-12 && m.micro_f1 <= hi + 1e-12);
        }
        for v in [m.accuracy, m.precision, m.recall, m.micro_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn multilabel_matches_set_counting((p, t) in pair()) {
        let m = multilabel_metrics(&p, &t).unwrap();
        let ones = |r: &Vec<u8>| r.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect::<std::collections::HashSet<_>>();
        let mut acc = 0.0;
        let (mut inter, mut np, mut nt) = (0, 0, 0);
        for (a, b) in p.iter().zip(&t) {
            let (a, b) = (ones(a), ones(b));
            let i = a.intersection(&b).count();
            let u = a.union(&b).count();
            acc += if u == 0 { 1.0 } else { i as f64 / u as f64 };
            inter += i;
            np += a.len();
            nt += b.len();
        }
        prop_assert!((m.accuracy - acc / p.len() as f64).abs() < 1e-12);
        let prec = if np == 0 { 0.0 } else { inter as f64 / np as f64 };
        let rec = if nt == 0 { 0.0 } else { inter as f64 / nt as f64 };
        prop_assert!((m.precision - prec).abs() < 1e-12);
        prop_assert!((m.recall - rec).abs() < 1e-12);
    }

    /// Samples excluded from the sentiment task (zero score) still count
    /// for emotions.
    #[test]
    fn exclusion_flags_do_not_affect_emotion_scores((p, t) in pair(), flags in prop::collection::vec(any::<bool>(), 10)) {
        let n = p.len();
        let plain = score(Task::Emotion, &records(&p, &t, &vec![false; n]), &[], "mosei", "test").unwrap();
        let flagged = score(Task::Emotion, &records(&p, &t, &flags[..n]), &[], "mosei", "test").unwrap();
        prop_assert_eq!(plain.metrics, flagged.metrics);
        prop_assert_eq!(flagged.excluded, 0);
    }

    #[test]
    fn binary_counts_match_confusion_matrix(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..20)
    ) {
        let hot = |b: bool| if b { vec![1u8, 0] } else { vec![0, 1] };
        let pred: Vec<_> = rows.iter().map(|r| hot(r.0)).collect();
        let target: Vec<_> = rows.iter().map(|r| hot(r.1)).collect();
        let excluded: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let kept: Vec<_> = rows.iter().filter(|r| !r.2).collect();
        let res = binary_metrics(&pred, &target, &excluded);
        if kept.is_empty() {
            prop_assert!(res.is_err());
        } else {
            let m = res.unwrap();
            let tp = kept.iter().filter(|r| r.0 && r.1).count();
            let fp = kept.iter().filter(|r| r.0 && !r.1).count();
            let fn_ = kept.iter().filter(|r| !r.0 && r.1).count();
            let correct = kept.iter().filter(|r| r.0 == r.1).count();
            prop_assert_eq!(m.included, kept.len());
            prop_assert!((m.acc2 - correct as f64 / kept.len() as f64).abs() < 1e-12);
            let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            prop_assert!((m.f1 - f1).abs() < 1e-12);
        }
    }
}

#[test]
fn analytic_cases() {
    let t = vec![vec![1, 0, 1, 0, 0, 0], vec![0, 1, 0, 0, 0, 0]];
    let m = multilabel_metrics(&t, &t).unwrap();
    assert_eq!([m.accuracy, m.precision, m.recall, m.micro_f1], [1.0; 4]);
    let inv: Vec<Vec<u8>> = t.iter().map(|r| r.iter().map(|v| 1 - v).collect()).collect();
    let m = multilabel_metrics(&inv, &t).unwrap();
    assert_eq!((m.accuracy, m.micro_f1), (0.0, 0.0));

    let pos = vec![vec![1u8, 0]; 4];
    let half = vec![vec![1, 0], vec![0, 1], vec![1, 0], vec![0, 1]];
    let b = binary_metrics(&pos, &half, &[false; 4]).unwrap();
    assert_eq!(b.acc2, 0.5);
    assert!((b.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(multilabel_metrics(&t, &t[..1]).is_err());
}
