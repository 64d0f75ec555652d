//! Quick oracle and invariant suite behind the `selftest` command. Each
//! check compares library code against a small, independent reference
//! computation and finishes in well under a second on one core.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::cmd::cross_attention;
use crate::config::RunConfig;
use crate::evalkit::{binary_metrics, multilabel_metrics, AblationGrid, GridKind};
use crate::head::{predict_emotions, predict_sentiment, LOGIT_SCALE_INIT};
use crate::ingest::{detokenize, segment_audio, tokenize_text, PreprocessConfig, Spectrogrammer, Tokenizer, Waveform};
use crate::nn::{Attention, Builder};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 7] = [
    ("attention_oracle", attention_oracle),
    ("attention_gradients", attention_gradients),
    ("metric_oracles", metric_oracles),
    ("inference_rule", inference_rule),
    ("preprocessing", preprocessing),
    ("tokenizer_roundtrip", tokenizer_roundtrip),
    ("ablation_grids", ablation_grids),
];

pub fn run() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let t = Instant::now();
            let r = f();
            CheckResult {
                name,
                passed: r.is_ok(),
                detail: r.unwrap_or_else(|e| e),
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn affine(x: &Mat, w: &Mat, b: Option<&Mat>) -> Mat {
    let mut y = x.matmul(w);
    if let Some(b) = b {
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    y
}

/// Loop-level multi-head attention for a single module.
fn dense_attention(store: &ParamStore, a: &Attention, t: &Mat, s: &Mat, keep: &[bool]) -> Mat {
    let lin = |l: &crate::nn::Linear, x: &Mat| affine(x, store.value(l.w), l.b.map(|b| store.value(b)));
    let (q, k, v) = (lin(&a.q, t), lin(&a.k, s), lin(&a.v, s));
    let dh = a.width / a.heads;
    let mut cat = Mat::zeros(t.rows(), a.width);
    for h in 0..a.heads {
        for i in 0..t.rows() {
            let mut w: Vec<f64> = (0..s.rows())
                .map(|j| (0..dh).map(|d| q.get(i, h * dh + d) * k.get(j, h * dh + d)).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = w.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
            for (x, &k) in w.iter_mut().zip(keep) {
                *x = if k { (*x - m).exp() } else { 0.0 };
            }
            let z: f64 = w.iter().sum();
            for d in 0..dh {
                let val: f64 = (0..s.rows()).map(|j| w[j] / z * v.get(j, h * dh + d)).sum();
                cat.set(i, h * dh + d, val);
            }
        }
    }
    lin(&a.out, &cat)
}

fn attention_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let heads = rng.random_range(1..=2);
        let width = heads * rng.random_range(1..=16 / heads);
        let (n_t, n_s) = (rng.random_range(1..=3), rng.random_range(1..=8));
        let mut store = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(rng.random());
        let attn = Attention::new(&mut Builder::new(&mut store, &mut prng, ParamGroup::Cmd, "a"), "attn", width, heads, 0.5)
            .map_err(|e| e.to_string())?;
        let (t, s) = (random_mat(&mut rng, n_t, width), random_mat(&mut rng, n_s, width));
        let mut keep: Vec<bool> = (0..n_s).map(|_| rng.random_bool(0.8)).collect();
        keep[rng.random_range(0..n_s)] = true;
        let mut g = Graph::new(&store);
        let (tv, sv) = (g.input(t.clone()), g.input(s.clone()));
        let out = cross_attention(&mut g, &attn, tv, sv, Some(&keep)).map_err(|e| e.to_string())?;
        worst = worst.max(g.value(out.out).max_abs_diff(&dense_attention(&store, &attn, &t, &s, &keep)));
    }
    if worst <= 1e-9 {
        Ok(format!("200 instances, max abs diff {worst:.1e}"))
    } else {
        Err(format!("max abs diff {worst:.3e}"))
    }
}

fn attention_gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut Builder::new(&mut store, &mut rng, ParamGroup::Cmd, "a"), "attn", 8, 2, 0.5)
        .map_err(|e| e.to_string())?;
    let (t, s) = (random_mat(&mut rng, 1, 8), random_mat(&mut rng, 5, 8));
    let targets = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
    let loss = |store: &ParamStore| -> (f64, Option<crate::params::Gradients>) {
        let mut g = Graph::new(store);
        let (tv, sv) = (g.input(t.clone()), g.input(s.clone()));
        let o = cross_attention(&mut g, &attn, tv, sv, None).expect("valid shapes").out;
        let p = g.sigmoid(o);
        let l = g.bce(p, &targets);
        (g.value(l).item(), Some(g.backward_scalar(l)))
    };
    let (_, grads) = loss(&store);
    let grads = grads.expect("gradients");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in [attn.q.w, attn.k.w, attn.v.w, attn.out.w] {
        for _ in 0..5 {
            let k = rng.random_range(0..store.value(p).len());
            let x0 = store.value(p).data()[k];
            store.value_mut(p).data_mut()[k] = x0 + h;
            let up = loss(&store).0;
            store.value_mut(p).data_mut()[k] = x0 - h;
            let down = loss(&store).0;
            store.value_mut(p).data_mut()[k] = x0;
            let (a, f) = (grads.coord(p, k), (up - down) / (2.0 * h));
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1e-6));
        }
    }
    if worst < 1e-4 {
        Ok(format!("20 coordinates, max rel err {worst:.1e}"))
    } else {
        Err(format!("max rel err {worst:.3e}"))
    }
}

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let n = rng.random_range(1..=10);
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<u8>> { (0..n).map(|_| (0..6).map(|_| rng.random_range(0..2)).collect()).collect() };
        let (p, t) = (rows(&mut rng), rows(&mut rng));
        let got = multilabel_metrics(&p, &t).map_err(|e| e.to_string())?;
        let set = |r: &[u8]| -> BTreeSet<usize> { (0..r.len()).filter(|&i| r[i] == 1).collect() };
        let (mut acc, mut inter, mut np, mut nt) = (0.0, 0usize, 0usize, 0usize);
        for (a, b) in p.iter().zip(&t) {
            let (a, b) = (set(a), set(b));
            let i = a.intersection(&b).count();
            let u = a.union(&b).count();
            acc += if u == 0 { 1.0 } else { i as f64 / u as f64 };
            inter += i;
            np += a.len();
            nt += b.len();
        }
        let prec = if np == 0 { 0.0 } else { inter as f64 / np as f64 };
        let rec = if nt == 0 { 0.0 } else { inter as f64 / nt as f64 };
        let f1 = if inter == 0 { 0.0 } else { 2.0 * inter as f64 / (np + nt) as f64 };
        let want = [acc / n as f64, prec, rec, f1];
        let have = [got.accuracy, got.precision, got.recall, got.micro_f1];
        if want.iter().zip(&have).any(|(w, h)| (w - h).abs() > 1e-12) {
            return Err(format!("multilabel case {case}: {have:?} vs {want:?}"));
        }

        let m = rng.random_range(1..=20);
        let pair = |rng: &mut ChaCha8Rng| -> Vec<Vec<u8>> {
            (0..m).map(|_| if rng.random_bool(0.5) { vec![1, 0] } else { vec![0, 1] }).collect()
        };
        let (p, t) = (pair(&mut rng), pair(&mut rng));
        let mut ex: Vec<bool> = (0..m).map(|_| rng.random_bool(0.2)).collect();
        ex[0] = false;
        let got = binary_metrics(&p, &t, &ex).map_err(|e| e.to_string())?;
        let mut cm = [[0usize; 2]; 2];
        for ((a, b), &x) in p.iter().zip(&t).zip(&ex) {
            if !x {
                cm[usize::from(b[0] == 1)][usize::from(a[0] == 1)] += 1;
            }
        }
        let total = cm[0][0] + cm[0][1] + cm[1][0] + cm[1][1];
        let acc2 = (cm[0][0] + cm[1][1]) as f64 / total as f64;
        let denom = 2 * cm[1][1] + cm[0][1] + cm[1][0];
        let f1 = if cm[1][1] == 0 { 0.0 } else { 2.0 * cm[1][1] as f64 / denom as f64 };
        if got.included != total || (got.acc2 - acc2).abs() > 1e-12 || (got.f1 - f1).abs() > 1e-12 {
            return Err(format!("binary case {case}: {got:?} vs acc2 {acc2} f1 {f1}"));
        }
    }
    Ok("200 multi-label and 200 binary instances".into())
}

fn inference_rule() -> Result<String, String> {
    if predict_emotions(&[0.3; 6], 0.6).labels != [0; 6] {
        return Err("all-equal scores must predict no emotion".into());
    }
    let scores = [0.1, 0.9, 0.1, 0.1, 0.1, 0.1];
    let mean = scores.iter().sum::<f64>() / 6.0;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
    let want: Vec<u8> = scores.iter().map(|s| u8::from(1.0 / (1.0 + (-(s - mean) / sd).exp()) > 0.6)).collect();
    if predict_emotions(&scores, 0.6).labels != want {
        return Err("z-score, sigmoid, threshold mismatch".into());
    }
    if (LOGIT_SCALE_INIT - 1.0 / 0.07).abs() > 1e-9 {
        return Err(format!("logit scale init {LOGIT_SCALE_INIT}"));
    }
    if predict_sentiment(&[0.1, 0.2], LOGIT_SCALE_INIT).labels != [0, 1] {
        return Err("sentiment argmax mismatch".into());
    }
    Ok("emotion and sentiment rules".into())
}

fn preprocessing() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(1..=16_000 * 9);
        let tau = n as f64 / 16_000.0;
        let got = segment_audio(&Waveform::new(vec![0.0; n], 16_000), 2.0).map_err(|e| e.to_string())?.len();
        if got != (tau / 2.0).ceil() as usize {
            return Err(format!("{n} samples gave {got} segments"));
        }
    }
    let spec = Spectrogrammer::new(&PreprocessConfig::default(), 16_000).map_err(|e| e.to_string())?;
    let (_, frames) = spec.log_mel(&vec![0.0; 32_000]).map_err(|e| e.to_string())?;
    if frames != 61 {
        return Err(format!("2 s at 16 kHz gave {frames} frames"));
    }
    Ok("segment counts and 61 frames per 2 s segment".into())
}

fn tokenizer_roundtrip() -> Result<String, String> {
    const WORDS: [&str; 12] = [
        "i", "really", "liked", "this", "movie", "not", "sure", "Great", "acting,", "but", "slow.", "ok!",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s: Vec<&str> = (0..rng.random_range(0..12)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        let s = s.join(" ");
        let back = detokenize(&tokenize_text(&s, 77));
        if back != Tokenizer::normalize(&s) {
            return Err(format!("`{s}` came back as `{back}`"));
        }
    }
    Ok("100 strings".into())
}

fn ablation_grids() -> Result<String, String> {
    let base = RunConfig::preset("tiny").map_err(|e| e.to_string())?;
    let orders = AblationGrid::build(GridKind::Orders, &base).map_err(|e| e.to_string())?;
    let comps = AblationGrid::build(GridKind::Components, &base).map_err(|e| e.to_string())?;
    if orders.cells.len() != 15 || comps.cells.len() != 4 {
        return Err(format!("{} order cells, {} component cells", orders.cells.len(), comps.cells.len()));
    }
    let lva = orders.cells.iter().find(|c| c.name == "LVA").ok_or("no LVA cell")?;
    if lva.config.cmd.order.to_string() != "LVA" {
        return Err(format!("LVA cell has order {}", lva.config.cmd.order));
    }
    Ok("15 order cells, 4 component cells".into())
}
