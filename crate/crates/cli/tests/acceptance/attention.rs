use merclip_core::autograd::Graph;
use merclip_core::cmd::cross_attention;
use merclip_core::nn::{Attention, Builder};
use merclip_core::params::{ParamGroup, ParamStore};
use merclip_core::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{fail, Outcome};

type Rows = Vec<Vec<f64>>;

fn rows_of(m: &Mat) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn linear(x: &Rows, w: &Rows, b: &[f64]) -> Rows {
    x.iter()
        .map(|xr| (0..b.len()).map(|j| b[j] + xr.iter().zip(w).map(|(xi, wr)| xi * wr[j]).sum::<f64>()).collect())
        .collect()
}

/// Textbook multi-head attention over nested vectors.
fn reference(store: &ParamStore, a: &Attention, t: &Rows, s: &Rows, keep: &[bool]) -> Rows {
    let lin = |l: &merclip_core::nn::Linear, x: &Rows| {
        let w = rows_of(store.value(l.w));
        let b = l.b.map_or(vec![0.0; w[0].len()], |b| store.value(b).data().to_vec());
        linear(x, &w, &b)
    };
    let (q, k, v) = (lin(&a.q, t), lin(&a.k, s), lin(&a.v, s));
    let dh = a.width / a.heads;
    let mut heads_out = vec![vec![0.0; a.width]; t.len()];
    for h in 0..a.heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<Option<f64>> = k
                .iter()
                .zip(keep)
                .map(|(kj, &kept)| kept.then(|| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt()))
                .collect();
            let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
            let z: f64 = w.iter().sum();
            for c in cols.clone() {
                heads_out[i][c] = w.iter().zip(&v).map(|(wj, vj)| wj / z * vj[c]).sum();
            }
        }
    }
    lin(&a.out, &heads_out)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let heads = rng.random_range(1..=2);
        let width = heads * rng.random_range(1..=16 / heads);
        let n_t = rng.random_range(1..=4);
        let n_s = rng.random_range(1..=8);
        let mut store = ParamStore::new();
        let mut init = ChaCha8Rng::seed_from_u64(case);
        let attn = Attention::new(&mut Builder::new(&mut store, &mut init, ParamGroup::Cmd, "x"), "attn", width, heads, 0.7)
            .map_err(fail)?;
        let mut draw = |r: usize| -> Rows { (0..r).map(|_| (0..width).map(|_| rng.random_range(-2.0..2.0)).collect()).collect() };
        let (t, s) = (draw(n_t), draw(n_s));
        let masked = rng.random_bool(0.5);
        let mut keep: Vec<bool> = (0..n_s).map(|_| !masked || rng.random_bool(0.7)).collect();
        let anchor = rng.random_range(0..n_s);
        keep[anchor] = true;

        let mut g = Graph::new(&store);
        let tv = g.input(Mat::from_rows(&t));
        let sv = g.input(Mat::from_rows(&s));
        let out = cross_attention(&mut g, &attn, tv, sv, masked.then_some(keep.as_slice())).map_err(fail)?;
        let got = rows_of(g.value(out.out));
        let want = reference(&store, &attn, &t, &s, &keep);
        for (gr, wr) in got.iter().zip(&want) {
            for (a, b) in gr.iter().zip(wr) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    if worst < 1e-6 {
        Ok(format!("1000 instances, max abs diff {worst:.2e}"))
    } else {
        Err(format!("max abs diff {worst:.3e} exceeds 1e-6"))
    }
}
