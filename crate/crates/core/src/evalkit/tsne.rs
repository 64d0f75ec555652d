//! Exact t-SNE for small embedding sets (O(n^2) per iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    /// Upper bound; reduced to `(n - 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-conditional affinities matched to `perplexity` by bisection on the
/// Gaussian precision.
fn conditional_p(d: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = d.len();
    let target = perplexity.ln();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        // Shift by the nearest distance so exp() cannot underflow entirely.
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[i][j]).fold(f64::INFINITY, f64::min);
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-(d[i][j] - dmin) * beta).exp();
                p[i][j] = w;
                sum += w;
                dot += w * (d[i][j] - dmin);
            }
            let h = sum.ln() + beta * dot / sum;
            for j in 0..n {
                p[i][j] /= sum;
            }
            let diff = h - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
    }
    p
}

/// Two-dimensional projection of `x`; identical inputs and config give
/// identical output.
pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig) -> Vec<[f64; 2]> {
    let n = x.len();
    if n < 2 {
        return vec![[0.0, 0.0]; n];
    }
    let perplexity = cfg.perplexity.min((n as f64 - 1.0) / 3.0).max(1.0);
    let d: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| sq_dist(a, b)).collect()).collect();
    let cp = conditional_p(&d, perplexity);
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((cp[i][j] + cp[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut step = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![vec![0.0; n]; n];
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
                    num[i][j] = v;
                    z += v;
                }
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in (0..n).filter(|&j| j != i) {
                let m = (exag * p[i][j] - num[i][j] / z) * num[i][j];
                grad[0] += 4.0 * m * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (step[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                step[i][k] = momentum * step[i][k] - cfg.learning_rate * gains[i][k] * grad[k];
            }
        }
        for (yi, s) in y.iter_mut().zip(&step) {
            yi[0] += s[0];
            yi[1] += s[1];
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_clusters_deterministically() {
        let mut x = Vec::new();
        for i in 0..10 {
            let off = if i < 5 { 0.0 } else { 10.0 };
            x.push(vec![off + 0.01 * i as f64, off, -off]);
        }
        let cfg = TsneConfig {
            iterations: 300,
            ..TsneConfig::default()
        };
        let a = tsne(&x, &cfg);
        assert_eq!(a, tsne(&x, &cfg));
        let centroid = |r: std::ops::Range<usize>| {
            let k = r.len() as f64;
            r.fold([0.0; 2], |s, i| [s[0] + a[i][0] / k, s[1] + a[i][1] / k])
        };
        let (c0, c1) = (centroid(0..5), centroid(5..10));
        let between = sq_dist(&c0, &c1).sqrt();
        let within = (0..5).map(|i| sq_dist(&a[i], &c0).sqrt()).fold(0.0, f64::max);
        assert!(between > 2.0 * within, "between {between} within {within}");
    }
}
