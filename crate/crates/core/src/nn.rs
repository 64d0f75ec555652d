//! Layers shared by the encoders and the cross-modal decoder.
//!
//! Weights are stored `in x out` and applied to row vectors (`y = x W + b`).

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

pub const LN_EPS: f64 = 1e-5;

/// Registers parameters under a name prefix and group.
pub struct Builder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    group: ParamGroup,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R, group: ParamGroup, prefix: &str) -> Self {
        Self {
            store,
            rng,
            group,
            prefix: prefix.to_string(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, R> {
        Builder {
            store: self.store,
            rng: self.rng,
            group: self.group,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let value = Init { rng: self.rng }.normal(rows, cols, std);
        self.store.add(join(&self.prefix, name), self.group, value)
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.store
            .add(join(&self.prefix, name), self.group, Mat::filled(rows, cols, v))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, d_in: usize, d_out: usize, std: f64, bias: bool) -> Result<Self> {
        let mut s = b.scope(name);
        let w = s.normal("weight", d_in, d_out, std)?;
        let b = if bias {
            Some(s.filled("bias", 1, d_out, 0.0)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, d: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            gamma: s.filled("weight", 1, d, 1.0)?,
            beta: s.filled("bias", 1, d, 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention with separate query/key/value
/// and output projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub width: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

pub struct AttentionOutput {
    pub out: Var,
    /// Attention weights, one `n_target x n_source` matrix per head.
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, width: usize, heads: usize, out_std: f64) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        let std = (width as f64).powf(-0.5);
        let mut s = b.scope(name);
        Ok(Self {
            heads,
            width,
            q: Linear::new(&mut s, "q", width, width, std, true)?,
            k: Linear::new(&mut s, "k", width, width, std, true)?,
            v: Linear::new(&mut s, "v", width, width, std, true)?,
            out: Linear::new(&mut s, "out", width, width, out_std, true)?,
        })
    }

    /// Attends from `target` rows to `source` rows. `keep` masks source
    /// positions (`false` = ignored); `causal` additionally hides later
    /// positions (self-attention only).
    pub fn forward(
        &self,
        g: &mut Graph,
        target: Var,
        source: Var,
        keep: Option<&[bool]>,
        causal: bool,
    ) -> Result<AttentionOutput> {
        let (n_t, wt) = g.shape(target);
        let (n_s, ws) = g.shape(source);
        if wt != self.width || ws != self.width {
            return Err(Error::shape(format!(
                "attention width {} got target {wt} and source {ws}",
                self.width
            )));
        }
        if let Some(k) = keep {
            if k.len() != n_s {
                return Err(Error::shape(format!("source mask length {} for {n_s} tokens", k.len())));
            }
        }
        let mask = if keep.is_some() || causal {
            let mut m = vec![true; n_t * n_s];
            for r in 0..n_t {
                for c in 0..n_s {
                    let kept = keep.is_none_or(|k| k[c]) && (!causal || c <= r);
                    m[r * n_s + c] = kept;
                }
                if !m[r * n_s..(r + 1) * n_s].iter().any(|&x| x) {
                    return Err(Error::EmptySource);
                }
            }
            Some(m)
        } else {
            None
        };
        if n_s == 0 {
            return Err(Error::EmptySource);
        }

        let q = self.q.forward(g, target);
        let k = self.k.forward(g, source);
        let v = self.v.forward(g, source);
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let s = g.matmul_bt(qh, kh);
            let s = g.scale(s, scale);
            let a = g.softmax(s, mask.as_deref());
            weights.push(a);
            outs.push(g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        Ok(AttentionOutput {
            out: self.out.forward(g, cat),
            weights,
        })
    }
}

/// Two-layer perceptron with QuickGELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc: Linear,
    pub proj: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, width: usize, hidden: usize, out_std: f64) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            fc: Linear::new(&mut s, "fc", width, hidden, (2.0 * width as f64).powf(-0.5), true)?,
            proj: Linear::new(&mut s, "proj", hidden, width, out_std, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc.forward(g, x);
        let h = g.quick_gelu(h);
        self.proj.forward(g, h)
    }
}

/// Pre-norm transformer encoder block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, width: usize, heads: usize, layers: usize) -> Result<Self> {
        let out_std = (width as f64).powf(-0.5) * (2.0 * layers as f64).powf(-0.5);
        let mut s = b.scope(name);
        Ok(Self {
            ln1: LayerNorm::new(&mut s, "ln_1", width)?,
            attn: Attention::new(&mut s, "attn", width, heads, out_std)?,
            ln2: LayerNorm::new(&mut s, "ln_2", width)?,
            mlp: Mlp::new(&mut s, "mlp", width, 4 * width, out_std)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, causal: bool) -> Result<Var> {
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, h, None, causal)?;
        let x = g.add(x, a.out);
        let h = self.ln2.forward(g, x);
        let m = self.mlp.forward(g, h);
        Ok(g.add(x, m))
    }

    /// Scalar count of one block of the given width.
    pub fn param_count(width: usize) -> usize {
        let ln = 2 * width;
        let attn = 4 * (width * width + width);
        let mlp = width * 4 * width + 4 * width + 4 * width * width + width;
        2 * ln + attn + mlp
    }
}
