//! Cross-modal decoder.
//!
//! A target sequence (the projected task query, length 1) is refined by one
//! decoder layer per fused modality. Each layer applies self-attention over
//! the target, cross-attention from the target to the modality's keys and
//! values, then a feed-forward network, each as a pre-norm residual
//! sublayer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autograd::{Graph, Var};
use crate::encoders::{FeatureVars, Modality};
use crate::error::{Error, Result};
use crate::nn::{Attention, AttentionOutput, Builder, LayerNorm, Linear, Mlp};
use crate::params::{ParamGroup, ParamStore};

/// Which encoder outputs serve as keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvGranularity {
    /// Per-frame, per-token or per-segment vectors.
    Token,
    /// The single pooled vector.
    Global,
}

/// Modalities in fusion order, written as letters (`"LVA"`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FusionOrder(Vec<Modality>);

impl FusionOrder {
    pub fn new(order: Vec<Modality>) -> Result<Self> {
        if order.is_empty() || order.len() > 3 {
            return Err(Error::Config("fusion order needs 1 to 3 modalities".into()));
        }
        for (i, m) in order.iter().enumerate() {
            if order[..i].contains(m) {
                return Err(Error::Config(format!("modality {} repeated in fusion order", m.letter())));
            }
        }
        Ok(Self(order))
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for FusionOrder {
    fn default() -> Self {
        Self(vec![Modality::Language, Modality::Vision, Modality::Audio])
    }
}

impl fmt::Display for FusionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{}", m.letter())?;
        }
        Ok(())
    }
}

impl FromStr for FusionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let order = s
            .chars()
            .map(|c| Modality::from_letter(c).ok_or_else(|| Error::Config(format!("unknown modality `{c}` in order `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(order)
    }
}

impl Serialize for FusionOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FusionOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmdConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub kv_granularity: KvGranularity,
    pub order: FusionOrder,
}

impl Default for CmdConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 512,
            heads: 8,
            ffn_mult: 4,
            kv_granularity: KvGranularity::Token,
            order: FusionOrder::default(),
        }
    }
}

impl CmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers != self.order.len() {
            return Err(Error::Config(format!(
                "cmd.layers = {} but cmd.order `{}` fuses {} modalities",
                self.layers,
                self.order,
                self.order.len()
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "cmd.hidden {} not divisible by cmd.heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(Error::Config("cmd.ffn_mult must be positive".into()));
        }
        Ok(())
    }
}

/// Scaled dot-product cross-attention from `target` rows to `source` rows.
/// Masked source positions get zero weight; a fully masked source is an
/// error.
pub fn cross_attention(
    g: &mut Graph,
    attn: &Attention,
    target: Var,
    source: Var,
    keep: Option<&[bool]>,
) -> Result<AttentionOutput> {
    attn.forward(g, target, source, keep, false)
}

#[derive(Debug, Clone)]
pub struct CmdLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub ln_source: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ffn: LayerNorm,
    pub mlp: Mlp,
}

/// Outputs of one decoder layer.
pub struct LayerOutput {
    pub state: Var,
    /// Cross-attention weights per head.
    pub cross_weights: Vec<Var>,
}

impl CmdLayer {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, c: &CmdConfig) -> Result<Self> {
        let d = c.hidden;
        let out_std = (d as f64).powf(-0.5) * (2.0 * c.layers as f64).powf(-0.5);
        let mut s = b.scope(name);
        Ok(Self {
            ln_self: LayerNorm::new(&mut s, "ln_self", d)?,
            self_attn: Attention::new(&mut s, "self_attn", d, c.heads, out_std)?,
            ln_cross: LayerNorm::new(&mut s, "ln_cross", d)?,
            ln_source: LayerNorm::new(&mut s, "ln_source", d)?,
            cross_attn: Attention::new(&mut s, "cross_attn", d, c.heads, out_std)?,
            ln_ffn: LayerNorm::new(&mut s, "ln_ffn", d)?,
            mlp: Mlp::new(&mut s, "mlp", d, c.ffn_mult * d, out_std)?,
        })
    }

    /// `Z^[k] -> Z^[k+1]` given the projected source rows and their mask.
    pub fn forward(&self, g: &mut Graph, z: Var, source: Var, keep: Option<&[bool]>) -> Result<LayerOutput> {
        let (_, wz) = g.shape(z);
        let (_, ws) = g.shape(source);
        if wz != self.self_attn.width || ws != self.cross_attn.width {
            return Err(Error::shape(format!(
                "decoder width {} got target {wz} and source {ws}",
                self.self_attn.width
            )));
        }
        let h = self.ln_self.forward(g, z);
        let a = self.self_attn.forward(g, h, h, None, false)?;
        let z = g.add(z, a.out);
        let h = self.ln_cross.forward(g, z);
        let src = self.ln_source.forward(g, source);
        let c = cross_attention(g, &self.cross_attn, h, src, keep)?;
        let z = g.add(z, c.out);
        let h = self.ln_ffn.forward(g, z);
        let m = self.mlp.forward(g, h);
        Ok(LayerOutput {
            state: g.add(z, m),
            cross_weights: c.weights,
        })
    }
}

/// Decoder plus the adapters from encoder width to decoder width.
#[derive(Debug, Clone)]
pub struct Cmd {
    pub config: CmdConfig,
    pub layers: Vec<CmdLayer>,
    /// Per-modality source adapters (V, L, A), present when widths differ.
    pub source_proj: [Option<Linear>; 3],
    /// Query adapter, present when the query width differs.
    pub query_proj: Option<Linear>,
}

pub struct DecodeOutput {
    /// `Z^[0] .. Z^[k]`; the last entry is the decoder output.
    pub states: Vec<Var>,
    /// Cross-attention weights per layer, per head.
    pub cross_weights: Vec<Vec<Var>>,
}

impl DecodeOutput {
    pub fn output(&self) -> Var {
        *self.states.last().expect("at least the initial state")
    }
}

fn modality_slot(m: Modality) -> usize {
    match m {
        Modality::Vision => 0,
        Modality::Language => 1,
        Modality::Audio => 2,
    }
}

impl Cmd {
    /// `feature_width` is the encoder output width, `query_width` the width of
    /// the initial target state.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        c: &CmdConfig,
        feature_width: usize,
        query_width: usize,
    ) -> Result<Self> {
        c.validate()?;
        let layers = {
            let mut b = Builder::new(store, rng, ParamGroup::Cmd, "cmd");
            (0..c.layers)
                .map(|k| CmdLayer::new(&mut b, &format!("layers.{k}"), c))
                .collect::<Result<Vec<_>>>()?
        };
        let mut b = Builder::new(store, rng, ParamGroup::Projection, "proj");
        let std = (feature_width as f64).powf(-0.5);
        let mut source_proj: [Option<Linear>; 3] = [None, None, None];
        if feature_width != c.hidden {
            for m in c.order.modalities() {
                source_proj[modality_slot(*m)] =
                    Some(Linear::new(&mut b, &m.letter().to_string(), feature_width, c.hidden, std, true)?);
            }
        }
        let query_proj = if query_width != c.hidden {
            Some(Linear::new(&mut b, "query", query_width, c.hidden, (query_width as f64).powf(-0.5), true)?)
        } else {
            None
        };
        Ok(Self {
            config: c.clone(),
            layers,
            source_proj,
            query_proj,
        })
    }

    /// Projected keys/values and mask for one modality at the configured
    /// granularity.
    pub fn source(&self, g: &mut Graph, f: &FeatureVars) -> (Var, Option<Vec<bool>>) {
        let (rows, keep) = match self.config.kv_granularity {
            KvGranularity::Token => {
                let keep = if f.valid.iter().all(|&v| v) {
                    None
                } else {
                    Some(f.valid.clone())
                };
                (f.tokens, keep)
            }
            KvGranularity::Global => (f.global, None),
        };
        let rows = match &self.source_proj[modality_slot(f.modality)] {
            Some(p) => p.forward(g, rows),
            None => rows,
        };
        (rows, keep)
    }

    /// Runs every layer in fusion order. `features` must list exactly the
    /// configured modalities in order.
    pub fn decode(&self, g: &mut Graph, query: Var, features: &[FeatureVars]) -> Result<DecodeOutput> {
        let got: Vec<Modality> = features.iter().map(|f| f.modality).collect();
        if got != self.config.order.modalities() || self.layers.len() != features.len() {
            return Err(Error::Config(format!(
                "decoder expects order `{}` over {} layers, got {} features",
                self.config.order,
                self.layers.len(),
                got.iter().map(|m| m.letter()).collect::<String>()
            )));
        }
        let z0 = match &self.query_proj {
            Some(p) => p.forward(g, query),
            None => query,
        };
        let mut states = vec![z0];
        let mut cross_weights = Vec::with_capacity(features.len());
        for (layer, f) in self.layers.iter().zip(features) {
            let (src, keep) = self.source(g, f);
            let out = layer.forward(g, *states.last().unwrap(), src, keep.as_deref())?;
            states.push(out.state);
            cross_weights.push(out.cross_weights);
        }
        Ok(DecodeOutput { states, cross_weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::SeedableRng;

    fn small() -> CmdConfig {
        CmdConfig {
            layers: 3,
            hidden: 8,
            heads: 2,
            ffn_mult: 2,
            kv_granularity: KvGranularity::Token,
            order: "LVA".parse().unwrap(),
        }
    }

    fn feature(g: &mut Graph, m: Modality, rng: &mut impl Rng, n: usize, w: usize) -> FeatureVars {
        let data: Vec<f64> = (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Mat::from_vec(n, w, data);
        let global = t.mean_rows();
        FeatureVars {
            modality: m,
            tokens: g.input(t),
            global: g.input(global),
            valid: vec![true; n],
        }
    }

    #[test]
    fn order_parsing() {
        let o: FusionOrder = "lva".parse().unwrap();
        assert_eq!(o.to_string(), "LVA");
        assert!("LL".parse::<FusionOrder>().is_err());
        assert!("LVX".parse::<FusionOrder>().is_err());
        let mut c = small();
        c.layers = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn decode_records_every_state_and_checks_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cmd = Cmd::new(&mut store, &mut rng, &small(), 8, 8).unwrap();
        let mut g = Graph::new(&store);
        let q = g.input(Mat::from_vec(1, 8, (0..8).map(|i| i as f64 / 8.0).collect()));
        let fl = feature(&mut g, Modality::Language, &mut rng, 5, 8);
        let fv = feature(&mut g, Modality::Vision, &mut rng, 4, 8);
        let fa = feature(&mut g, Modality::Audio, &mut rng, 2, 8);
        let out = cmd.decode(&mut g, q, &[fl.clone(), fv.clone(), fa.clone()]).unwrap();
        assert_eq!(out.states.len(), 4);
        assert!(cmd.decode(&mut g, q, &[fv, fl, fa]).is_err());
    }
}
