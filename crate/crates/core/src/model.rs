//! Full model: encoders, label encoder, decoder and prediction head, with
//! switches to drop the decoder or the label encoder for ablations.
//!
//! Without the decoder, the pooled modality vectors are concatenated (in
//! fusion order) and passed through a two-layer perceptron. Without the
//! label encoder, the decoder starts from a learned query vector and a
//! linear classifier produces one score per class. Scores from every
//! variant feed the same prediction rule and losses.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::cmd::{Cmd, CmdConfig};
use crate::encoders::{patchify, BackboneConfig, Encoders, FeatureVars, Modality, Normalization};
use crate::error::{Error, Result};
use crate::head::{self, HeadConfig, Prediction};
use crate::ingest::{PreparedSample, PreprocessConfig, Sentiment, Target, Task};
use crate::label_encoder::{LabelEncoder, LabelSet};
use crate::nn::{Builder, Linear};
use crate::params::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Components {
    pub cmd: bool,
    pub label_encoder: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            cmd: true,
            label_encoder: true,
        }
    }
}

impl Components {
    pub fn tag(self) -> &'static str {
        match (self.cmd, self.label_encoder) {
            (false, false) => "wo_cmd_le",
            (false, true) => "wo_cmd",
            (true, false) => "wo_le",
            (true, true) => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub backbone: BackboneConfig,
    pub cmd: CmdConfig,
    pub head: HeadConfig,
    pub prompt_len: usize,
    pub components: Components,
    pub labels: LabelSet,
    pub query_word: String,
}

/// One sample converted to encoder inputs.
#[derive(Debug, Clone)]
pub struct SampleInput {
    pub sample_id: String,
    pub vision: Vec<Arc<Mat>>,
    pub audio: Vec<Arc<Mat>>,
    pub tokens: Vec<u32>,
    pub target: Target,
}

impl SampleInput {
    pub fn from_prepared(s: &PreparedSample, task: Task, patch: usize, pre: &PreprocessConfig) -> Result<Self> {
        Ok(Self {
            sample_id: s.sample_id.clone(),
            vision: patchify(&s.frames, patch, Normalization::frames(pre))?,
            audio: patchify(&s.spectrograms, patch, Normalization::spectrograms(pre))?,
            tokens: s.tokens.ids.clone(),
            target: s.target(task),
        })
    }

    /// Whether the sample contributes to the loss and metrics of its task.
    pub fn included(&self) -> bool {
        !matches!(self.target, Target::Sentiment(Sentiment::Excluded))
    }

    /// Target in prediction encoding (binary vector or one-hot pair).
    pub fn target_vector(&self) -> Vec<u8> {
        match self.target {
            Target::Emotion(e) => e.to_vec(),
            Target::Sentiment(Sentiment::Positive) => vec![1, 0],
            Target::Sentiment(Sentiment::Negative) => vec![0, 1],
            Target::Sentiment(Sentiment::Excluded) => Vec::new(),
        }
    }
}

/// Label-side graph nodes shared by all samples of a batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelSide {
    /// `C x embed_dim` label embeddings.
    pub labels: Option<Var>,
    /// `1 x embed_dim` task query.
    pub query: Option<Var>,
}

pub struct Forward {
    /// `1 x C` class scores.
    pub scores: Var,
    /// Representation compared against the labels (decoder output, or the
    /// hidden layer of the fusion perceptron).
    pub fused: Var,
    pub features: Vec<FeatureVars>,
    /// Decoder states `Z^[0] ..`, empty without the decoder.
    pub states: Vec<Var>,
}

/// Inference result for one sample.
#[derive(Debug, Clone)]
pub struct Inference {
    pub sample_id: String,
    pub scores: Vec<f64>,
    pub prediction: Prediction,
    pub fused: Vec<f64>,
    /// Pooled modality vectors, in fusion order.
    pub globals: Vec<(Modality, Vec<f64>)>,
}

pub struct StepOutput {
    /// Mean loss over included samples.
    pub loss: f64,
    pub grads: Gradients,
    pub included: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub label_encoder: Option<LabelEncoder>,
    pub cmd: Option<Cmd>,
    pub query: Option<ParamId>,
    pub fuse: Option<(Linear, Linear)>,
    pub out_proj: Option<Linear>,
    pub classifier: Option<Linear>,
    /// Holds `ln(logit_scale)`.
    pub log_logit_scale: ParamId,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.cmd.validate()?;
        if config.labels.task != config.task {
            return Err(Error::Config("label set task differs from model task".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = &config.backbone;
        let encoders = Encoders::new(&mut store, &mut rng, bb)?;
        let comps = config.components;
        let label_encoder = if comps.label_encoder {
            let le = LabelEncoder::new(&mut store, &mut rng, bb, config.prompt_len)?;
            copy_text_tower(&mut store, "language.", "label_encoder.");
            Some(le)
        } else {
            None
        };
        let c = config.labels.len();
        let hidden = config.cmd.hidden;
        let d = bb.embed_dim;
        let (mut cmd, mut query, mut fuse, mut out_proj, mut classifier) = (None, None, None, None, None);
        if comps.cmd {
            let query_width = if comps.label_encoder { d } else { hidden };
            cmd = Some(Cmd::new(&mut store, &mut rng, &config.cmd, d, query_width)?);
            let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Head, "head");
            let std = (hidden as f64).powf(-0.5);
            if comps.label_encoder {
                if hidden != d {
                    out_proj = Some(Linear::new(&mut b, "out_proj", hidden, d, std, true)?);
                }
            } else {
                query = Some(b.normal("query", 1, hidden, 0.02)?);
                classifier = Some(Linear::new(&mut b, "classifier", hidden, c, std, true)?);
            }
        } else {
            let n_in = d * config.cmd.order.len();
            let out = if comps.label_encoder { d } else { c };
            let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Head, "head");
            let fc1 = Linear::new(&mut b, "fuse.fc1", n_in, hidden, (n_in as f64).powf(-0.5), true)?;
            let fc2 = Linear::new(&mut b, "fuse.fc2", hidden, out, (hidden as f64).powf(-0.5), true)?;
            fuse = Some((fc1, fc2));
        }
        let log_logit_scale = Builder::new(&mut store, &mut rng, ParamGroup::Head, "head").filled(
            "logit_scale",
            1,
            1,
            config.head.logit_scale_init.ln(),
        )?;
        Ok(Self {
            config,
            store,
            encoders,
            label_encoder,
            cmd,
            query,
            fuse,
            out_proj,
            classifier,
            log_logit_scale,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn logit_scale(&self) -> f64 {
        self.store.value(self.log_logit_scale).item().exp()
    }

    pub fn modalities(&self) -> &[Modality] {
        self.config.cmd.order.modalities()
    }

    pub fn label_side(&self, g: &mut Graph) -> Result<LabelSide> {
        let Some(le) = &self.label_encoder else {
            return Ok(LabelSide::default());
        };
        let labels = le.embed_labels_graph(g, &self.config.labels)?;
        let query = if self.cmd.is_some() {
            Some(le.build_query_graph(g, &self.config.query_word)?)
        } else {
            None
        };
        Ok(LabelSide {
            labels: Some(labels),
            query,
        })
    }

    pub fn encode(&self, g: &mut Graph, input: &SampleInput) -> Result<Vec<FeatureVars>> {
        self.modalities()
            .iter()
            .map(|m| match m {
                Modality::Vision => self.encoders.vision.forward_sequence(g, *m, &input.vision),
                Modality::Audio => self.encoders.audio.forward_sequence(g, *m, &input.audio),
                Modality::Language => self.encoders.language.forward_ids(g, &input.tokens),
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, input: &SampleInput, side: &LabelSide) -> Result<Forward> {
        let features = self.encode(g, input)?;
        let (fused, states, compare) = match (&self.cmd, &self.fuse) {
            (Some(cmd), _) => {
                let query = match (side.query, self.query) {
                    (Some(q), _) => q,
                    (None, Some(p)) => g.param(p),
                    (None, None) => return Err(Error::Config("decoder has no query".into())),
                };
                let out = cmd.decode(g, query, &features)?;
                let z = out.output();
                let compare = match (&self.out_proj, &self.classifier) {
                    (_, Some(fc)) => fc.forward(g, z),
                    (Some(p), None) => p.forward(g, z),
                    (None, None) => z,
                };
                (z, out.states, compare)
            }
            (None, Some((fc1, fc2))) => {
                let globals: Vec<Var> = features.iter().map(|f| f.global).collect();
                let x = if globals.len() == 1 { globals[0] } else { g.concat_cols(&globals) };
                let h = fc1.forward(g, x);
                let h = g.quick_gelu(h);
                (h, Vec::new(), fc2.forward(g, h))
            }
            (None, None) => unreachable!("model has either a decoder or a fusion perceptron"),
        };
        let scores = match side.labels {
            Some(labels) => head::similarity_graph(g, compare, labels)?,
            None => compare,
        };
        Ok(Forward {
            scores,
            fused,
            features,
            states,
        })
    }

    /// Loss of one sample on its task, or `None` for excluded samples.
    pub fn loss(&self, g: &mut Graph, scores: Var, input: &SampleInput) -> Option<Var> {
        match input.target {
            Target::Emotion(e) => {
                let t: Vec<f64> = e.iter().map(|&v| f64::from(v)).collect();
                Some(head::emotion_loss_graph(g, scores, &t))
            }
            Target::Sentiment(s) => {
                let class = s.class_index()?;
                let ls = g.param(self.log_logit_scale);
                Some(head::sentiment_loss_graph(g, scores, ls, class))
            }
        }
    }

    /// Mean loss over the included samples of `batch` and its gradient.
    /// Samples are processed one graph at a time; label-side gradients are
    /// collected through tracked inputs and pushed through the label encoder
    /// once per batch.
    pub fn loss_and_grads(&self, batch: &[&SampleInput], batch_index: usize) -> Result<StepOutput> {
        let mut g0 = Graph::new(&self.store);
        let side0 = self.label_side(&mut g0)?;
        let included = batch.iter().filter(|s| s.included()).count();
        let mut grads = Gradients::new(&self.store);
        let mut d_labels: Option<Mat> = None;
        let mut d_query: Option<Mat> = None;
        let mut total = 0.0;
        if included == 0 {
            return Ok(StepOutput { loss: 0.0, grads, included });
        }
        let weight = 1.0 / included as f64;
        for input in batch.iter().filter(|s| s.included()) {
            let mut g = Graph::new(&self.store);
            let side = LabelSide {
                labels: side0.labels.map(|v| g.input_tracked(g0.value(v).clone())),
                query: side0.query.map(|v| g.input_tracked(g0.value(v).clone())),
            };
            let fwd = self.forward(&mut g, input, &side)?;
            let loss = self.loss(&mut g, fwd.scores, input).expect("included sample has a loss");
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: batch_index,
                    detail: format!("sample `{}` produced loss {lv}", input.sample_id),
                });
            }
            total += lv * weight;
            let tracked: Vec<Var> = [side.labels, side.query].into_iter().flatten().collect();
            let tg = g.backward_into(&[(loss, Mat::scalar(weight))], &tracked, &mut grads);
            let mut it = tg.into_iter();
            if side.labels.is_some() {
                add_into(&mut d_labels, it.next().unwrap().1);
            }
            if side.query.is_some() {
                add_into(&mut d_query, it.next().unwrap().1);
            }
        }
        let seeds: Vec<(Var, Mat)> = [(side0.labels, d_labels), (side0.query, d_query)]
            .into_iter()
            .filter_map(|(v, d)| Some((v?, d?)))
            .collect();
        if !seeds.is_empty() {
            g0.backward_into(&seeds, &[], &mut grads);
        }
        Ok(StepOutput {
            loss: total,
            grads,
            included,
        })
    }

    /// Scores, predictions and intermediate representations.
    pub fn infer(&self, inputs: &[SampleInput]) -> Result<Vec<Inference>> {
        let mut g0 = Graph::new(&self.store);
        let side0 = self.label_side(&mut g0)?;
        let labels = side0.labels.map(|v| g0.value(v).clone());
        let query = side0.query.map(|v| g0.value(v).clone());
        let scale = self.logit_scale();
        inputs
            .iter()
            .map(|input| {
                let mut g = Graph::new(&self.store);
                let side = LabelSide {
                    labels: labels.clone().map(|m| g.input(m)),
                    query: query.clone().map(|m| g.input(m)),
                };
                let fwd = self.forward(&mut g, input, &side)?;
                let scores = g.value(fwd.scores).data().to_vec();
                Ok(Inference {
                    sample_id: input.sample_id.clone(),
                    prediction: head::predict(self.task(), &scores, scale, self.config.head.threshold),
                    scores,
                    fused: g.value(fwd.fused).data().to_vec(),
                    globals: fwd
                        .features
                        .iter()
                        .map(|f| (f.modality, g.value(f.global).data().to_vec()))
                        .collect(),
                })
            })
            .collect()
    }

    /// Digest of the frozen label encoder weights (empty model digest when
    /// the label encoder is disabled).
    pub fn frozen_digest(&self) -> String {
        self.store.group_digest(ParamGroup::LabelEncoder)
    }
}

fn add_into(acc: &mut Option<Mat>, g: Mat) {
    match acc {
        Some(a) => a.add_assign(&g),
        None => *acc = Some(g),
    }
}

/// Initializes every `dst_prefix` parameter from its `src_prefix`
/// counterpart (the label encoder starts as a copy of the language tower).
fn copy_text_tower(store: &mut ParamStore, src_prefix: &str, dst_prefix: &str) {
    let pairs: Vec<(ParamId, ParamId)> = store
        .iter()
        .filter_map(|(id, e)| {
            let rest = e.name.strip_prefix(dst_prefix)?;
            Some((store.id(&format!("{src_prefix}{rest}"))?, id))
        })
        .collect();
    for (src, dst) in pairs {
        let v = store.value(src).clone();
        *store.value_mut(dst) = v;
    }
}
