//! Vision, language and audio encoders over one transformer backbone.
//!
//! Vision and audio use the same image encoder architecture (patch
//! embedding, class token, learned positions, pre-norm blocks, projection
//! of the class token). Language uses a causal text encoder pooled at
//! `[EOS]`. Temporal pooling across frames or segments is a plain mean.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ingest::{Image, PreprocessConfig, Tokenizer};
use crate::nn::{Block, Builder, LayerNorm};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "V")]
    Vision,
    #[serde(rename = "L")]
    Language,
    #[serde(rename = "A")]
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Language, Modality::Audio];

    pub fn letter(self) -> char {
        match self {
            Modality::Vision => 'V',
            Modality::Language => 'L',
            Modality::Audio => 'A',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'V' => Some(Modality::Vision),
            'L' => Some(Modality::Language),
            'A' => Some(Modality::Audio),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Tiny,
    Full,
    Custom,
}

/// Shape of the image and text towers. `width`/`layers`/`heads` describe
/// the image tower shared by vision and audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub scale: Scale,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub image_size: usize,
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    /// Maximum text sequence length, including `[SOS]` and `[EOS]`.
    pub max_len: usize,
    /// Output width shared by all encoders.
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self {
            scale: Scale::Tiny,
            width: 64,
            layers: 2,
            heads: 4,
            patch: 56,
            image_size: 224,
            text_width: 64,
            text_layers: 2,
            text_heads: 4,
            max_len: 77,
            embed_dim: 64,
            seed: 0,
        }
    }

    /// ViT-B/32-scale image tower and the matching 512-wide text tower.
    pub fn full() -> Self {
        Self {
            scale: Scale::Full,
            width: 768,
            layers: 12,
            heads: 12,
            patch: 32,
            image_size: 224,
            text_width: 512,
            text_layers: 12,
            text_heads: 8,
            max_len: 77,
            embed_dim: 512,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.width % self.heads != 0 {
            return err(format!("backbone.width {} not divisible by backbone.heads {}", self.width, self.heads));
        }
        if self.text_heads == 0 || self.text_width % self.text_heads != 0 {
            return err(format!(
                "backbone.text_width {} not divisible by backbone.text_heads {}",
                self.text_width, self.text_heads
            ));
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return err(format!("backbone.image_size {} not divisible by backbone.patch {}", self.image_size, self.patch));
        }
        if self.max_len < 2 || self.embed_dim == 0 || self.layers == 0 || self.text_layers == 0 {
            return err("backbone dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }
}

/// Encoder output for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeature {
    pub modality: Modality,
    /// `n x embed_dim`: per-frame, per-token or per-segment vectors.
    pub tokens: Mat,
    /// `1 x embed_dim` pooled vector.
    pub global: Mat,
    /// Valid positions of `tokens`.
    pub valid: Vec<bool>,
}

/// [`ModalityFeature`] inside a computation graph.
#[derive(Debug, Clone)]
pub struct FeatureVars {
    pub modality: Modality,
    pub tokens: Var,
    pub global: Var,
    pub valid: Vec<bool>,
}

impl FeatureVars {
    pub fn value(&self, g: &Graph) -> ModalityFeature {
        ModalityFeature {
            modality: self.modality,
            tokens: g.value(self.tokens).clone(),
            global: g.value(self.global).clone(),
            valid: self.valid.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub conv: ParamId,
    pub class_embedding: ParamId,
    pub positional: ParamId,
    pub ln_pre: LayerNorm,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
    pub proj: ParamId,
    grid: usize,
    patch_dim: usize,
}

impl ImageEncoder {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, c: &BackboneConfig) -> Result<Self> {
        let w = c.width;
        let n = c.grid() * c.grid();
        let scale = (w as f64).powf(-0.5);
        Ok(Self {
            conv: b.normal("conv1.weight", c.patch_dim(), w, (c.patch_dim() as f64).powf(-0.5))?,
            class_embedding: b.normal("class_embedding", 1, w, scale)?,
            positional: b.normal("positional_embedding", n + 1, w, scale)?,
            ln_pre: LayerNorm::new(b, "ln_pre", w)?,
            blocks: (0..c.layers)
                .map(|i| Block::new(b, &format!("blocks.{i}"), w, c.heads, c.layers))
                .collect::<Result<_>>()?,
            ln_post: LayerNorm::new(b, "ln_post", w)?,
            proj: b.normal("proj", w, c.embed_dim, scale)?,
            grid: c.grid(),
            patch_dim: c.patch_dim(),
        })
    }

    /// Class-token embedding (`1 x embed_dim`) of one image given as a patch
    /// matrix.
    pub fn forward_image(&self, g: &mut Graph, patches: Arc<Mat>) -> Result<Var> {
        let n = self.grid * self.grid;
        if patches.shape() != (n, self.patch_dim) {
            return Err(Error::shape(format!(
                "patch matrix {:?} does not match the {n} x {} patch grid",
                patches.shape(),
                self.patch_dim
            )));
        }
        let x = g.input_shared(patches);
        let conv = g.param(self.conv);
        let x = g.matmul(x, conv);
        let cls = g.param(self.class_embedding);
        let x = g.concat_rows(&[cls, x]);
        let pos = g.param(self.positional);
        let x = g.add(x, pos);
        let mut x = self.ln_pre.forward(g, x);
        for b in &self.blocks {
            x = b.forward(g, x, false)?;
        }
        let cls = g.select_rows(x, &[0]);
        let cls = self.ln_post.forward(g, cls);
        let proj = g.param(self.proj);
        Ok(g.matmul(cls, proj))
    }

    /// Encodes a sequence of images; the global vector is the mean of the
    /// per-image class-token outputs.
    pub fn forward_sequence(&self, g: &mut Graph, modality: Modality, images: &[Arc<Mat>]) -> Result<FeatureVars> {
        if images.is_empty() {
            return Err(match modality {
                Modality::Audio => Error::EmptyAudio,
                _ => Error::EmptyVideo,
            });
        }
        let rows = images
            .iter()
            .map(|p| self.forward_image(g, p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let tokens = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
        let global = g.mean_rows(tokens);
        Ok(FeatureVars {
            modality,
            tokens,
            global,
            valid: vec![true; images.len()],
        })
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub token_embedding: ParamId,
    pub positional: ParamId,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub proj: ParamId,
    pub max_len: usize,
    pub width: usize,
}

impl TextEncoder {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, c: &BackboneConfig) -> Result<Self> {
        let w = c.text_width;
        Ok(Self {
            token_embedding: b.normal("token_embedding", Tokenizer::shared().vocab_size(), w, 0.02)?,
            positional: b.normal("positional_embedding", c.max_len, w, 0.01)?,
            blocks: (0..c.text_layers)
                .map(|i| Block::new(b, &format!("blocks.{i}"), w, c.text_heads, c.text_layers))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::new(b, "ln_final", w)?,
            proj: b.normal("text_projection", w, c.embed_dim, (w as f64).powf(-0.5))?,
            max_len: c.max_len,
            width: w,
        })
    }

    /// Looks up token embeddings (`n x text_width`).
    pub fn embed_ids(&self, g: &mut Graph, ids: &[u32]) -> Var {
        let table = g.param(self.token_embedding);
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        g.select_rows(table, &idx)
    }

    /// Runs the causal transformer over already-embedded positions and
    /// projects every position (`n x embed_dim`).
    pub fn forward_embedded(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x).0;
        if n > self.max_len {
            return Err(Error::shape(format!("text length {n} exceeds maximum {}", self.max_len)));
        }
        let pos = g.param(self.positional);
        let pos = if n == self.max_len {
            pos
        } else {
            g.select_rows(pos, &(0..n).collect::<Vec<_>>())
        };
        let mut x = g.add(x, pos);
        for b in &self.blocks {
            x = b.forward(g, x, true)?;
        }
        let x = self.ln_final.forward(g, x);
        let proj = g.param(self.proj);
        Ok(g.matmul(x, proj))
    }

    /// Encodes `[SOS] ... [EOS] [PAD]*` ids; the global vector is the output
    /// at the first `[EOS]`.
    pub fn forward_ids(&self, g: &mut Graph, ids: &[u32]) -> Result<FeatureVars> {
        let eos = ids
            .iter()
            .position(|&t| t == crate::ingest::text::EOS)
            .ok_or(Error::MissingEos)?;
        let vocab = Tokenizer::shared().vocab_size();
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::shape(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let x = self.embed_ids(g, ids);
        let tokens = self.forward_embedded(g, x)?;
        let global = g.select_rows(tokens, &[eos]);
        Ok(FeatureVars {
            modality: Modality::Language,
            tokens,
            global,
            valid: (0..ids.len()).map(|i| i <= eos).collect(),
        })
    }
}

/// Normalization applied when converting images to patch matrices.
#[derive(Debug, Clone, Copy)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn frames(c: &PreprocessConfig) -> Self {
        Self {
            mean: c.image_mean,
            std: c.image_std,
        }
    }

    pub fn spectrograms(c: &PreprocessConfig) -> Self {
        Self {
            mean: [c.spec_mean; 3],
            std: [c.spec_std; 3],
        }
    }
}

pub fn patchify(images: &[Image], patch: usize, norm: Normalization) -> Result<Vec<Arc<Mat>>> {
    images
        .iter()
        .map(|im| im.patch_matrix(patch, norm.mean, norm.std).map(Arc::new))
        .collect()
}

/// The three modality encoders.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub vision: ImageEncoder,
    pub language: TextEncoder,
    pub audio: ImageEncoder,
}

impl Encoders {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, c: &BackboneConfig) -> Result<Self> {
        c.validate()?;
        let vision = ImageEncoder::new(&mut Builder::new(store, rng, ParamGroup::Vision, "vision"), c)?;
        let language = TextEncoder::new(&mut Builder::new(store, rng, ParamGroup::Language, "language"), c)?;
        let audio = ImageEncoder::new(&mut Builder::new(store, rng, ParamGroup::Audio, "audio"), c)?;
        Ok(Self {
            vision,
            language,
            audio,
        })
    }
}

/// Standalone encoders with their own parameter store.
pub struct EncoderSet {
    pub config: BackboneConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
}

impl EncoderSet {
    pub fn init_random(config: &BackboneConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoders = Encoders::new(&mut store, &mut rng, config)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoders,
        })
    }

    pub fn digest(&self) -> String {
        self.store.digest()
    }

    pub fn encode_vision(&self, frames: &[Arc<Mat>]) -> Result<ModalityFeature> {
        encode_vision(&self.store, &self.encoders.vision, frames)
    }

    pub fn encode_audio(&self, segments: &[Arc<Mat>]) -> Result<ModalityFeature> {
        encode_audio(&self.store, &self.encoders.audio, segments)
    }

    pub fn encode_language(&self, ids: &[u32]) -> Result<ModalityFeature> {
        encode_language(&self.store, &self.encoders.language, ids)
    }
}

pub fn encode_vision(store: &ParamStore, enc: &ImageEncoder, frames: &[Arc<Mat>]) -> Result<ModalityFeature> {
    let mut g = Graph::new(store);
    let f = enc.forward_sequence(&mut g, Modality::Vision, frames)?;
    Ok(f.value(&g))
}

pub fn encode_audio(store: &ParamStore, enc: &ImageEncoder, segments: &[Arc<Mat>]) -> Result<ModalityFeature> {
    let mut g = Graph::new(store);
    let f = enc.forward_sequence(&mut g, Modality::Audio, segments)?;
    Ok(f.value(&g))
}

pub fn encode_language(store: &ParamStore, enc: &TextEncoder, ids: &[u32]) -> Result<ModalityFeature> {
    let mut g = Graph::new(store);
    let f = enc.forward_ids(&mut g, ids)?;
    Ok(f.value(&g))
}
