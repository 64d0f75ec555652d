//! Frozen label encoder with learnable prompt contexts.
//!
//! Labels and the task query are encoded as
//! `[SOS] ctx_1 .. ctx_n <text tokens> [EOS]` by a text encoder whose
//! weights never train, pooled at `[EOS]`. One context is shared by all
//! labels of a task; the query has its own.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoders::{BackboneConfig, TextEncoder};
use crate::error::{Error, Result};
use crate::ingest::text::{EOS, SOS};
use crate::ingest::{Task, Tokenizer, EMOTIONS};
use crate::nn::Builder;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

pub const DEFAULT_PROMPT_LEN: usize = 8;

/// Query words compared for the task query; the empty string uses the
/// prompt context alone.
pub const QUERY_WORDS: [&str; 7] = ["Emotion", "Sentiment", "Feeling", "Impression", "Mood", "Sensation", ""];

const EMOTION_WORDS: &str = include_str!("../fixtures/labels/emotion_words.txt");
const EMOTION_SENTENCES: &str = include_str!("../fixtures/labels/emotion_sentences.txt");
const SENTIMENT_WORDS: &str = include_str!("../fixtures/labels/sentiment_words.txt");
const SENTIMENT_PHRASES: &str = include_str!("../fixtures/labels/sentiment_phrases.txt");

pub fn class_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Emotion => &EMOTIONS,
        Task::Sentiment => &["positive", "negative"],
    }
}

pub fn default_query_word(task: Task) -> &'static str {
    match task {
        Task::Emotion => "Emotion",
        Task::Sentiment => "Sentiment",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Words,
    /// Sentences for emotion, phrases for sentiment.
    Descriptions,
}

/// Ordered label texts; prediction index `i` refers to `labels[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub task: Task,
    pub labels: Vec<String>,
}

impl LabelSet {
    pub fn builtin(task: Task, kind: LabelKind) -> Self {
        let text = match (task, kind) {
            (Task::Emotion, LabelKind::Words) => EMOTION_WORDS,
            (Task::Emotion, LabelKind::Descriptions) => EMOTION_SENTENCES,
            (Task::Sentiment, LabelKind::Words) => SENTIMENT_WORDS,
            (Task::Sentiment, LabelKind::Descriptions) => SENTIMENT_PHRASES,
        };
        Self::parse(task, text).expect("bundled label fixture")
    }

    /// Parses a fixture: either one label per line in class order, or one
    /// `class: description` line per class in any order.
    pub fn parse(task: Task, text: &str) -> Result<Self> {
        let names = class_names(task);
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let keyed: Vec<Option<(usize, &str)>> = lines
            .iter()
            .map(|l| {
                let (k, v) = l.split_once(':')?;
                let idx = names.iter().position(|n| n.eq_ignore_ascii_case(k.trim()))?;
                Some((idx, v.trim()))
            })
            .collect();
        let labels = if !lines.is_empty() && keyed.iter().all(Option::is_some) {
            let mut slots: Vec<Option<String>> = vec![None; names.len()];
            for (idx, v) in keyed.into_iter().flatten() {
                if slots[idx].replace(v.to_string()).is_some() {
                    return Err(Error::Config(format!("label `{}` described twice", names[idx])));
                }
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| Error::Config(format!("no description for label `{}`", names[i]))))
                .collect::<Result<Vec<_>>>()?
        } else {
            lines.iter().map(|s| s.to_string()).collect()
        };
        if labels.len() != names.len() {
            return Err(Error::Config(format!(
                "{} task needs {} labels, got {}",
                task.as_str(),
                names.len(),
                labels.len()
            )));
        }
        Ok(Self { task, labels })
    }

    pub fn load(task: Task, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(task, &text)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptOwner {
    Label,
    Query,
}

/// `n x text_width` learnable context vectors.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub owner: PromptOwner,
    pub id: ParamId,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct LabelEncoder {
    pub encoder: TextEncoder,
    pub label_prompt: PromptContext,
    pub query_prompt: PromptContext,
}

impl LabelEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, c: &BackboneConfig, prompt_len: usize) -> Result<Self> {
        if prompt_len + 2 > c.max_len {
            return Err(Error::Config(format!(
                "prompt length {prompt_len} leaves no room in a {}-token sequence",
                c.max_len
            )));
        }
        let encoder = TextEncoder::new(&mut Builder::new(store, rng, ParamGroup::LabelEncoder, "label_encoder"), c)?;
        let w = c.text_width;
        let label = Builder::new(store, rng, ParamGroup::LabelPrompt, "prompt.label").normal("ctx", prompt_len, w, 0.02)?;
        let query = Builder::new(store, rng, ParamGroup::QueryPrompt, "prompt.query").normal("ctx", prompt_len, w, 0.02)?;
        Ok(Self {
            encoder,
            label_prompt: PromptContext {
                owner: PromptOwner::Label,
                id: label,
                len: prompt_len,
            },
            query_prompt: PromptContext {
                owner: PromptOwner::Query,
                id: query,
                len: prompt_len,
            },
        })
    }

    /// Text tokens that fit after `[SOS]` and the context, keeping room for
    /// `[EOS]`.
    fn body(&self, prompt: &PromptContext, text: &str) -> Vec<u32> {
        let mut body = Tokenizer::shared().encode(text);
        body.truncate(self.encoder.max_len - prompt.len - 2);
        body
    }

    /// Length of the prompted sequence for `text`.
    pub fn sequence_len(&self, prompt: &PromptContext, text: &str) -> usize {
        self.body(prompt, text).len() + prompt.len + 2
    }

    /// `1 x embed_dim` [EOS]-pooled embedding of a prompted text.
    pub fn encode_prompted(&self, g: &mut Graph, prompt: &PromptContext, body: &[u32]) -> Result<Var> {
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(SOS);
        ids.extend_from_slice(body);
        ids.push(EOS);
        let emb = self.encoder.embed_ids(g, &ids);
        let sos = g.select_rows(emb, &[0]);
        let rest = g.select_rows(emb, &(1..ids.len()).collect::<Vec<_>>());
        let ctx = g.param(prompt.id);
        let x = g.concat_rows(&[sos, ctx, rest]);
        let out = self.encoder.forward_embedded(g, x)?;
        let n = g.shape(out).0;
        Ok(g.select_rows(out, &[n - 1]))
    }

    /// `C x embed_dim` label embeddings, rows in label order.
    pub fn embed_labels_graph(&self, g: &mut Graph, labels: &LabelSet) -> Result<Var> {
        let rows = labels
            .labels
            .iter()
            .map(|l| {
                let body = self.body(&self.label_prompt, l);
                if body.is_empty() {
                    return Err(Error::EmptyLabel(l.clone()));
                }
                self.encode_prompted(g, &self.label_prompt, &body)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat_rows(&rows))
    }

    /// `1 x embed_dim` query embedding; an empty word uses the context alone.
    pub fn build_query_graph(&self, g: &mut Graph, word: &str) -> Result<Var> {
        let body = self.body(&self.query_prompt, word);
        self.encode_prompted(g, &self.query_prompt, &body)
    }
}

pub fn embed_labels(store: &ParamStore, le: &LabelEncoder, labels: &LabelSet) -> Result<Mat> {
    let mut g = Graph::new(store);
    let v = le.embed_labels_graph(&mut g, labels)?;
    Ok(g.value(v).clone())
}

pub fn build_query(store: &ParamStore, le: &LabelEncoder, word: &str) -> Result<Mat> {
    let mut g = Graph::new(store);
    let v = le.build_query_graph(&mut g, word)?;
    Ok(g.value(v).clone())
}

/// Digest over the frozen label encoder weights only.
pub fn label_encoder_digest(store: &ParamStore) -> String {
    store.group_digest(ParamGroup::LabelEncoder)
}

pub fn assert_frozen(before_digest: &str, after_digest: &str) -> bool {
    before_digest == after_digest
}
