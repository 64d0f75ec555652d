//! Named parameter inventory, gradient buffers and parameter digests.
//!
//! Every learnable or frozen tensor of the model lives in one [`ParamStore`]
//! and carries exactly one [`ParamGroup`] tag. Freezing is a property of the
//! group, so the trainable/frozen partition always covers the full inventory.
//!
//! Digest algorithm (SHA-256, hex encoded): for each parameter in insertion
//! order, hash the UTF-8 name, a zero byte, rows and cols as little-endian
//! `u64`, then the values as little-endian `f64`. Order-stable and
//! shape-tagged, so reshaping or renaming changes the digest.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Vision,
    Language,
    Audio,
    /// Frozen label encoder weights.
    LabelEncoder,
    LabelPrompt,
    QueryPrompt,
    /// Encoder-width to decoder-width adapters.
    Projection,
    Cmd,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::Vision,
        ParamGroup::Language,
        ParamGroup::Audio,
        ParamGroup::LabelEncoder,
        ParamGroup::LabelPrompt,
        ParamGroup::QueryPrompt,
        ParamGroup::Projection,
        ParamGroup::Cmd,
        ParamGroup::Head,
    ];

    pub fn is_frozen(self) -> bool {
        matches!(self, ParamGroup::LabelEncoder)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Vision => "vision",
            ParamGroup::Language => "language",
            ParamGroup::Audio => "audio",
            ParamGroup::LabelEncoder => "label_encoder",
            ParamGroup::LabelPrompt => "label_prompt",
            ParamGroup::QueryPrompt => "query_prompt",
            ParamGroup::Projection => "projection",
            ParamGroup::Cmd => "cmd",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Mat,
}

impl ParamEntry {
    pub fn trainable(&self) -> bool {
        !self.group.is_frozen()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Mat) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, group, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, e)| e.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    /// Total scalar count, optionally restricted to one group.
    pub fn scalar_count(&self, group: Option<ParamGroup>) -> usize {
        self.entries
            .iter()
            .filter(|e| group.is_none_or(|g| e.group == g))
            .map(|e| e.value.len())
            .sum()
    }

    pub fn digest_where(&self, pred: impl Fn(&ParamEntry) -> bool) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| pred(e)) {
            h.update(e.name.as_bytes());
            h.update([0u8]);
            h.update((e.value.rows() as u64).to_le_bytes());
            h.update((e.value.cols() as u64).to_le_bytes());
            for v in e.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn digest(&self) -> String {
        self.digest_where(|_| true)
    }

    pub fn group_digest(&self, group: ParamGroup) -> String {
        self.digest_where(|e| e.group == group)
    }

    /// Copies values from `other`, which must have identical names and shapes
    /// in the same order.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        check_schema(self, other.iter().map(|(_, e)| (e.name.as_str(), e.value.shape())))?;
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Verifies that `incoming` lists exactly the store's parameters, in order,
/// with matching shapes. Reports the first mismatched name.
pub(crate) fn check_schema<'a>(
    store: &ParamStore,
    incoming: impl Iterator<Item = (&'a str, (usize, usize))>,
) -> Result<()> {
    let mut seen = 0usize;
    for (i, (name, shape)) in incoming.enumerate() {
        let Some(entry) = store.entries.get(i) else {
            return Err(Error::SchemaMismatch {
                name: name.to_string(),
                detail: "not present in model".into(),
            });
        };
        if entry.name != name {
            return Err(Error::SchemaMismatch {
                name: entry.name.clone(),
                detail: format!("expected `{}` at position {i}, found `{name}`", entry.name),
            });
        }
        if entry.value.shape() != shape {
            return Err(Error::SchemaMismatch {
                name: name.to_string(),
                detail: format!("expected shape {:?}, found {:?}", entry.value.shape(), shape),
            });
        }
        seen += 1;
    }
    if let Some(missing) = store.entries.get(seen) {
        return Err(Error::SchemaMismatch {
            name: missing.name.clone(),
            detail: "missing from source".into(),
        });
    }
    Ok(())
}

/// Gradient buffers indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn accumulate_owned(&mut self, id: ParamId, g: Mat) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulator for `id`, zero-initialized with the given shape on first
    /// use.
    pub fn slot_mut(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Mat {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        let slot = self.grads[id.0].get_or_insert_with(|| Mat::zeros(rows, cols));
        assert_eq!(slot.shape(), (rows, cols), "gradient slot shape");
        slot
    }

    pub fn merge(&mut self, other: Gradients) {
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate_owned(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient value for one scalar coordinate; absent gradients read as zero.
    pub fn coord(&self, id: ParamId, k: usize) -> f64 {
        self.get(id).map_or(0.0, |g| g.data()[k])
    }

    pub fn group_norm(&self, store: &ParamStore, group: ParamGroup) -> f64 {
        store
            .iter()
            .filter(|(_, e)| e.group == group)
            .filter_map(|(id, _)| self.get(id))
            .map(Mat::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Mat::all_finite)
    }
}

/// Seeded parameter initializer.
pub struct Init<'a, R: Rng> {
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Mat {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(self.rng)).collect();
        Mat::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_shape_tagged() {
        let mut a = ParamStore::new();
        a.add("w", ParamGroup::Cmd, Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        let mut b = ParamStore::new();
        b.add("w", ParamGroup::Cmd, Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", ParamGroup::Cmd, Mat::zeros(1, 1)).unwrap();
        assert!(matches!(
            s.add("w", ParamGroup::Head, Mat::zeros(1, 1)),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn schema_check_names_first_mismatch() {
        let mut s = ParamStore::new();
        s.add("a", ParamGroup::Cmd, Mat::zeros(1, 2)).unwrap();
        s.add("b", ParamGroup::Cmd, Mat::zeros(2, 2)).unwrap();
        let err = check_schema(&s, [("a", (1, 2)), ("b", (2, 3))].into_iter()).unwrap_err();
        match err {
            Error::SchemaMismatch { name, .. } => assert_eq!(name, "b"),
            e => panic!("unexpected {e}"),
        }
    }
}
