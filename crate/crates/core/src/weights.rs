//! Named-parameter archive (`.mcw`).
//!
//! Little-endian layout:
//!
//! | field        | type                                        |
//! |--------------|---------------------------------------------|
//! | magic        | `b"MERCLIPW"`                               |
//! | version      | `u32` (= 1)                                 |
//! | digest       | `u32` length + ASCII hex (see [`crate::params`]) |
//! | count        | `u32`                                       |
//! | manifest     | per entry: `u32` name length, UTF-8 name, `u64` rows, `u64` cols |
//! | data         | per entry in manifest order: `f64` x rows*cols |
//!
//! The digest covers the entries exactly as stored, so it equals
//! [`ParamStore::digest`] of a store holding the same parameters.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"MERCLIPW";
const VERSION: u32 = 1;

/// Parameters read from an archive, in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub entries: Vec<(String, Mat)>,
}

impl Archive {
    /// Entries of `store` whose names start with `prefix`, with the prefix
    /// stripped.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Self {
        Self {
            entries: store
                .iter()
                .filter_map(|(_, e)| {
                    e.name
                        .strip_prefix(prefix)
                        .map(|n| (n.to_string(), e.value.clone()))
                })
                .collect(),
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in &self.entries {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        let digest = self.digest();
        w.write_u32::<LE>(digest.len() as u32)?;
        w.write_all(digest.as_bytes())?;
        w.write_u32::<LE>(self.entries.len() as u32)?;
        for (name, m) in &self.entries {
            w.write_u32::<LE>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u64::<LE>(m.rows() as u64)?;
            w.write_u64::<LE>(m.cols() as u64)?;
        }
        for (_, m) in &self.entries {
            for &v in m.data() {
                w.write_f64::<LE>(v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let io = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                fmt("truncated archive".into())
            } else {
                Error::io(path, e)
            }
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let dl = r.read_u32::<LE>().map_err(io)? as usize;
        let mut digest = vec![0u8; dl];
        r.read_exact(&mut digest).map_err(io)?;
        let digest = String::from_utf8(digest).map_err(|_| fmt("digest is not ASCII".into()))?;
        let count = r.read_u32::<LE>().map_err(io)? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.read_u32::<LE>().map_err(io)? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| fmt("parameter name is not UTF-8".into()))?;
            let rows = r.read_u64::<LE>().map_err(io)? as usize;
            let cols = r.read_u64::<LE>().map_err(io)? as usize;
            shapes.push((name, rows, cols));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, rows, cols) in shapes {
            let mut data = vec![0f64; rows * cols];
            r.read_f64_into::<LE>(&mut data).map_err(io)?;
            entries.push((name, Mat::from_vec(rows, cols, data)));
        }
        let archive = Self { entries };
        if archive.digest() != digest {
            return Err(fmt("digest does not match contents".into()));
        }
        Ok(archive)
    }

    /// Copies entries into the parameters of `store` named `prefix + name`.
    /// The archive must list exactly those parameters, in order, with equal
    /// shapes; otherwise the first mismatched name is reported.
    pub fn apply(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let expected: Vec<_> = store
            .iter()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(id, e)| (id, e.name[prefix.len()..].to_string(), e.value.shape()))
            .collect();
        for (i, (name, m)) in self.entries.iter().enumerate() {
            let Some((_, want, shape)) = expected.get(i) else {
                return Err(Error::SchemaMismatch {
                    name: format!("{prefix}{name}"),
                    detail: "not present in model".into(),
                });
            };
            if want != name {
                return Err(Error::SchemaMismatch {
                    name: format!("{prefix}{want}"),
                    detail: format!("archive has `{name}` at position {i}"),
                });
            }
            if *shape != m.shape() {
                return Err(Error::SchemaMismatch {
                    name: format!("{prefix}{want}"),
                    detail: format!("expected shape {shape:?}, archive has {:?}", m.shape()),
                });
            }
        }
        if let Some((_, missing, _)) = expected.get(self.entries.len()) {
            return Err(Error::SchemaMismatch {
                name: format!("{prefix}{missing}"),
                detail: "missing from archive".into(),
            });
        }
        for ((id, _, _), (_, m)) in expected.iter().zip(&self.entries) {
            *store.value_mut(*id) = m.clone();
        }
        Ok(())
    }
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    Archive::from_store(store, "").save(path)
}

/// Loads a full-store archive written by [`save_weights`].
pub fn load_weights(store: &mut ParamStore, path: &Path) -> Result<()> {
    Archive::load(path)?.apply(store, "")
}
