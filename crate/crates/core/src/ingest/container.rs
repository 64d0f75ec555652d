//! Binary container for one preprocessed sample (`.mers`).
//!
//! All integers and floats little-endian:
//!
//! | field            | type                              |
//! |------------------|-----------------------------------|
//! | magic            | `b"MERCLIPS"`                     |
//! | version          | `u32` (= 1)                       |
//! | sample_id        | `u32` byte length + UTF-8         |
//! | split            | `u8` (0 train, 1 val, 2 test)     |
//! | image_size S     | `u32`                             |
//! | T_V, T_A, T_L    | `u32` x 3                         |
//! | frames           | `f32` x T_V*S*S*3, HWC, `[0, 1]`  |
//! | spectrograms     | `f32` x T_A*S*S*3, HWC            |
//! | token ids        | `i32` x T_L, `[PAD]`-padded       |
//! | emotion targets  | `u8` x 6                          |
//! | sentiment class  | `i8` (1 pos, 0 neg, -1 excluded)  |
//! | sentiment score  | `f32`                             |

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Image, PreparedSample, Sentiment, Split, TokenSeq};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MERCLIPS";
const VERSION: u32 = 1;

pub fn write_sample(path: &Path, sample: &PreparedSample, max_text_len: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, sample, max_text_len).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<PreparedSample> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    decode(&mut r).map_err(|e| match e {
        DecodeError::Io(e) => Error::io(path, e),
        DecodeError::Format(reason) => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
    })
}

fn encode(w: &mut impl Write, s: &PreparedSample, max_text_len: usize) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(s.sample_id.len() as u32)?;
    w.write_all(s.sample_id.as_bytes())?;
    w.write_u8(match s.split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    })?;
    let size = s.frames.first().or(s.spectrograms.first()).map_or(0, Image::height);
    w.write_u32::<LE>(size as u32)?;
    w.write_u32::<LE>(s.frames.len() as u32)?;
    w.write_u32::<LE>(s.spectrograms.len() as u32)?;
    let ids = s.tokens.padded(max_text_len);
    w.write_u32::<LE>(ids.len() as u32)?;
    for img in s.frames.iter().chain(&s.spectrograms) {
        for &v in img.data() {
            w.write_f32::<LE>(v)?;
        }
    }
    for &t in &ids {
        w.write_i32::<LE>(t as i32)?;
    }
    w.write_all(&s.emotion)?;
    w.write_i8(s.sentiment.to_code())?;
    w.write_f32::<LE>(s.sentiment_score)
}

enum DecodeError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        DecodeError::Io(e)
    }
}

fn decode(r: &mut impl Read) -> std::result::Result<PreparedSample, DecodeError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DecodeError::Format("bad magic".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(DecodeError::Format(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LE>()? as usize;
    let mut id = vec![0u8; n];
    r.read_exact(&mut id)?;
    let sample_id = String::from_utf8(id).map_err(|_| DecodeError::Format("sample id utf-8".into()))?;
    let split = match r.read_u8()? {
        0 => Split::Train,
        1 => Split::Val,
        2 => Split::Test,
        s => return Err(DecodeError::Format(format!("bad split code {s}"))),
    };
    let size = r.read_u32::<LE>()? as usize;
    let t_v = r.read_u32::<LE>()? as usize;
    let t_a = r.read_u32::<LE>()? as usize;
    let t_l = r.read_u32::<LE>()? as usize;
    let mut read_images = |count: usize| -> std::result::Result<Vec<Image>, DecodeError> {
        (0..count)
            .map(|_| {
                let mut data = vec![0f32; size * size * 3];
                r.read_f32_into::<LE>(&mut data)?;
                Image::new(size, size, data).map_err(|e| DecodeError::Format(e.to_string()))
            })
            .collect()
    };
    let frames = read_images(t_v)?;
    let spectrograms = read_images(t_a)?;
    let mut ids = vec![0i32; t_l];
    r.read_i32_into::<LE>(&mut ids)?;
    let ids: Vec<u32> = ids.into_iter().map(|t| t as u32).collect();
    let tokens = TokenSeq::from_padded(&ids).map_err(|e| DecodeError::Format(e.to_string()))?;
    let mut emotion = [0u8; 6];
    r.read_exact(&mut emotion)?;
    let sentiment = Sentiment::from_code(r.read_i8()?);
    let sentiment_score = r.read_f32::<LE>()?;
    Ok(PreparedSample {
        sample_id,
        split,
        frames,
        spectrograms,
        tokens,
        emotion,
        sentiment,
        sentiment_score,
    })
}
