//! Deterministic miniature corpus with the same schema as the real data.
//!
//! Every label is recoverable from every modality: transcripts carry cue
//! words, frames carry a colored tile per present emotion on a background
//! whose brightness follows sentiment, and audio carries one tone per present
//! emotion plus a sentiment tone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Image, Manifest, ManifestRecord, RawSample, Split, Waveform};
use crate::error::{Error, Result};

const EMOTION_CUES: [[&str; 3]; 6] = [
    ["joyful", "glad", "cheerful"],
    ["sorrow", "unhappy", "gloomy"],
    ["furious", "mad", "annoyed"],
    ["astonished", "shocked", "amazed"],
    ["gross", "revolting", "disgusted"],
    ["terrified", "anxious", "scared"],
];
const POSITIVE_CUES: [&str; 4] = ["great", "wonderful", "amazing", "good"];
const NEGATIVE_CUES: [&str; 4] = ["terrible", "awful", "horrible", "bad"];
const FILLER: [&str; 12] = [
    "i", "feel", "really", "this", "movie", "honestly", "today", "the", "story", "was", "quite",
    "about",
];
const EMOTION_COLORS: [[f32; 3]; 6] = [
    [1.0, 0.9, 0.1],
    [0.1, 0.2, 0.9],
    [0.9, 0.1, 0.1],
    [1.0, 0.5, 0.0],
    [0.2, 0.7, 0.1],
    [0.6, 0.1, 0.7],
];
const EMOTION_TONES: [f32; 6] = [250.0, 500.0, 900.0, 1500.0, 2400.0, 3600.0];
const POSITIVE_TONE: f32 = 5200.0;
const NEGATIVE_TONE: f32 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub seed: u64,
    pub frame_size: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub sample_rate: u32,
    /// Train/val/test fractions; the remainder after train and val is test.
    pub split_fractions: [f64; 2],
    /// Fraction of samples whose sentiment score is exactly zero.
    pub zero_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 48,
            seed: 0,
            frame_size: 32,
            min_frames: 6,
            max_frames: 30,
            min_duration: 0.8,
            max_duration: 4.5,
            sample_rate: 16_000,
            split_fractions: [0.7, 0.15],
            zero_fraction: 0.0,
        }
    }
}

impl SyntheticSpec {
    /// All samples in the train split.
    pub fn train_only(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            split_fractions: [1.0, 0.0],
            ..Self::default()
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Vec<RawSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = (spec.samples as f64 * spec.split_fractions[0]).round() as usize;
    let n_val = (spec.samples as f64 * spec.split_fractions[1]).round() as usize;
    (0..spec.samples)
        .map(|i| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            one_sample(&mut rng, spec, i, split)
        })
        .collect()
}

fn one_sample(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, index: usize, split: Split) -> RawSample {
    let k = rng.random_range(1..=3usize);
    let mut classes: Vec<usize> = (0..6).collect();
    classes.shuffle(rng);
    classes.truncate(k);
    let mut intensities = [0.0f64; 6];
    for &c in &classes {
        intensities[c] = (rng.random_range(0.33..3.0f64) * 100.0).round() / 100.0;
    }

    let zero = rng.random_bool(spec.zero_fraction.clamp(0.0, 1.0));
    let positive = rng.random_bool(0.5);
    let score = if zero {
        0.0
    } else {
        let mag = (rng.random_range(0.2..3.0f64) * 10.0).round() / 10.0;
        if positive {
            mag
        } else {
            -mag
        }
    };

    let mut words: Vec<&str> = (0..rng.random_range(3..7))
        .map(|_| FILLER[rng.random_range(0..FILLER.len())])
        .collect();
    for &c in &classes {
        words.push(EMOTION_CUES[c][rng.random_range(0..3)]);
    }
    if score > 0.0 {
        words.push(POSITIVE_CUES[rng.random_range(0..4)]);
    } else if score < 0.0 {
        words.push(NEGATIVE_CUES[rng.random_range(0..4)]);
    }
    words.shuffle(rng);
    let transcript = words.join(" ");

    let n_frames = rng.random_range(spec.min_frames..=spec.max_frames.max(spec.min_frames));
    let background = if score > 0.0 {
        0.7
    } else if score < 0.0 {
        0.3
    } else {
        0.5
    };
    let video_frames = (0..n_frames)
        .map(|_| draw_frame(rng, spec.frame_size, background, &classes))
        .collect();

    let duration = (rng.random_range(spec.min_duration..spec.max_duration) * 100.0).round() / 100.0;
    let audio = synth_audio(rng, spec.sample_rate, duration, &classes, score);

    RawSample {
        sample_id: format!("syn{:05}", index),
        split,
        video_frames,
        audio,
        transcript,
        sentiment_score: score,
        emotion_intensities: intensities,
        duration,
    }
}

fn draw_frame(rng: &mut ChaCha8Rng, size: usize, background: f32, classes: &[usize]) -> Image {
    let mut img = Image::filled(size, size, background);
    let cell_h = size / 2;
    let cell_w = size / 3;
    for &c in classes {
        let (cy, cx) = (c / 3, c % 3);
        let y0 = cy * cell_h + cell_h / 4;
        let x0 = cx * cell_w + cell_w / 4;
        for y in y0..(y0 + cell_h / 2).min(size) {
            for x in x0..(x0 + cell_w / 2).min(size) {
                for ch in 0..3 {
                    img.set(y, x, ch, EMOTION_COLORS[c][ch]);
                }
            }
        }
    }
    let noise: Vec<f32> = (0..size * size * 3)
        .map(|_| rng.random_range(-0.04..0.04f32))
        .collect();
    let data: Vec<f32> = img
        .data()
        .iter()
        .zip(noise)
        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
        .collect();
    Image::new(size, size, data).expect("frame shape")
}

fn synth_audio(rng: &mut ChaCha8Rng, sr: u32, duration: f64, classes: &[usize], score: f64) -> Waveform {
    let n = (duration * f64::from(sr)).round().max(1.0) as usize;
    let mut tones: Vec<f32> = classes.iter().map(|&c| EMOTION_TONES[c]).collect();
    if score > 0.0 {
        tones.push(POSITIVE_TONE);
    } else if score < 0.0 {
        tones.push(NEGATIVE_TONE);
    }
    let phases: Vec<f32> = tones
        .iter()
        .map(|_| rng.random_range(0.0..std::f32::consts::TAU))
        .collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let s: f32 = tones
                .iter()
                .zip(&phases)
                .map(|(f, p)| 0.15 * (std::f32::consts::TAU * f * t + p).sin())
                .sum();
            s + rng.random_range(-0.01..0.01f32)
        })
        .collect();
    Waveform::new(samples, sr)
}

/// Writes media (PNG frames, WAV, transcript) and `manifest.jsonl` under
/// `dir`. Returns the manifest with paths relative to `dir`.
pub fn write_corpus(samples: &[RawSample], dir: &Path) -> Result<Manifest> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = PathBuf::from("media").join(&s.sample_id);
        let frames_rel = rel.join("frames");
        let frames_dir = dir.join(&frames_rel);
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (i, f) in s.video_frames.iter().enumerate() {
            f.save_png(&frames_dir.join(format!("{i:05}.png")))?;
        }
        let audio_rel = rel.join("audio.wav");
        s.audio.save_wav(&dir.join(&audio_rel))?;
        let text_rel = rel.join("transcript.txt");
        let tp = dir.join(&text_rel);
        fs::write(&tp, &s.transcript).map_err(|e| Error::io(&tp, e))?;
        records.push(ManifestRecord {
            sample_id: s.sample_id.clone(),
            split: s.split,
            video_dir: frames_rel,
            audio_path: audio_rel,
            transcript_path: text_rel,
            sentiment_score: s.sentiment_score,
            emotion_intensities: s.emotion_intensities,
            duration: s.duration,
        });
    }
    let manifest = Manifest::new(records)?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let spec = SyntheticSpec {
            samples: 10,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec);
        let b = generate(&spec);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.transcript, y.transcript);
            assert_eq!(x.audio, y.audio);
            x.validate().unwrap();
            let present = x.emotion_intensities.iter().filter(|&&v| v > 0.0).count();
            assert!((1..=3).contains(&present));
            assert!((x.audio.duration() - x.duration).abs() < 1e-3);
        }
        let splits: Vec<_> = a.iter().map(|s| s.split).collect();
        assert_eq!(splits.iter().filter(|&&s| s == Split::Train).count(), 7);
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let spec = SyntheticSpec {
            samples: 3,
            ..SyntheticSpec::default()
        };
        let samples = generate(&spec);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&samples, dir.path()).unwrap();
        let loaded = RawSample::load(&manifest.records()[1], dir.path()).unwrap();
        assert_eq!(loaded.transcript, samples[1].transcript);
        assert_eq!(loaded.video_frames.len(), samples[1].video_frames.len());
        assert_eq!(loaded.audio.samples.len(), samples[1].audio.samples.len());
    }
}
