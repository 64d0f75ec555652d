//! Raw utterances to model-ready frames, spectrogram images, token sequences
//! and label targets.

pub mod audio;
pub mod container;
pub mod frames;
pub mod image;
pub mod manifest;
pub mod synthetic;
pub mod targets;
pub mod text;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::audio::{segment_audio, spectrogram_image, Spectrogrammer, Waveform};
pub use self::frames::{frame_indices, sample_frames};
pub use self::image::Image;
pub use self::manifest::{Manifest, ManifestRecord, Split};
pub use self::targets::{make_targets, Sentiment, Target, Task, EMOTIONS};
pub use self::text::{detokenize, tokenize_text, TokenSeq, Tokenizer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Frames sampled per video (T_V).
    pub frames: usize,
    pub segment_seconds: f64,
    /// Audio is resampled to this rate before segmentation.
    pub sample_rate: u32,
    pub mel_bins: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// Side of the square frame and spectrogram images.
    pub image_size: usize,
    /// Maximum token sequence length (T_L), including [SOS] and [EOS].
    pub max_text_len: usize,
    pub log_floor: f64,
    /// Map sentiment score 0 to negative instead of excluding it.
    pub zero_as_negative: bool,
    /// Per-channel normalization applied to video frames at model input.
    pub image_mean: [f32; 3],
    pub image_std: [f32; 3],
    /// Normalization applied to log-mel images at model input.
    pub spec_mean: f32,
    pub spec_std: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            frames: 12,
            segment_seconds: 2.0,
            sample_rate: 16_000,
            mel_bins: 224,
            window_ms: 64.0,
            hop_ms: 32.0,
            image_size: 224,
            max_text_len: 77,
            log_floor: 1e-10,
            zero_as_negative: false,
            image_mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            image_std: [0.268_629_54, 0.261_302_6, 0.275_777_1],
            spec_mean: -4.27,
            spec_std: 4.57,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.frames == 0 {
            return err("preprocess.frames must be at least 1");
        }
        if !(self.hop_ms > 0.0 && self.window_ms > self.hop_ms) {
            return err("preprocess requires window_ms > hop_ms > 0");
        }
        if self.mel_bins != self.image_size {
            return err("preprocess.mel_bins must equal the spectrogram height (image_size)");
        }
        if self.max_text_len < 2 {
            return err("preprocess.max_text_len must leave room for [SOS] and [EOS]");
        }
        if self.segment_seconds <= 0.0 {
            return err("preprocess.segment_seconds must be positive");
        }
        Ok(())
    }
}

/// One utterance: video frames, waveform, transcript and annotations.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub sample_id: String,
    pub split: Split,
    pub video_frames: Vec<Image>,
    pub audio: Waveform,
    pub transcript: String,
    pub sentiment_score: f64,
    pub emotion_intensities: [f64; 6],
    pub duration: f64,
}

impl RawSample {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidSample {
            id: self.sample_id.clone(),
            reason: reason.into(),
        };
        if !(-3.0..=3.0).contains(&self.sentiment_score) {
            return Err(bad("sentiment_score outside [-3, 3]"));
        }
        if self.emotion_intensities.iter().any(|&v| !(v >= 0.0)) {
            return Err(bad("negative emotion intensity"));
        }
        if !(self.duration > 0.0) {
            return Err(bad("duration must be positive"));
        }
        Ok(())
    }

    /// Loads media referenced by a manifest record; paths are resolved
    /// against `root`. Frames are the directory's PNG files in name order.
    pub fn load(record: &ManifestRecord, root: &Path) -> Result<Self> {
        let video_dir = root.join(&record.video_dir);
        let mut paths: Vec<_> = fs::read_dir(&video_dir)
            .map_err(|e| Error::io(&video_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        let video_frames = paths
            .iter()
            .map(|p| Image::load_png(p))
            .collect::<Result<Vec<_>>>()?;
        let audio = Waveform::load_wav(&root.join(&record.audio_path))?;
        let tpath = root.join(&record.transcript_path);
        let transcript = fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let sample = Self {
            sample_id: record.sample_id.clone(),
            split: record.split,
            video_frames,
            audio,
            transcript: transcript.trim().to_string(),
            sentiment_score: record.sentiment_score,
            emotion_intensities: record.emotion_intensities,
            duration: record.duration,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Model-ready form of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub split: Split,
    /// T_V frames, `image_size` square, values in `[0, 1]`.
    pub frames: Vec<Image>,
    /// T_A log-mel images.
    pub spectrograms: Vec<Image>,
    pub tokens: TokenSeq,
    pub emotion: [u8; 6],
    pub sentiment: Sentiment,
    pub sentiment_score: f32,
}

impl PreparedSample {
    pub fn target(&self, task: Task) -> Target {
        match task {
            Task::Emotion => Target::Emotion(self.emotion),
            Task::Sentiment => Target::Sentiment(self.sentiment),
        }
    }
}

/// Runs the full preprocessing recipe on one sample.
pub fn preprocess(raw: &RawSample, config: &PreprocessConfig) -> Result<PreparedSample> {
    config.validate()?;
    raw.validate()?;
    let size = config.image_size;
    let frames = sample_frames(&raw.video_frames, config.frames)?
        .into_iter()
        .map(|f| f.resize(size, size))
        .collect();
    let wave = raw.audio.resample(config.sample_rate);
    let spec = Spectrogrammer::new(config, wave.sample_rate)?;
    let spectrograms = segment_audio(&wave, config.segment_seconds)?
        .iter()
        .map(|seg| spec.image(seg))
        .collect::<Result<Vec<_>>>()?;
    let tokens = tokenize_text(&raw.transcript, config.max_text_len);
    let Target::Emotion(emotion) = make_targets(raw, Task::Emotion, config.zero_as_negative) else {
        unreachable!()
    };
    let Target::Sentiment(sentiment) = make_targets(raw, Task::Sentiment, config.zero_as_negative)
    else {
        unreachable!()
    };
    Ok(PreparedSample {
        sample_id: raw.sample_id.clone(),
        split: raw.split,
        frames,
        spectrograms,
        tokens,
        emotion,
        sentiment,
        sentiment_score: raw.sentiment_score as f32,
    })
}
