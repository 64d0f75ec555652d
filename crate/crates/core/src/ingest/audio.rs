//! Audio segmentation and log-mel spectrogram images.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::image::Image;
use super::PreprocessConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Reads a WAV file, downmixing to mono.
    pub fn load_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = usize::from(spec.channels.max(1));
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        let samples = interleaved
            .chunks(channels)
            .map(|c| c.iter().sum::<f32>() / channels as f32)
            .collect();
        Ok(Self::new(samples, spec.sample_rate))
    }

    pub fn save_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(s)?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Linear-interpolation resampling to `target` Hz.
    pub fn resample(&self, target: u32) -> Waveform {
        if target == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target);
        }
        let ratio = f64::from(self.sample_rate) / f64::from(target);
        let n_out = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let w = (pos - i0 as f64) as f32;
                self.samples[i0] * (1.0 - w) + self.samples[i1] * w
            })
            .collect();
        Waveform::new(samples, target)
    }
}

/// Splits into `ceil(duration / segment_seconds)` segments, zero-padding the
/// last one to full length.
pub fn segment_audio(wave: &Waveform, segment_seconds: f64) -> Result<Vec<Vec<f32>>> {
    if wave.samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let seg_len = (segment_seconds * f64::from(wave.sample_rate)).round() as usize;
    if seg_len == 0 {
        return Err(Error::Config("segment length rounds to zero samples".into()));
    }
    Ok(wave
        .samples
        .chunks(seg_len)
        .map(|chunk| {
            let mut seg = chunk.to_vec();
            seg.resize(seg_len, 0.0);
            seg
        })
        .collect())
}

/// Number of STFT frames: `floor((samples - window) / hop) + 1`.
pub fn stft_frame_count(samples: usize, window: usize, hop: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / hop + 1
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale mel filters over `0..sample_rate/2`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x n_bins`, row-major.
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let fmax = f64::from(sample_rate) / 2.0;
        let mel_max = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for b in 0..n_bins {
                let f = b as f64 * f64::from(sample_rate) / n_fft as f64;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[m * n_bins + b] = w;
            }
        }
        Self {
            weights,
            n_mels,
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        assert_eq!(power.len(), self.n_bins);
        (0..self.n_mels)
            .map(|m| {
                self.weights[m * self.n_bins..(m + 1) * self.n_bins]
                    .iter()
                    .zip(power)
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

/// Log-mel feature extractor for fixed-length audio segments.
pub struct Spectrogrammer {
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    mel: MelFilterbank,
    log_floor: f64,
    image_size: usize,
}

impl Spectrogrammer {
    pub fn new(config: &PreprocessConfig, sample_rate: u32) -> Result<Self> {
        let win = (config.window_ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        let hop = (config.hop_ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        if win == 0 || hop == 0 || win / 2 + 1 < config.mel_bins {
            return Err(Error::SampleRateTooLow {
                rate: sample_rate,
                window_ms: config.window_ms,
            });
        }
        // periodic Hann
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(win);
        Ok(Self {
            window,
            hop,
            fft,
            mel: MelFilterbank::new(config.mel_bins, win, sample_rate),
            log_floor: config.log_floor,
            image_size: config.image_size,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    /// `mel_bins x F` matrix of `ln(max(energy, floor))`, row-major by mel bin.
    pub fn log_mel(&self, segment: &[f32]) -> Result<(Vec<f64>, usize)> {
        let win = self.window.len();
        let frames = stft_frame_count(segment.len(), win, self.hop);
        if frames == 0 {
            return Err(Error::shape(format!(
                "segment of {} samples is shorter than the {win}-sample window",
                segment.len()
            )));
        }
        let n_mels = self.mel.n_mels();
        let mut out = vec![0.0; n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut power = vec![0.0; win / 2 + 1];
        for t in 0..frames {
            let start = t * self.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(f64::from(segment[start + k]) * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, e) in self.mel.apply(&power).into_iter().enumerate() {
                out[m * frames + t] = e.max(self.log_floor).ln();
            }
        }
        Ok((out, frames))
    }

    /// `image_size x image_size x 3` image: mel bins on rows, time linearly
    /// resized to `image_size` columns, replicated over channels.
    pub fn image(&self, segment: &[f32]) -> Result<Image> {
        let (feat, frames) = self.log_mel(segment)?;
        let n_mels = self.mel.n_mels();
        let size = self.image_size;
        let mut img = Image::filled(n_mels, size, 0.0);
        for x in 0..size {
            let pos = if size == 1 || frames == 1 {
                0.0
            } else {
                x as f64 * (frames - 1) as f64 / (size - 1) as f64
            };
            let t0 = pos.floor() as usize;
            let t1 = (t0 + 1).min(frames - 1);
            let w = pos - t0 as f64;
            for m in 0..n_mels {
                let v = feat[m * frames + t0] * (1.0 - w) + feat[m * frames + t1] * w;
                for c in 0..3 {
                    img.set(m, x, c, v as f32);
                }
            }
        }
        Ok(img)
    }
}

/// Convenience wrapper around [`Spectrogrammer`] for a single segment.
pub fn spectrogram_image(segment: &[f32], sample_rate: u32, config: &PreprocessConfig) -> Result<Image> {
    Spectrogrammer::new(config, sample_rate)?.image(segment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_counts() {
        let sr = 16_000;
        for (secs, expect) in [(5.0, 3usize), (2.0, 1), (0.5, 1)] {
            let wave = Waveform::new(vec![0.1; (secs * sr as f64) as usize], sr);
            let segs = segment_audio(&wave, 2.0).unwrap();
            assert_eq!(segs.len(), expect, "tau = {secs}");
            assert!(segs.iter().all(|s| s.len() == 32_000));
        }
        let wave = Waveform::new(vec![0.1; 80_000], sr);
        let segs = segment_audio(&wave, 2.0).unwrap();
        // last segment: 1 s of signal then 1 s of zeros
        assert!(segs[2][..16_000].iter().all(|&v| v == 0.1));
        assert!(segs[2][16_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_waveform_rejected() {
        let wave = Waveform::new(vec![], 16_000);
        assert!(matches!(segment_audio(&wave, 2.0), Err(Error::EmptyAudio)));
    }

    #[test]
    fn frame_count_at_16k() {
        let cfg = PreprocessConfig::default();
        let s = Spectrogrammer::new(&cfg, 16_000).unwrap();
        assert_eq!((s.window_len(), s.hop_len()), (1024, 512));
        let (_, frames) = s.log_mel(&vec![0.0; 32_000]).unwrap();
        assert_eq!(frames, (32_000 - 1024) / 512 + 1);
        assert_eq!(frames, 61);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = PreprocessConfig::default();
        let img = spectrogram_image(&vec![0.0; 32_000], 16_000, &cfg).unwrap();
        assert_eq!((img.height(), img.width()), (224, 224));
        let floor = (1e-10f64).ln() as f32;
        assert!(img.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn shape_is_fixed_across_rates() {
        let cfg = PreprocessConfig::default();
        for sr in [8_000u32, 16_000, 22_050, 44_100] {
            let n = 2 * sr as usize;
            let seg: Vec<f32> = (0..n).map(|i| (i as f32 * 0.05).sin()).collect();
            let img = spectrogram_image(&seg, sr, &cfg).unwrap();
            assert_eq!((img.height(), img.width()), (224, 224));
            assert!(img.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn low_rate_rejected() {
        let cfg = PreprocessConfig::default();
        assert!(matches!(
            Spectrogrammer::new(&cfg, 4_000),
            Err(Error::SampleRateTooLow { .. })
        ));
    }

    #[test]
    fn tone_lands_in_expected_mel_band() {
        let cfg = PreprocessConfig::default();
        let s = Spectrogrammer::new(&cfg, 16_000).unwrap();
        let seg: Vec<f32> = (0..32_000)
            .map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 16_000.0).sin())
            .collect();
        let (feat, frames) = s.log_mel(&seg).unwrap();
        let energy = |m: usize| feat[m * frames + frames / 2];
        let peak = (0..224).max_by(|&a, &b| energy(a).total_cmp(&energy(b))).unwrap();
        let mel_1k = hz_to_mel(1000.0) / hz_to_mel(8000.0) * 225.0 - 1.0;
        assert!((peak as f64 - mel_1k).abs() <= 2.0, "peak {peak} vs {mel_1k}");
    }

    #[test]
    fn resample_preserves_duration() {
        let wave = Waveform::new(vec![0.5; 44_100], 44_100);
        let r = wave.resample(16_000);
        assert_eq!(r.samples.len(), 16_000);
        assert!((r.duration() - 1.0).abs() < 1e-9);
    }
}
