use merclip_core::ingest::text::{EOS, SOS};
use merclip_core::ingest::{detokenize, segment_audio, tokenize_text, PreprocessConfig, Spectrogrammer, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{fail, Outcome};

const WORDS: [&str; 24] = [
    "i", "think", "the", "movie", "was", "really", "good", "bad", "honestly", "um", "uh", "it's", "don't", "LOVED",
    "Terrible", "acting", "plot,", "twist!", "why?", "café", "naïve", "2019", "100%", "well...",
];

/// Whitespace runs collapse to one space, case folds to lower.
fn normalized(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn corpus() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = vec![String::new(), "   ".into(), "Hello, World!".into(), "emoji 😀 and tabs\tinside".into()];
    while out.len() < 100 {
        let n = rng.random_range(1..=15);
        let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        out.push(words.join(if rng.random_bool(0.2) { "  " } else { " " }));
    }
    out
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rate = 16_000usize;
    for _ in 0..300 {
        let n = rng.random_range(1..=rate * 20);
        let tau = n as f64 / rate as f64;
        let want = (tau / 2.0).ceil() as usize;
        let got = segment_audio(&Waveform::new(vec![0.1; n], rate as u32), 2.0).map_err(fail)?.len();
        if got != want {
            return Err(format!("{tau} s gave {got} segments, expected {want}"));
        }
    }

    let cfg = PreprocessConfig::default();
    let spec = Spectrogrammer::new(&cfg, 16_000).map_err(fail)?;
    let win = (cfg.window_ms / 1000.0 * 16_000.0) as usize;
    let hop = (cfg.hop_ms / 1000.0 * 16_000.0) as usize;
    for samples in [32_000, win, win + hop - 1, 17_001] {
        let (_, frames) = spec.log_mel(&vec![0.0; samples]).map_err(fail)?;
        if frames != (samples - win) / hop + 1 {
            return Err(format!("{samples} samples gave {frames} frames"));
        }
    }
    let (_, two_seconds) = spec.log_mel(&vec![0.0; 32_000]).map_err(fail)?;
    if two_seconds != 61 {
        return Err(format!("2 s at 16 kHz gave {two_seconds} frames"));
    }

    let texts = corpus();
    for s in &texts {
        let seq = tokenize_text(s, 512);
        if seq.ids.first() != Some(&SOS) || seq.ids.last() != Some(&EOS) {
            return Err(format!("`{s}` is not wrapped in start and end tokens"));
        }
        let back = detokenize(&seq);
        if back != normalized(s) {
            return Err(format!("`{s}` round-tripped to `{back}`"));
        }
    }
    Ok(format!("300 durations, frame formula (61 frames for 2 s), {} strings round-trip", texts.len()))
}
