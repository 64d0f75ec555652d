use serde::{Deserialize, Serialize};

use super::RawSample;

pub const EMOTIONS: [&str; 6] = ["happy", "sad", "angry", "surprise", "disgust", "fear"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Emotion,
    Sentiment,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Emotion => "emotion",
            Task::Sentiment => "sentiment",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "emotion" => Ok(Task::Emotion),
            "sentiment" => Ok(Task::Sentiment),
            other => Err(crate::Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Binary sentiment class. Index 0 is positive, matching the default label
/// order `[positive, negative]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    /// Score exactly zero under the strict-sign rule.
    Excluded,
}

impl Sentiment {
    pub fn from_score(score: f64, zero_as_negative: bool) -> Self {
        if score > 0.0 {
            Sentiment::Positive
        } else if score < 0.0 || zero_as_negative {
            Sentiment::Negative
        } else {
            Sentiment::Excluded
        }
    }

    pub fn class_index(self) -> Option<usize> {
        match self {
            Sentiment::Positive => Some(0),
            Sentiment::Negative => Some(1),
            Sentiment::Excluded => None,
        }
    }

    pub fn to_code(self) -> i8 {
        match self {
            Sentiment::Positive => 1,
            Sentiment::Negative => 0,
            Sentiment::Excluded => -1,
        }
    }

    pub fn from_code(code: i8) -> Self {
        match code {
            1 => Sentiment::Positive,
            0 => Sentiment::Negative,
            _ => Sentiment::Excluded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Emotion([u8; 6]),
    Sentiment(Sentiment),
}

impl Target {
    pub fn is_excluded(&self) -> bool {
        matches!(self, Target::Sentiment(Sentiment::Excluded))
    }
}

/// A class is present iff its intensity is strictly positive.
pub fn emotion_presence(intensities: &[f64; 6]) -> [u8; 6] {
    intensities.map(|v| u8::from(v > 0.0))
}

pub fn make_targets(sample: &RawSample, task: Task, zero_as_negative: bool) -> Target {
    match task {
        Task::Emotion => Target::Emotion(emotion_presence(&sample.emotion_intensities)),
        Task::Sentiment => {
            Target::Sentiment(Sentiment::from_score(sample.sentiment_score, zero_as_negative))
        }
    }
}
