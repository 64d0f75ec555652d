use merclip_core::head::{predict_emotions, predict_sentiment};
use merclip_core::ingest::Task;
use merclip_core::pipeline::build_model;

use crate::common::{desk_config, fail, inputs, synthetic_split, Outcome};

const THRESHOLD: f64 = 0.6;
const SCALE: f64 = 1.0 / 0.07;

/// z-score with the population standard deviation, logistic, strict cut.
fn emotion_oracle(s: &[f64]) -> Vec<u8> {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0; s.len()];
    }
    s.iter().map(|x| u8::from(1.0 / (1.0 + (-(x - mean) / sd).exp()) > THRESHOLD)).collect()
}

fn sentiment_oracle(s: &[f64], scale: f64) -> Vec<u8> {
    let logits: Vec<f64> = s.iter().map(|x| scale * x).collect();
    let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    (0..s.len()).map(|i| u8::from(i == best)).collect()
}

pub fn check_model_rules(task: Task, overrides: &[String]) -> Result<(), String> {
    let cfg = desk_config(task, overrides)?;
    let model = build_model(&cfg).map_err(fail)?;
    if (model.logit_scale() - SCALE).abs() > 1e-9 {
        return Err(format!("{} model logit scale {}", task.as_str(), model.logit_scale()));
    }
    let split = synthetic_split(&cfg, 3, 21)?;
    for inf in model.infer(&inputs(&cfg, &split)?).map_err(fail)? {
        let want = match task {
            Task::Emotion => emotion_oracle(&inf.scores),
            Task::Sentiment => sentiment_oracle(&inf.scores, SCALE),
        };
        if inf.prediction.labels != want {
            return Err(format!("{}: model predicted {:?}, rule gives {want:?}", inf.sample_id, inf.prediction.labels));
        }
    }
    Ok(())
}

pub fn run() -> Outcome {
    let emotion_cases: [[f64; 6]; 6] = [
        [0.25; 6],
        [-0.1; 6],
        [0.9, 0.1, 0.1, 0.1, 0.1, 0.1],
        [0.3, 0.31, 0.29, 0.3, 0.3, 0.3],
        [0.5, 0.5, 0.5, -0.5, -0.5, -0.5],
        [0.05, -0.2, 0.4, 0.41, -0.3, 0.0],
    ];
    for s in &emotion_cases {
        let got = predict_emotions(s, THRESHOLD).labels;
        if got != emotion_oracle(s) {
            return Err(format!("emotion scores {s:?}: got {got:?}, want {:?}", emotion_oracle(s)));
        }
    }
    if predict_emotions(&[0.25; 6], THRESHOLD).labels != [0; 6] {
        return Err("all-equal scores must give an all-zero prediction".into());
    }
    // A probability equal to the threshold is not a positive.
    let s = emotion_cases[5];
    let p = predict_emotions(&s, THRESHOLD).probabilities;
    for (i, &pi) in p.iter().enumerate() {
        if predict_emotions(&s, pi).labels[i] != 0 {
            return Err(format!("class {i} predicted at threshold equal to its probability"));
        }
    }
    let sentiment_cases = [[0.2, 0.3], [0.31, -0.4], [-0.01, -0.02], [0.0, 1e-6]];
    for s in &sentiment_cases {
        let got = predict_sentiment(s, SCALE).labels;
        if got != sentiment_oracle(s, SCALE) {
            return Err(format!("sentiment scores {s:?}: got {got:?}"));
        }
    }
    check_model_rules(Task::Emotion, &[])?;
    check_model_rules(Task::Sentiment, &[])?;
    Ok(format!(
        "{} emotion and {} sentiment vectors, model outputs follow the rule, logit scale 1/0.07",
        emotion_cases.len(),
        sentiment_cases.len()
    ))
}
