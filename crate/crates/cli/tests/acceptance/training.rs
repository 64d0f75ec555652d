use std::time::Instant;

use merclip_core::evalkit::{evaluate, EvalReport};
use merclip_core::ingest::Task;
use merclip_core::model::SampleInput;
use merclip_core::params::ParamGroup;
use merclip_core::pipeline::build_model;
use merclip_core::train::Trainer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{desk_config, fail, inputs, synthetic_split, Outcome};

/// Shuffled mini-batches, reshuffled every pass over the data.
struct Batches<'a> {
    inputs: &'a [SampleInput],
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> Batches<'a> {
    fn new(inputs: &'a [SampleInput], size: usize, seed: u64) -> Self {
        Self {
            inputs,
            size,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> Vec<&'a SampleInput> {
        if self.pos + self.size > self.order.len() {
            self.order = (0..self.inputs.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.size].iter().map(|&i| &self.inputs[i]).collect();
        self.pos += self.size;
        b
    }
}

fn prompt_digest(t: &Trainer) -> String {
    let s = &t.model.store;
    s.group_digest(ParamGroup::LabelPrompt) + &s.group_digest(ParamGroup::QueryPrompt)
}

/// Trains for `steps` steps and checks that the label encoder never moves
/// or receives gradient while the prompt contexts do move.
pub fn frozen_label_encoder(task: Task, overrides: &[String], steps: usize) -> Outcome {
    let mut sets = vec!["train.batch_size=2".to_string()];
    sets.extend_from_slice(overrides);
    let cfg = desk_config(task, &sets)?;
    let split = synthetic_split(&cfg, 32, 3)?;
    let data = inputs(&cfg, &split)?;
    let mut trainer = Trainer::new(build_model(&cfg).map_err(fail)?, cfg.train.clone()).map_err(fail)?;
    let le_before = trainer.model.frozen_digest();
    let prompt_before = prompt_digest(&trainer);
    if trainer.model.store.ids_in_group(ParamGroup::LabelEncoder).is_empty() {
        return Err("model has no label encoder parameters".into());
    }
    let key = ParamGroup::LabelEncoder.as_str();
    let mut batches = Batches::new(&data, cfg.train.batch_size, 1);
    let mut max_norm: f64 = 0.0;
    for i in 0..steps {
        let stats = trainer.train_step(&batches.next(), i).map_err(fail)?;
        let n = *stats.grad_norms.get(key).ok_or("no label encoder gradient norm reported")?;
        max_norm = max_norm.max(n.abs());
    }
    let le_after = trainer.model.frozen_digest();
    if le_after != le_before {
        return Err(format!("label encoder digest changed: {le_before} -> {le_after}"));
    }
    if prompt_digest(&trainer) == prompt_before {
        return Err("prompt contexts did not change".into());
    }
    if max_norm != 0.0 {
        return Err(format!("label encoder gradient norm {max_norm:e}"));
    }
    Ok(format!("{steps} steps, label encoder digest {}.., gradient norm 0", &le_before[..12]))
}

pub fn criterion3() -> Outcome {
    frozen_label_encoder(Task::Emotion, &[], 50)
}

pub struct Overfit {
    pub steps: usize,
    pub metric: f64,
    pub report: EvalReport,
    pub seconds: f64,
}

const EVAL_EVERY: usize = 20;

/// Trains on 32 synthetic samples until the training-set selection metric
/// reaches `threshold` or `max_steps` run out.
pub fn overfit(task: Task, overrides: &[String], max_steps: usize, threshold: f64) -> Result<Overfit, String> {
    let t0 = Instant::now();
    let cfg = desk_config(task, overrides)?;
    let split = synthetic_split(&cfg, 32, 11)?;
    let data = inputs(&cfg, &split)?;
    let mut trainer = Trainer::new(build_model(&cfg).map_err(fail)?, cfg.train.clone()).map_err(fail)?;
    let mut batches = Batches::new(&data, cfg.train.batch_size, 5);
    let mut step = 0;
    loop {
        let batch = batches.next();
        trainer.train_step(&batch, step).map_err(fail)?;
        step += 1;
        if step % EVAL_EVERY == 0 || step == max_steps {
            let report = evaluate(&trainer.model, &split, &cfg.preprocess, 16, "mosei", "train").map_err(fail)?.report;
            let metric = report.selection_metric();
            if metric >= threshold || step >= max_steps {
                return Ok(Overfit {
                    steps: step,
                    metric,
                    report,
                    seconds: t0.elapsed().as_secs_f64(),
                });
            }
        }
    }
}

pub const BUDGET_SECONDS: f64 = 300.0;

pub fn check_overfit(task: Task, overrides: &[String]) -> Result<Overfit, String> {
    let (steps, threshold, name) = match task {
        Task::Sentiment => (200, 0.95, "ACC2"),
        Task::Emotion => (400, 0.9, "micro-F1"),
    };
    let r = overfit(task, overrides, steps, threshold)?;
    if r.metric < threshold {
        return Err(format!("train {name} {:.3} after {} steps (need {threshold})", r.metric, r.steps));
    }
    Ok(r)
}

pub fn criterion4(reports: &mut Vec<EvalReport>) -> Outcome {
    let s = check_overfit(Task::Sentiment, &[])?;
    let e = check_overfit(Task::Emotion, &[])?;
    let total = s.seconds + e.seconds;
    let line = format!(
        "sentiment ACC2 {:.3} at step {} ({:.0} s); emotion micro-F1 {:.3} at step {} ({:.0} s)",
        s.metric, s.steps, s.seconds, e.metric, e.steps, e.seconds
    );
    reports.push(s.report);
    reports.push(e.report);
    if total >= BUDGET_SECONDS {
        return Err(format!("{line}; total {total:.0} s over the {BUDGET_SECONDS} s budget"));
    }
    Ok(line)
}
