//! Acceptance suite: one pass/fail line per criterion. Criterion 10 is
//! informational and never fails the run.

mod ablation;
mod attention;
mod common;
mod generalization;
mod gradients;
mod inference;
mod metrics;
mod preprocessing;
mod training;

use std::process::ExitCode;
use std::time::Instant;

use merclip_core::evalkit::{reference_targets, EvalReport};
use merclip_core::ingest::Task;

use common::Outcome;

fn report(id: usize, name: &str, budget: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut res = f();
    let secs = t.elapsed().as_secs_f64();
    if let (Ok(detail), Some(limit)) = (&res, budget) {
        if secs >= limit {
            res = Err(format!("{detail}; took {secs:.1} s, limit {limit} s"));
        }
    }
    let (tag, detail) = match &res {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id:>2} {tag}  {name} [{secs:.1} s]: {detail}");
    res.is_ok()
}

fn reference_lines(desk: &[EvalReport]) {
    for (task, ds) in [(Task::Emotion, "mosei"), (Task::Sentiment, "mosei"), (Task::Sentiment, "mosi")] {
        let targets = reference_targets(task, ds).unwrap_or(&[]);
        let text: Vec<String> = targets.iter().map(|(k, v)| format!("{k} {v:.1}")).collect();
        println!("    reference {} {ds}: {}", task.as_str(), text.join(", "));
    }
    for r in desk {
        let deltas: Vec<String> = r
            .reference_deltas()
            .iter()
            .map(|d| format!("{} {:.1} vs {:.1} ({:+.1})", d.metric, d.value, d.reference, d.delta))
            .collect();
        println!("    desk overfit run, {} train split: {}", r.task.as_str(), deltas.join(", "));
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    let mut desk_reports = Vec::new();
    ok &= report(1, "attention oracle", Some(10.0), attention::run);
    ok &= report(2, "gradient checks", Some(60.0), gradients::run);
    ok &= report(3, "frozen label encoder", None, training::criterion3);
    ok &= report(4, "overfit sanity", Some(training::BUDGET_SECONDS), || training::criterion4(&mut desk_reports));
    ok &= report(5, "inference rule", None, inference::run);
    ok &= report(6, "metric oracles", None, metrics::run);
    ok &= report(7, "ablation machinery", None, ablation::run);
    ok &= report(8, "pipeline generalization", None, generalization::run);
    ok &= report(9, "preprocessing conformance", None, preprocessing::run);
    println!(
        "criterion 10 INFO  reference targets (non-gating; full-scale runs only, desk runs are not comparable)"
    );
    reference_lines(&desk_reports);
    if ok {
        println!("acceptance: all gating criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
