use std::path::Path;
use std::process::Command;

use merclip_core::config::RunConfig;
use merclip_core::ingest::Task;
use merclip_core::label_encoder::QUERY_WORDS;

use crate::ablation::prepare_corpus;
use crate::common::{bin, desk_config, fail, fixture, Outcome};
use crate::{gradients, inference, training};

struct Variant {
    name: String,
    task: Task,
    sets: Vec<String>,
    overfit: bool,
}

/// Criteria 2, 3 and 5 (and 4 for the description fixtures) under one
/// configuration-only variant.
fn check(v: &Variant) -> Result<(), String> {
    let g = gradients::check_task(v.task, &v.sets, 5, 13)?;
    if g.worst >= 1e-4 {
        return Err(format!("gradient rel err {:.2e}", g.worst));
    }
    training::frozen_label_encoder(v.task, &v.sets, 3)?;
    inference::check_model_rules(v.task, &v.sets)?;
    if v.overfit {
        training::check_overfit(v.task, &v.sets)?;
    }
    Ok(())
}

fn cli_run(root: &Path) -> Result<(), String> {
    let config = prepare_corpus(root)?;
    let run = root.join("run");
    let res = Command::new(bin())
        .args(["train", "--config"])
        .arg(&config)
        .args(["--set", &format!("labels.path=\"{}\"", fixture("emotion_sentences.txt").display())])
        .args(["--set", "labels.query_word=\"\""])
        .args(["--set", "train.max_steps=1", "--set", "train.epochs=1", "--set", "train.batch_size=2", "--out"])
        .arg(&run)
        .output()
        .map_err(fail)?;
    if !res.status.success() {
        return Err(format!("train with fixture labels failed: {}", String::from_utf8_lossy(&res.stderr)));
    }
    let saved = RunConfig::load(&run.join("config.toml")).map_err(fail)?;
    if saved.labels.query_word.as_deref() != Some("") || saved.labels.path.is_none() {
        return Err("run config does not record the swapped labels and query word".into());
    }
    Ok(())
}

pub fn run() -> Outcome {
    let root = tempfile::tempdir().map_err(fail)?;
    let labels_dir = root.path().join("labels");
    std::fs::create_dir_all(&labels_dir).map_err(fail)?;
    for f in ["emotion_sentences.txt", "sentiment_phrases.txt"] {
        std::fs::copy(fixture(f), labels_dir.join(f)).map_err(fail)?;
    }
    let data_root = format!("data.root=\"{}\"", root.path().display());
    let mut variants = vec![
        Variant {
            name: "emotion sentence fixture".into(),
            task: Task::Emotion,
            sets: vec![data_root.clone(), "labels.path=\"labels/emotion_sentences.txt\"".into()],
            overfit: true,
        },
        Variant {
            name: "sentiment phrase fixture".into(),
            task: Task::Sentiment,
            sets: vec![data_root.clone(), "labels.path=\"labels/sentiment_phrases.txt\"".into()],
            overfit: true,
        },
    ];
    for task in [Task::Emotion, Task::Sentiment] {
        variants.push(Variant {
            name: format!("{} built-in descriptions", task.as_str()),
            task,
            sets: vec!["labels.kind=\"descriptions\"".into()],
            overfit: false,
        });
        for w in QUERY_WORDS {
            variants.push(Variant {
                name: format!("{} query word {:?}", task.as_str(), w),
                task,
                sets: vec![format!("labels.query_word=\"{w}\"")],
                overfit: false,
            });
        }
    }
    for v in &variants {
        let cfg = desk_config(v.task, &v.sets)?;
        let labels = cfg.label_set().map_err(fail)?;
        if v.sets.iter().any(|s| s.contains("labels.path") || s.contains("descriptions")) && labels.labels.iter().all(|l| !l.contains(' ')) {
            return Err(format!("{}: labels were not swapped ({:?})", v.name, labels.labels));
        }
        check(v).map_err(|e| format!("{}: {e}", v.name))?;
    }
    cli_run(&root.path().join("cli"))?;
    Ok(format!(
        "{} configuration-only variants (fixtures, built-in descriptions, {} query words incl. none) and a CLI run",
        variants.len(),
        QUERY_WORDS.len()
    ))
}
