use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use merclip_core::config::RunConfig;
use merclip_core::data::preprocess_manifest;
use merclip_core::evalkit::plot::scatter_svg;
use merclip_core::evalkit::tsne::{tsne, TsneConfig};
use merclip_core::evalkit::{export_embeddings, run_ablation, AblationGrid, EmbeddingTable, GridKind, Stage};
use merclip_core::ingest::synthetic::{generate, write_corpus, SyntheticSpec};
use merclip_core::ingest::{Split, Task};
use merclip_core::pipeline;

use crate::ConfigArgs;

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(&args.preset)?;
    if args.task.is_some() || args.dataset.is_some() {
        let task: Task = match &args.task {
            Some(t) => t.parse()?,
            None => cfg.task(),
        };
        let dataset = args.dataset.clone().unwrap_or_else(|| cfg.train.dataset.clone());
        cfg = cfg.for_task(task, &dataset);
    }
    let cfg = cfg.layered(&args.configs, &args.sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    match out.or_else(|| cfg.out_dir.clone()) {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --out or set out_dir"),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("{}: cannot make path absolute", p.display()))
}

pub fn preprocess(args: &ConfigArgs, out: &Path, synthetic: Option<usize>) -> Result<ExitCode> {
    let mut cfg = resolve_config(args)?;
    let out = absolute(out)?;
    let (manifest, media_root) = match synthetic {
        Some(n) => {
            let spec = SyntheticSpec {
                samples: n,
                seed: cfg.seed,
                ..SyntheticSpec::default()
            };
            let manifest = write_corpus(&generate(&spec), &out)?;
            cfg.data.root = None;
            cfg.data.manifest = out.join("manifest.jsonl");
            cfg.data.media_root = Some(out.clone());
            (manifest, out.clone())
        }
        None => (pipeline::load_manifest(&cfg)?, cfg.media_root()),
    };
    let prepared = if synthetic.is_some() { out.join("prepared") } else { out.clone() };
    let n = preprocess_manifest(&manifest, &media_root, &prepared, &cfg.preprocess)?;
    cfg.data.prepared = Some(prepared.clone());
    let saved = cfg.save_to_dir(&out)?;
    println!("prepared {n} samples in {}", prepared.display());
    for (split, count) in manifest.split_counts() {
        println!("  {split:<6} {count}", split = split.as_str());
    }
    println!("config: {}", saved.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(args: &ConfigArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = resolve_config(args)?;
    let out = run_dir(&cfg, out)?;
    let (_, report) = pipeline::train_run(&cfg, &out, true)?;
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    println!("trained {} steps, final loss {last:.4}", report.steps);
    match (report.best_epoch, report.best_metric) {
        (Some(e), Some(m)) => println!("selected epoch {e} (validation {:.1}%)", 100.0 * m),
        _ => println!("selected final parameters (no validation split)"),
    }
    println!("checkpoint: {}", out.join("best").display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(checkpoint: &Path, split: &str, out: Option<PathBuf>) -> Result<ExitCode> {
    let dir = pipeline::checkpoint_dir(checkpoint)?;
    let split: Split = split.parse()?;
    let (mut cfg, model) = pipeline::model_from_checkpoint(&dir)?;
    cfg.eval.split = split.as_str().to_string();
    let run = dir.parent().unwrap_or(&dir);
    let out = out.unwrap_or_else(|| run.join(format!("eval-{}", split.as_str())));
    cfg.save_to_dir(&out)?;
    let ev = pipeline::eval_run(&model, &cfg, split, Some(&out))?;
    let r = &ev.report;
    println!("{} on {} {} ({} samples, {} excluded)", r.task.as_str(), r.dataset, r.split, r.samples, r.excluded);
    print!("{}", r.to_tsv());
    println!("report: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(args: &ConfigArgs, grid: &str, out: Option<PathBuf>) -> Result<ExitCode> {
    let base = resolve_config(args)?;
    let kind: GridKind = grid.parse()?;
    let out = run_dir(&base, out)?;
    // Fail once up front instead of once per cell.
    pipeline::load_manifest(&base)?;
    let grid = AblationGrid::build(kind, &base)?;
    let table = run_ablation(&grid, &out, |cell, dir| {
        eprintln!("[{}] training", cell.name);
        pipeline::train_and_eval(&cell.config, dir, false)
    })?;
    print!("{}", table.to_tsv());
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see {}", table.rows.len(), out.join("ablation.json").display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn embed(checkpoint: &Path, stage: &str, split: &str, out: &Path, plot_too: bool) -> Result<ExitCode> {
    let stage: Stage = stage.parse()?;
    let split: Split = split.parse()?;
    let dir = pipeline::checkpoint_dir(checkpoint)?;
    let (cfg, model) = pipeline::model_from_checkpoint(&dir)?;
    cfg.save_to_dir(out)?;
    let manifest = pipeline::load_manifest(&cfg)?;
    let data = pipeline::split_data(&cfg, &manifest, split)?;
    let tables = export_embeddings(&model, &data, &cfg.preprocess, stage, cfg.eval.batch_size)?;
    for t in &tables {
        let p = t.write(out)?;
        println!("{}: {} x {}", p.display(), t.ids.len(), t.width());
        if plot_too {
            let svg = render(t, &p.with_extension("svg"), &TsneConfig::default())?;
            println!("{}", svg.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes the t-SNE projection as `<stem>.tsne.tsv` and the scatter plot.
fn render(table: &EmbeddingTable, svg: &Path, tsne_cfg: &TsneConfig) -> Result<PathBuf> {
    let points = tsne(&table.vectors, tsne_cfg);
    let proj = EmbeddingTable {
        name: format!("{}.tsne", table.name),
        ids: table.ids.clone(),
        labels: table.labels.clone(),
        vectors: points.iter().map(|p| p.to_vec()).collect(),
    };
    let dir = svg.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    proj.write(dir)?;
    scatter_svg(svg, &format!("t-SNE: {}", table.name), &points, &table.labels)?;
    Ok(svg.to_path_buf())
}

pub fn plot(input: &Path, out: Option<PathBuf>, perplexity: f64, iterations: usize, seed: u64) -> Result<ExitCode> {
    let table = EmbeddingTable::read(input)?;
    if table.ids.is_empty() {
        bail!("{}: no embeddings to plot", input.display());
    }
    let svg = out.unwrap_or_else(|| input.with_extension("svg"));
    if let Some(d) = svg.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| d.display().to_string())?;
    }
    let cfg = TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    println!("{}", render(&table, &svg, &cfg)?.display());
    Ok(ExitCode::SUCCESS)
}

pub fn selftest() -> Result<ExitCode> {
    let results = merclip_core::selftest::run();
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {:<22} {:>6.2}s  {}", r.name, r.seconds, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
