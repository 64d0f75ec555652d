use merclip_core::config::RunConfig;
use merclip_core::evalkit::{AblationGrid, GridKind};
use merclip_core::ingest::synthetic::{generate, write_corpus, SyntheticSpec};
use merclip_core::ingest::{Split, Task};
use merclip_core::pipeline::{checkpoint_dir, eval_run, model_from_checkpoint, train_run};

fn corpus(dir: &std::path::Path) -> RunConfig {
    let spec = SyntheticSpec {
        samples: 10,
        max_duration: 2.0,
        ..SyntheticSpec::default()
    };
    write_corpus(&generate(&spec), dir).unwrap();
    RunConfig::default()
        .with_overrides(&[
            format!("data.root=\"{}\"", dir.display()),
            "preprocess.frames=2".into(),
            "train.batch_size=2".into(),
            "train.epochs=1".into(),
            "train.max_steps=2".into(),
        ])
        .unwrap()
}

#[test]
fn checkpoint_reload_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(&dir.path().join("data"));
    let run = dir.path().join("run");
    let (trainer, report) = train_run(&cfg, &run, true).unwrap();
    assert_eq!(report.steps, 2);
    let saved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved.config_hash().unwrap(), cfg.config_hash().unwrap());
    assert!(saved.provenance.is_some());

    let (cfg2, model) = model_from_checkpoint(&checkpoint_dir(&run).unwrap()).unwrap();
    assert_eq!(model.store.digest(), trainer.model.store.digest());
    let a = eval_run(&trainer.model, &cfg, Split::Test, None).unwrap();
    let b = eval_run(&model, &cfg2, Split::Test, None).unwrap();
    assert_eq!(a.report.metrics, b.report.metrics);
    for (x, y) in a.predictions.iter().zip(&b.predictions) {
        assert_eq!(x.similarities, y.similarities);
    }
}

#[test]
fn layered_files_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.toml");
    let b = dir.path().join("b.toml");
    std::fs::write(&a, "seed = 4\n[cmd]\norder = \"VA\"\nlayers = 2\n").unwrap();
    std::fs::write(&b, "[train]\ntask = \"sentiment\"\n").unwrap();
    let cfg = RunConfig::default().layered(&[a, b], &["seed=9".into()]).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.cmd.order.to_string(), "VA");
    assert_eq!(cfg.task(), Task::Sentiment);
    cfg.validate().unwrap();
    assert!(RunConfig::default().with_overrides(&["cmd.no_such_key=1".into()]).is_err());
}

#[test]
fn grid_cells_differ_only_in_their_axis() {
    let base = RunConfig::default();
    let grid = AblationGrid::build(GridKind::Orders, &base).unwrap();
    for cell in &grid.cells {
        let mut back = cell.config.clone();
        back.cmd.order = base.cmd.order.clone();
        back.cmd.layers = base.cmd.layers;
        assert_eq!(back, base, "cell {}", cell.name);
    }
    let grid = AblationGrid::build(GridKind::Components, &base).unwrap();
    for cell in &grid.cells {
        let mut back = cell.config.clone();
        back.model.components = base.model.components;
        assert_eq!(back, base, "cell {}", cell.name);
    }
}
