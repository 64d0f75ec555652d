use std::path::Path;
use std::process::Command;

use merclip_core::config::RunConfig;

use crate::common::{bin, fail, Outcome};

const ORDERS: [&str; 15] = [
    "V", "A", "L", "VA", "AV", "AL", "LA", "VL", "LV", "VAL", "AVL", "ALV", "LAV", "VLA", "LVA",
];
/// (directory, decoder enabled, label encoder enabled)
const COMPONENTS: [(&str, bool, bool); 4] = [
    ("wo_cmd_le", false, false),
    ("wo_cmd", false, true),
    ("wo_le", true, false),
    ("full", true, true),
];

/// One optimizer step per cell keeps the sweep cheap; only the grid
/// machinery is under test.
const QUICK: [&str; 3] = ["train.epochs=1", "train.max_steps=1", "train.batch_size=2"];

pub fn prepare_corpus(dir: &Path) -> Result<std::path::PathBuf, String> {
    let data = dir.join("data");
    let out = Command::new(bin())
        .args(["preprocess", "--synthetic", "10", "--set", "preprocess.frames=2", "--out"])
        .arg(&data)
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!("preprocess failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(data.join("config.toml"))
}

fn ablate(config: &Path, grid: &str, out: &Path) -> Result<(), String> {
    let mut cmd = Command::new(bin());
    cmd.args(["ablate", "--grid", grid, "--config"]).arg(config).arg("--out").arg(out);
    for s in QUICK {
        cmd.args(["--set", s]);
    }
    let res = cmd.output().map_err(fail)?;
    if !res.status.success() {
        return Err(format!("ablate --grid {grid} exited {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr)));
    }
    Ok(())
}

fn cell_dirs(out: &Path) -> Result<Vec<String>, String> {
    let mut names: Vec<String> = std::fs::read_dir(out)
        .map_err(fail)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

fn same_set(mut got: Vec<String>, want: &[&str]) -> bool {
    let mut want: Vec<String> = want.iter().map(|s| s.to_string()).collect();
    want.sort();
    got.sort();
    got == want
}

pub fn run() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let config = prepare_corpus(tmp.path())?;

    let orders = tmp.path().join("orders");
    ablate(&config, "orders", &orders)?;
    if !same_set(cell_dirs(&orders)?, &ORDERS) {
        return Err(format!("order grid produced {:?}", cell_dirs(&orders)?));
    }
    for name in ORDERS {
        let cfg = RunConfig::load(&orders.join(name).join("config.toml")).map_err(fail)?;
        if cfg.cmd.order.to_string() != name || cfg.cmd.layers != name.len() {
            return Err(format!("cell {name}: order {} with {} layers", cfg.cmd.order, cfg.cmd.layers));
        }
        if !(cfg.model.components.cmd && cfg.model.components.label_encoder) {
            return Err(format!("cell {name}: components changed"));
        }
    }

    let comps = tmp.path().join("components");
    ablate(&config, "components", &comps)?;
    let names: Vec<&str> = COMPONENTS.iter().map(|c| c.0).collect();
    if !same_set(cell_dirs(&comps)?, &names) {
        return Err(format!("component grid produced {:?}", cell_dirs(&comps)?));
    }
    for (name, cmd, le) in COMPONENTS {
        let cfg = RunConfig::load(&comps.join(name).join("config.toml")).map_err(fail)?;
        let c = cfg.model.components;
        if (c.cmd, c.label_encoder) != (cmd, le) {
            return Err(format!("cell {name}: cmd {} label_encoder {}", c.cmd, c.label_encoder));
        }
        if cfg.cmd.order.to_string() != "LVA" {
            return Err(format!("cell {name}: order {}", cfg.cmd.order));
        }
    }
    let rows = std::fs::read_to_string(orders.join("ablation.tsv")).map_err(fail)?.lines().count() - 1;
    if rows != 15 {
        return Err(format!("orders table has {rows} rows"));
    }
    Ok("orders: 15 run directories with matching cmd.order; components: 4 with matching toggles".into())
}
