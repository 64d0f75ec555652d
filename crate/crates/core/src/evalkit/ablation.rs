//! Fusion-order and component ablation grids.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{percent, EvalReport};
use crate::cmd::FusionOrder;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::Task;
use crate::model::Components;

/// Uni-, bi- and tri-modal fusion orders, in table order.
pub const ORDER_ROWS: [&str; 15] = [
    "V", "A", "L", "VA", "AV", "AL", "LA", "VL", "LV", "VAL", "AVL", "ALV", "LAV", "VLA", "LVA",
];

/// Component toggles in table order: without decoder and label encoder,
/// without decoder, without label encoder, full model.
pub const COMPONENT_ROWS: [Components; 4] = [
    Components {
        cmd: false,
        label_encoder: false,
    },
    Components {
        cmd: false,
        label_encoder: true,
    },
    Components {
        cmd: true,
        label_encoder: false,
    },
    Components {
        cmd: true,
        label_encoder: true,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Orders,
    Components,
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridKind::Orders => "orders",
            GridKind::Components => "components",
        })
    }
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orders" => Ok(GridKind::Orders),
            "components" => Ok(GridKind::Components),
            other => Err(Error::Config(format!("unknown grid `{other}` (expected orders or components)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub kind: GridKind,
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    /// One cell per table row, each a copy of `base` with only the swept
    /// setting changed.
    pub fn build(kind: GridKind, base: &RunConfig) -> Result<Self> {
        let cells = match kind {
            GridKind::Orders => ORDER_ROWS
                .iter()
                .map(|o| {
                    let order: FusionOrder = o.parse()?;
                    let mut config = base.clone();
                    config.cmd.layers = order.len();
                    config.cmd.order = order;
                    Ok(AblationCell {
                        name: (*o).to_string(),
                        config,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            GridKind::Components => COMPONENT_ROWS
                .iter()
                .map(|&c| {
                    let mut config = base.clone();
                    config.model.components = c;
                    AblationCell {
                        name: c.tag().to_string(),
                        config,
                    }
                })
                .collect(),
        };
        Ok(Self { kind, cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub order: String,
    pub components: String,
    pub seed: u64,
    /// Fractions; `None` when the cell failed or was not run.
    pub metrics: Option<std::collections::BTreeMap<String, f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: GridKind,
    pub task: Task,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Columns: `cell order components seed <metrics...> error`, metrics in
    /// percent with one decimal. Failed cells show `-` in every metric
    /// column.
    pub fn to_tsv(&self) -> String {
        let keys: BTreeSet<&String> = self.rows.iter().filter_map(|r| r.metrics.as_ref()).flat_map(|m| m.keys()).collect();
        let mut out = String::from("cell\torder\tcomponents\tseed");
        for k in &keys {
            write!(out, "\t{k}").expect("string write");
        }
        out.push_str("\terror\n");
        for r in &self.rows {
            write!(out, "{}\t{}\t{}\t{}", r.cell, r.order, r.components, r.seed).expect("string write");
            for k in &keys {
                match r.metrics.as_ref().and_then(|m| m.get(*k)) {
                    Some(v) => write!(out, "\t{:.1}", percent(*v)),
                    None => write!(out, "\t-"),
                }
                .expect("string write");
            }
            let err = r.error.as_deref().unwrap_or("").replace(['\t', '\n'], " ");
            writeln!(out, "\t{err}").expect("string write");
        }
        out
    }
}

/// Runs every cell in its own directory under `out_dir` (named after the
/// cell, holding its `config.toml`), then writes `ablation.tsv` and
/// `ablation.json`. A failing cell is recorded as a gap and the sweep
/// continues.
pub fn run_ablation(
    grid: &AblationGrid,
    out_dir: &Path,
    mut runner: impl FnMut(&AblationCell, &Path) -> Result<EvalReport>,
) -> Result<AblationTable> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let task = grid.cells.first().map_or(Task::Emotion, |c| c.config.task());
    let mut rows = Vec::with_capacity(grid.len());
    for cell in &grid.cells {
        let dir = out_dir.join(&cell.name);
        cell.config.save_to_dir(&dir)?;
        let (metrics, error) = match runner(cell, &dir) {
            Ok(r) => (Some(r.metrics), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(AblationRow {
            cell: cell.name.clone(),
            order: cell.config.cmd.order.to_string(),
            components: cell.config.model.components.tag().to_string(),
            seed: cell.config.seed,
            metrics,
            error,
        });
    }
    let table = AblationTable {
        kind: grid.kind,
        task,
        rows,
    };
    let p = out_dir.join("ablation.tsv");
    fs::write(&p, table.to_tsv()).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join("ablation.json");
    fs::write(&p, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&p, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let base = RunConfig::default();
        let orders = AblationGrid::build(GridKind::Orders, &base).unwrap();
        assert_eq!(orders.len(), 15);
        let lva = orders.cells.iter().find(|c| c.name == "LVA").unwrap();
        assert_eq!(lva.config.cmd.order.to_string(), "LVA");
        assert_eq!(lva.config.cmd.layers, 3);
        let comps = AblationGrid::build(GridKind::Components, &base).unwrap();
        let names: Vec<&str> = comps.cells.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["wo_cmd_le", "wo_cmd", "wo_le", "full"]);
    }

    #[test]
    fn failed_cells_leave_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let grid = AblationGrid::build(GridKind::Components, &RunConfig::default()).unwrap();
        let table = run_ablation(&grid, dir.path(), |cell, _| {
            if cell.name == "wo_le" {
                return Err(Error::Config("boom".into()));
            }
            let mut metrics = std::collections::BTreeMap::new();
            metrics.insert("micro_f1".to_string(), 0.5);
            Ok(EvalReport {
                task: Task::Emotion,
                dataset: "synthetic".into(),
                split: "test".into(),
                samples: 1,
                excluded: 0,
                metrics,
                per_class: Vec::new(),
                config: serde_json::Value::Null,
            })
        })
        .unwrap();
        let tsv = table.to_tsv();
        assert!(tsv.contains("wo_le\tLVA\two_le\t0\t-\tinvalid configuration: boom"));
        assert!(tsv.contains("full\tLVA\tfull\t0\t50.0\t"));
        for c in ["wo_cmd_le", "wo_cmd", "wo_le", "full"] {
            assert!(dir.path().join(c).join("config.toml").exists());
        }
    }
}
