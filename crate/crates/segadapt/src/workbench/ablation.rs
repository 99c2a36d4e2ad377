//! Ablation grids: the cartesian product of config overrides, crossed with
//! a seed list, every cell trained on the same dataset. Failed runs leave a
//! missing cell; the suite continues.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workbench::config::ExperimentConfig;
use crate::workbench::experiment::{run_experiment, RunSummary};

/// A grid: named cells (explicit override sets) and/or axes whose value
/// lists are expanded cartesian-style, each crossed with every seed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    /// Field path -> list of values; expanded as a cartesian product.
    #[serde(default)]
    pub axes: Vec<AblationAxis>,
    /// Explicit cells appended after the cartesian expansion.
    #[serde(default)]
    pub cells: Vec<NamedCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedCell {
    pub name: String,
    #[serde(default)]
    pub overrides: toml::value::Table,
}

impl AblationGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("grid parse: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text)
    }

    /// The component ablation (source-only, plain Mean-Teacher, +uncertainty
    /// gate, full method) over the given seeds.
    pub fn component_ablation(seeds: Vec<u64>) -> Self {
        let cell = |name: &str, pairs: &[(&str, toml::Value)]| NamedCell {
            name: name.to_string(),
            overrides: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        };
        Self {
            seeds,
            axes: Vec::new(),
            cells: vec![
                cell("source-only", &[("lambda0", toml::Value::Float(0.0))]),
                cell(
                    "mean-teacher",
                    &[
                        ("use_uncertainty_mask", toml::Value::Boolean(false)),
                        ("use_classdrop_mask", toml::Value::Boolean(false)),
                    ],
                ),
                cell(
                    "uncertainty",
                    &[
                        ("use_uncertainty_mask", toml::Value::Boolean(true)),
                        ("use_classdrop_mask", toml::Value::Boolean(false)),
                    ],
                ),
                cell(
                    "uncertainty+classdrop",
                    &[
                        ("use_uncertainty_mask", toml::Value::Boolean(true)),
                        ("use_classdrop_mask", toml::Value::Boolean(true)),
                    ],
                ),
            ],
        }
    }

    fn expand(&self) -> Result<Vec<NamedCell>> {
        if self.seeds.is_empty() {
            return Err(Error::config("ablation grid needs at least one seed"));
        }
        let mut cells: Vec<NamedCell> = Vec::new();
        if !self.axes.is_empty() {
            let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
            for axis in &self.axes {
                if axis.values.is_empty() {
                    return Err(Error::config(format!("axis {} has no values", axis.key)));
                }
                let mut next = Vec::with_capacity(combos.len() * axis.values.len());
                for combo in &combos {
                    for value in &axis.values {
                        let mut ext = combo.clone();
                        ext.push((axis.key.clone(), value.clone()));
                        next.push(ext);
                    }
                }
                combos = next;
            }
            for combo in combos {
                let name = combo
                    .iter()
                    .map(|(k, v)| format!("{k}={}", toml_value_compact(v)))
                    .collect::<Vec<_>>()
                    .join(",");
                cells.push(NamedCell {
                    name,
                    overrides: combo.into_iter().collect(),
                });
            }
        }
        cells.extend(self.cells.iter().cloned());
        if cells.is_empty() {
            return Err(Error::config("ablation grid is empty: no axes and no cells"));
        }
        Ok(cells)
    }
}

fn toml_value_compact(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One (cell, seed) result; `summary` is `None` when the run failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRun {
    pub cell: String,
    pub seed: u64,
    pub run_dir: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Aggregated results with per-cell mean and min-max spread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub runs: Vec<CellRun>,
    pub table: Vec<AblationRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub completed: usize,
    pub requested: usize,
    pub final_miou_mean: f64,
    pub final_miou_min: f64,
    pub final_miou_max: f64,
    pub best_miou_mean: f64,
    pub best_miou_min: f64,
    pub best_miou_max: f64,
}

impl AblationOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cell,completed,requested,final_miou_mean,final_miou_min,final_miou_max,best_miou_mean,best_miou_min,best_miou_max\n",
        );
        for row in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.cell,
                row.completed,
                row.requested,
                row.final_miou_mean,
                row.final_miou_min,
                row.final_miou_max,
                row.best_miou_mean,
                row.best_miou_min,
                row.best_miou_max
            ));
        }
        out
    }

    pub fn row(&self, cell: &str) -> Option<&AblationRow> {
        self.table.iter().find(|r| r.cell == cell)
    }
}

/// Runs the grid. Every cell shares `base_cfg`'s dataset and the same seed
/// list; runs execute in parallel; failures are recorded and skipped in the
/// aggregation.
pub fn ablation_suite(
    base_cfg: &ExperimentConfig,
    grid: &AblationGrid,
    out_dir: impl AsRef<Path>,
) -> Result<AblationOutcome> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells = grid.expand()?;

    let mut jobs: Vec<(NamedCell, u64)> = Vec::new();
    for cell in &cells {
        for &seed in &grid.seeds {
            jobs.push((cell.clone(), seed));
        }
    }

    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|(cell, seed)| {
            let run_dir = out_dir.join(sanitize(&cell.name)).join(format!("seed_{seed}"));
            let outcome = (|| -> Result<RunSummary> {
                let mut cfg = base_cfg.clone();
                cfg.seed = *seed;
                for (key, value) in &cell.overrides {
                    let json = toml_to_json_string(value);
                    cfg.apply_override(key, &json)?;
                }
                run_experiment(&cfg, &run_dir, None)
            })();
            match outcome {
                Ok(summary) => CellRun {
                    cell: cell.name.clone(),
                    seed: *seed,
                    run_dir: run_dir.display().to_string(),
                    summary: Some(summary),
                    error: None,
                },
                Err(e) => CellRun {
                    cell: cell.name.clone(),
                    seed: *seed,
                    run_dir: run_dir.display().to_string(),
                    summary: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut table = Vec::new();
    for cell in &cells {
        let cell_runs: Vec<&RunSummary> = runs
            .iter()
            .filter(|r| r.cell == cell.name)
            .filter_map(|r| r.summary.as_ref())
            .collect();
        if cell_runs.is_empty() {
            table.push(AblationRow {
                cell: cell.name.clone(),
                completed: 0,
                requested: grid.seeds.len(),
                final_miou_mean: f64::NAN,
                final_miou_min: f64::NAN,
                final_miou_max: f64::NAN,
                best_miou_mean: f64::NAN,
                best_miou_min: f64::NAN,
                best_miou_max: f64::NAN,
            });
            continue;
        }
        let stats = |values: Vec<f64>| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (mean, min, max)
        };
        let (fm, fmin, fmax) = stats(cell_runs.iter().map(|s| s.final_miou).collect());
        let (bm, bmin, bmax) = stats(cell_runs.iter().map(|s| s.best_miou).collect());
        table.push(AblationRow {
            cell: cell.name.clone(),
            completed: cell_runs.len(),
            requested: grid.seeds.len(),
            final_miou_mean: fm,
            final_miou_min: fmin,
            final_miou_max: fmax,
            best_miou_mean: bm,
            best_miou_min: bmin,
            best_miou_max: bmax,
        });
    }

    let outcome = AblationOutcome { runs, table };
    crate::segcore::io::write_text(out_dir.join("ablation.csv"), &outcome.to_csv())?;
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| Error::invalid(format!("outcome serialization: {e}")))?;
    crate::segcore::io::write_text(out_dir.join("ablation.json"), &format!("{json}\n"))?;
    Ok(outcome)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect()
}

fn toml_to_json_string(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => serde_json::to_string(s).expect("string"),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    }
}
