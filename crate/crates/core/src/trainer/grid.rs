use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::experts::CombinerKind;
use crate::molio::LabeledDataset;
use crate::scaffold::SplitAssignment;
use crate::Error;

use super::config::TrainConfig;
use super::train::{evaluate, train};

/// Environment variable bounding the grid worker pool.
pub const THREADS_ENV: &str = "TOPEXPERT_THREADS";

/// Values to sweep per hyperparameter; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridAxes {
    pub combiner: Vec<CombinerKind>,
    pub k: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub te: Vec<f64>,
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub batch_size: Vec<usize>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl GridAxes {
    /// Cartesian product over the axes, earlier fields varying slowest.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = vec![base.clone()];
        macro_rules! expand {
            ($field:ident) => {
                out = out
                    .into_iter()
                    .flat_map(|c| {
                        axis(&self.$field, c.$field.clone())
                            .into_iter()
                            .map(move |v| TrainConfig {
                                $field: v,
                                ..c.clone()
                            })
                    })
                    .collect();
            };
        }
        expand!(combiner);
        expand!(k);
        expand!(alpha);
        expand!(beta);
        expand!(te);
        expand!(lr);
        expand!(weight_decay);
        expand!(batch_size);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: usize,
    pub seed: u64,
    pub valid_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub config: TrainConfig,
    /// Mean over seeds; absent when any seed failed.
    pub mean_valid_auc: Option<f64>,
    pub std_valid_auc: Option<f64>,
    pub mean_test_auc: Option<f64>,
    pub std_test_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub cells: Vec<CellSummary>,
    pub best_cell: usize,
    pub best_config: TrainConfig,
}

/// Worker count from the environment, else the available parallelism.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_one(
    ds: &LabeledDataset,
    split: &SplitAssignment,
    config: &TrainConfig,
    cell: usize,
) -> GridRow {
    let result = train(ds, split, config).map(|out| {
        let test = if split.test.is_empty() {
            None
        } else {
            evaluate(&out.best, ds, &split.test)
                .ok()
                .map(|r| r.macro_auc)
        };
        (out.best_valid_auc, test, out.best_epoch)
    });
    match result {
        Ok((valid, test, epoch)) => GridRow {
            cell,
            seed: config.seed,
            valid_auc: Some(valid),
            test_auc: test,
            best_epoch: Some(epoch),
            error: None,
        },
        Err(e) => {
            log::warn!("grid cell {cell} seed {} failed: {e}", config.seed);
            GridRow {
                cell,
                seed: config.seed,
                valid_auc: None,
                test_auc: None,
                best_epoch: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Trains every cell under every seed on a bounded pool and picks the cell with the best
/// mean validation ROC-AUC (earliest cell on ties). Runs that fail are recorded in the
/// table and disqualify their cell.
pub fn grid_search(
    ds: &LabeledDataset,
    split: &SplitAssignment,
    cells: &[TrainConfig],
    seeds: &[u64],
    threads: usize,
) -> Result<GridReport, Error> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "grid needs at least one cell and one seed".into(),
        ));
    }
    for c in cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, TrainConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            seeds.iter().map(move |&s| {
                (
                    i,
                    TrainConfig {
                        seed: s,
                        ..c.clone()
                    },
                )
            })
        })
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridRow>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((cell, config)) = jobs.get(j) else {
                    break;
                };
                let row = run_one(ds, split, config, *cell);
                results.lock().expect("no worker panicked")[j] = Some(row);
            });
        }
    });
    let rows: Vec<GridRow> = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();

    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mine: Vec<&GridRow> = rows.iter().filter(|r| r.cell == i).collect();
            let valid: Option<Vec<f64>> = mine.iter().map(|r| r.valid_auc).collect();
            let test: Option<Vec<f64>> = mine.iter().map(|r| r.test_auc).collect();
            let v = valid.map(|v| mean_std(&v));
            let t = test.map(|t| mean_std(&t));
            CellSummary {
                cell: i,
                config: c.clone(),
                mean_valid_auc: v.map(|x| x.0),
                std_valid_auc: v.map(|x| x.1),
                mean_test_auc: t.map(|x| x.0),
                std_test_auc: t.map(|x| x.1),
            }
        })
        .collect();
    let best = summaries
        .iter()
        .filter_map(|s| s.mean_valid_auc.map(|m| (s.cell, m)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    let Some((best_cell, _)) = best else {
        let first = rows
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_default();
        return Err(Error::Data(format!(
            "every grid cell failed; first error: {first}"
        )));
    };
    Ok(GridReport {
        rows,
        best_config: cells[best_cell].clone(),
        cells: summaries,
        best_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_order_and_size() {
        let axes = GridAxes {
            k: vec![3, 5],
            lr: vec![1e-2, 1e-3, 1e-4],
            ..Default::default()
        };
        let cells = axes.cells(&TrainConfig::default());
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[0].k, cells[0].lr), (3, 1e-2));
        assert_eq!((cells[1].k, cells[1].lr), (3, 1e-3));
        assert_eq!((cells[3].k, cells[3].lr), (5, 1e-2));
    }

    #[test]
    fn empty_axes_give_base() {
        let base = TrainConfig::default();
        assert_eq!(GridAxes::default().cells(&base), vec![base]);
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }
}
