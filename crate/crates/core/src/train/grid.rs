use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Values to sweep. Both aspect counts move together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub factors: Vec<usize>,
    pub aspects: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl GridSpec {
    /// The full ranges searched for the published configuration.
    pub fn reference() -> Self {
        Self {
            factors: vec![4, 8, 16, 32, 64],
            aspects: vec![1, 2, 3, 4, 5],
            learning_rates: vec![1e-5, 1e-4, 1e-3, 1e-2],
            batch_sizes: vec![100, 200, 500, 1000],
        }
    }

    /// Cell configurations in sweep order, each seeded `base.seed + index`.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &f in &self.factors {
            for &a in &self.aspects {
                for &lr in &self.learning_rates {
                    for &b in &self.batch_sizes {
                        let seed = base.seed.wrapping_add(out.len() as u64);
                        out.push(TrainConfig {
                            factors: f,
                            preferred_aspects: a,
                            rejected_aspects: a,
                            learning_rate: lr,
                            batch_size: b,
                            seed,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub index: usize,
    pub factors: usize,
    pub aspects: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Best recorded validation MSE (infinite if nothing finished).
    pub val_mse: f64,
    pub val_mae: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub best_config: TrainConfig,
    pub best_params: ModelParams,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,factors,aspects,learning_rate,batch_size,seed,val_mse,val_mae,diverged\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.index, c.factors, c.aspects, c.learning_rate, c.batch_size, c.seed, c.val_mse, c.val_mae, c.diverged
            ));
        }
        s
    }
}

/// Trains every cell and keeps the one with the lowest validation MSE,
/// preferring smaller `f`, then fewer aspects, on ties.
pub fn grid_search(data: &TrainData, base: &TrainConfig, grid: &GridSpec) -> Result<GridReport> {
    let configs = grid.cells(base);
    if configs.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let mut cells = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, ModelParams)> = None;
    for (index, cfg) in configs.iter().enumerate() {
        let outcome = train(data, cfg)?;
        let best_rec = outcome.history.best_epoch.map(|e| &outcome.history.epochs[e]);
        let cell = GridCell {
            index,
            factors: cfg.factors,
            aspects: cfg.preferred_aspects,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            val_mse: best_rec.map_or(f64::INFINITY, |r| r.val_mse),
            val_mae: best_rec.map_or(f64::INFINITY, |r| r.val_mae),
            diverged: outcome.divergence.is_some(),
        };
        let better = match &best {
            None => true,
            Some((b, _)) => {
                let cur: &GridCell = &cells[*b];
                (cell.val_mse, cell.factors, cell.aspects) < (cur.val_mse, cur.factors, cur.aspects)
            }
        };
        if better {
            best = Some((index, outcome.params));
        }
        cells.push(cell);
    }
    let (best, best_params) = best.expect("non-empty grid");
    Ok(GridReport { best_config: configs[best].clone(), cells, best, best_params })
}
