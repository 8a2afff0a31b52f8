//! Initialisation, grouped Adam, the epoch loop with early stopping, the
//! plain factorisation baseline and grid search.

mod adam;
mod config;
mod data;
mod grid;
mod mf;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kernel::Tensor;
use crate::model::{dense_grads, forward_backward, ModelDims, ModelParams, ParamId, Predictor, UpdateGroup};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use config::{make_variant, TrainConfig};
pub use data::{assemble, prepare, Prepared, TrainData};
pub use grid::{grid_search, GridCell, GridReport, GridSpec};
pub use mf::{train_mf, MfModel};

/// Xavier-uniform bound for a `rows × cols` weight; vectors count as `n × 1`.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (rows, cols) = match shape {
        [n] => (*n, 1),
        [r, c] => (*r, *c),
        _ => (1, 1),
    };
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn model_dims(config: &TrainConfig, n_users: usize, n_items: usize, vocab_size: usize) -> ModelDims {
    ModelDims {
        n_users,
        n_items,
        factors: config.factors,
        preferred_aspects: config.preferred_aspects,
        rejected_aspects: config.rejected_aspects,
        filters: config.filters,
        kernel_width: config.kernel_width,
        embedding_dim: config.embedding_dim,
        attention_hidden: config.attention_hidden,
        vocab_size,
    }
}

/// Xavier-uniform weights, zero biases and the given word vectors. Draws
/// happen in [`ParamId::ALL`] order from one seeded stream.
pub fn init_params(dims: ModelDims, embeddings: &EmbeddingTable, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(dims)?;
    if embeddings.matrix.shape() != [dims.vocab_size, dims.embedding_dim] {
        return Err(Error::Config(format!(
            "embedding table {:?} does not match vocabulary {} × d {}",
            embeddings.matrix.shape(),
            dims.vocab_size,
            dims.embedding_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in ParamId::ALL {
        if id.is_bias() {
            continue;
        }
        if id == ParamId::WordEmbeddings {
            params[id] = embeddings.matrix.clone();
            continue;
        }
        let bound = xavier_bound(params[id].shape());
        for x in params[id].data_mut() {
            *x = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean regularised objective per training example.
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned parameters.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_mse,val_mae";

    /// Loss and validation curve. Wall-clock times are left out so that
    /// identical runs give identical files; see [`TrainHistory::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_mse, e.val_mae));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.3}\n", e.epoch, e.seconds));
        }
        s
    }

    /// The history without wall-clock times, for reproducibility checks.
    pub fn without_timing(&self) -> Vec<(usize, u64, u64, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_mse.to_bits(), e.val_mae.to_bits()))
            .collect()
    }
}

/// Where training stopped on a non-finite objective or gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters (the initial ones if no epoch finished).
    pub params: ModelParams,
    pub history: TrainHistory,
    pub divergence: Option<Divergence>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the dropout masks of one batch.
pub fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    splitmix(splitmix(seed ^ 0x5eed) ^ ((epoch as u64) << 32 | batch as u64))
}

fn validation_metrics(params: &ModelParams, data: &TrainData, config: &TrainConfig) -> Result<(f64, f64)> {
    let predictor = Predictor::new(params, config.variant)?;
    let examples = if data.validation.is_empty() { &data.train } else { &data.validation };
    let m = evaluate(&predictor, &data.documents, examples, config.clip_predictions)?;
    Ok((m.mse, m.mae))
}

/// Mini-batch training from `initial`. Each batch runs one forward/backward
/// pass, clips the global gradient norm, then steps the four update groups
/// in order on that batch's gradients (or only group `epoch % 4` under the
/// per-epoch schedule). The best-validation parameters are kept; training
/// stops after `patience` epochs without improvement.
pub fn train_from(initial: ModelParams, data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("no training records".into()));
    }
    let opts = make_variant(config);
    let reg = config.reg();
    let adam_cfg = AdamConfig { lr: config.learning_rate, beta1: config.adam_beta1, beta2: config.adam_beta2, epsilon: config.adam_epsilon };
    let pad = data.pad_index;
    let mut params = initial;
    let mut states: Vec<AdamState> = UpdateGroup::ORDER.iter().map(|g| AdamState::new(*g, &params)).collect();
    let mut best = params.clone();
    let mut best_mse = f64::INFINITY;
    let mut history = TrainHistory::default();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 0..config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut objective = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&k| data.train[k]).collect();
            let dropout_seed = Some(batch_seed(config.seed, epoch, b));
            let out = match forward_backward(&params, &data.documents, &batch, reg, opts, dropout_seed, b) {
                Ok(out) => out,
                Err(Error::Divergence { batch }) => {
                    return Ok(TrainOutcome { params: best, history, divergence: Some(Divergence { epoch, batch }) });
                }
                Err(e) => return Err(e),
            };
            objective += out.loss;
            let mut grads = dense_grads(&out.grads, &params);
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm);
            }
            for state in &mut states {
                let group = state.group();
                if config.epoch_schedule && UpdateGroup::ORDER[epoch % 4] != group {
                    continue;
                }
                let step = adam_step(&mut params, &grads, state, &adam_cfg, !opts.train_embeddings, pad);
                if step.is_err() || !params.is_finite() {
                    return Ok(TrainOutcome { params: best, history, divergence: Some(Divergence { epoch, batch: b }) });
                }
            }
        }
        let (val_mse, val_mae) = validation_metrics(&params, data, config)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: objective / data.train.len() as f64,
            val_mse,
            val_mae,
            seconds: start.elapsed().as_secs_f64(),
        });
        if !val_mse.is_finite() {
            return Ok(TrainOutcome { params: best, history, divergence: Some(Divergence { epoch, batch: 0 }) });
        }
        if val_mse < best_mse {
            best_mse = val_mse;
            best = params.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best, history, divergence: None })
}

/// Initialises from `config.seed` and trains.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    let dims = model_dims(config, data.entities.n_users(), data.entities.n_items(), data.embeddings.matrix.rows());
    let initial = init_params(dims, &data.embeddings, config.seed)?;
    train_from(initial, data, config)
}

/// Keeps the PAD embedding row at zero.
pub(crate) fn zero_row(t: &mut Tensor, row: Option<usize>) {
    if let Some(r) = row {
        if r < t.rows() {
            t.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
    }
}
