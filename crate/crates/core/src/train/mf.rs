use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{xavier_bound, EpochRecord, TrainConfig, TrainData, TrainHistory};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::kernel::Tensor;
use crate::model::Example;

/// Plain matrix factorisation, `r̂ = p_u · q_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub users: Tensor,
    pub items: Tensor,
}

impl MfModel {
    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).iter().zip(self.items.row(item)).fold(0.0, |acc, (a, b)| acc + a * b)
    }

    pub fn evaluate(&self, examples: &[Example], clip: bool) -> MetricsReport {
        MetricsReport::from_pairs(examples.iter().map(|e| {
            let r = self.predict(e.user, e.item);
            (e.rating, if clip { r.clamp(1.0, 5.0) } else { r })
        }))
    }
}

struct Moments {
    m: Tensor,
    v: Tensor,
}

fn adam(p: &mut Tensor, g: &Tensor, s: &mut Moments, cfg: &TrainConfig, t: i32) {
    let c1 = 1.0 - cfg.adam_beta1.powi(t);
    let c2 = 1.0 - cfg.adam_beta2.powi(t);
    let (m, v, p, g) = (s.m.data_mut(), s.v.data_mut(), p.data_mut(), g.data());
    for j in 0..p.len() {
        m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
        v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
        p[j] -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_epsilon);
    }
}

/// Trains the baseline with the same objective shape (squared error plus
/// `β₂/2` on touched rows), batching, Adam settings and early stopping.
pub fn train_mf(data: &TrainData, config: &TrainConfig) -> Result<(MfModel, TrainHistory)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("no training records".into()));
    }
    let f = config.factors;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |rows: usize| {
        let b = xavier_bound(&[rows, f]);
        let data = (0..rows * f).map(|_| rng.random_range(-b..=b)).collect();
        Tensor::new(vec![rows, f], data).expect("finite init")
    };
    let mut model = MfModel { users: init(data.entities.n_users()), items: init(data.entities.n_items()) };
    let zeros = |t: &Tensor| Moments { m: Tensor::zeros(t.shape()), v: Tensor::zeros(t.shape()) };
    let (mut su, mut si) = (zeros(&model.users), zeros(&model.items));
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut best_mse = f64::INFINITY;
    let mut since_best = 0;
    let val = if data.validation.is_empty() { &data.train } else { &data.validation };

    for epoch in 0..config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle);
        let mut objective = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut gu = Tensor::zeros(model.users.shape());
            let mut gi = Tensor::zeros(model.items.shape());
            let (mut users, mut items) = (BTreeSet::new(), BTreeSet::new());
            for &k in chunk {
                let e = data.train[k];
                let err = model.predict(e.user, e.item) - e.rating;
                objective += 0.5 * err * err;
                for j in 0..f {
                    gu.row_mut(e.user)[j] += err * model.items.get2(e.item, j);
                    gi.row_mut(e.item)[j] += err * model.users.get2(e.user, j);
                }
                users.insert(e.user);
                items.insert(e.item);
            }
            for (set, g, t) in [(&users, &mut gu, &model.users), (&items, &mut gi, &model.items)] {
                for &r in set {
                    objective += 0.5 * config.beta2 * t.row(r).iter().map(|x| x * x).sum::<f64>();
                    for j in 0..f {
                        g.row_mut(r)[j] += config.beta2 * t.get2(r, j);
                    }
                }
            }
            step += 1;
            adam(&mut model.users, &gu, &mut su, config, step);
            adam(&mut model.items, &gi, &mut si, config, step);
        }
        let m = model.evaluate(val, config.clip_predictions);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: objective / data.train.len() as f64,
            val_mse: m.mse,
            val_mae: m.mae,
            seconds: start.elapsed().as_secs_f64(),
        });
        if !m.mse.is_finite() {
            break;
        }
        if m.mse < best_mse {
            best_mse = m.mse;
            best = model.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}
