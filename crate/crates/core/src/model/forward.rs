//! The training objective recorded on a tape.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::entities::Example;
use super::params::{ModelParams, ParamId};
use super::variant::{ModelOptions, RegConfig, Variant};
use super::{uniform, Polarity};
use crate::corpus::PolarityDocuments;
use crate::error::{Error, Result};
use crate::kernel::{ops, ParamGrads, Tape, Tensor, Var};

/// Loss and gradients of one mini-batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Full regularised objective.
    pub loss: f64,
    /// `½ Σ (r − r̂)²` alone.
    pub data_loss: f64,
    pub predictions: Vec<f64>,
    pub grads: ParamGrads,
}

struct Graph<'a> {
    tape: Tape,
    params: &'a ModelParams,
    opts: ModelOptions,
    /// Batch-level dropout seed; `None` disables dropout.
    dropout_seed: Option<u64>,
    leaves: HashMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    fn leaf(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let v = self.tape.param(id.key(), &self.params[id]);
        self.leaves.insert(id, v);
        v
    }

    fn dropout(&mut self, x: Var, user: usize, side: Polarity, layer: u64) -> Var {
        let Some(seed) = self.dropout_seed else { return x };
        let p = self.opts.dropout;
        if p <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side_code = match side {
            Polarity::Preferred => 0,
            Polarity::Rejected => 1,
        };
        rng.set_stream((user as u64) << 2 | side_code << 1 | layer);
        let keep = 1.0 / (1.0 - p);
        let n = self.tape.value(x).len();
        let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        self.tape.mask(x, mask)
    }

    fn extract(&mut self, doc: &[usize], user: usize, side: Polarity) -> Result<Var> {
        let aspects = side.aspects(self.params.dims());
        if doc.is_empty() {
            return Ok(self.tape.constant(uniform(aspects)));
        }
        let table = &self.params[ParamId::WordEmbeddings];
        let emb = if self.opts.train_embeddings {
            self.tape.param_rows(ParamId::WordEmbeddings.key(), table, doc)?
        } else {
            let rows = ops::gather_rows(table, doc)?;
            self.tape.constant(rows)
        };
        let kernel = self.leaf(ParamId::ConvKernel);
        let bias = self.leaf(ParamId::ConvBias);
        let ctx = self.tape.conv_context(emb, kernel, bias, self.params.dims().kernel_width, None)?;
        let ctx = self.dropout(ctx, user, side, 0);
        let (w, b) = side.head();
        let (w, b) = (self.leaf(w), self.leaf(b));
        let logits = if self.opts.variant == Variant::CoarseGrained {
            let pooled = self.tape.max_rows(ctx)?;
            let h = self.tape.linear_relu(pooled, w, b)?;
            self.dropout(h, user, side, 1)
        } else {
            let h = self.tape.linear_relu(ctx, w, b)?;
            let h = self.dropout(h, user, side, 1);
            self.tape.sum_rows(h)?
        };
        self.tape.softmax(logits)
    }

    /// `(Φ, Ψᵀ)` as tape nodes.
    fn attention(&mut self) -> Result<(Var, Var)> {
        let d = *self.params.dims();
        let m = self.leaf(ParamId::PreferredIndicators);
        let v = self.leaf(ParamId::RejectedIndicators);
        let wa = self.leaf(ParamId::AttentionWeight);
        let ba = self.leaf(ParamId::AttentionBias);
        let ha = self.leaf(ParamId::AttentionVector);
        let pairs = self.tape.pair_products(m, v)?;
        let hidden = self.tape.linear_relu(pairs, wa, ba)?;
        let h = self.tape.reshape(ha, vec![1, d.attention_hidden])?;
        let logits = self.tape.linear(hidden, h, None)?;
        let logits = self.tape.reshape(logits, vec![d.preferred_aspects, d.rejected_aspects])?;
        Ok((self.tape.softmax_cols(logits)?, self.tape.softmax_rows(logits)?))
    }

    /// Enhanced importance `(ρ^{p+}, ρ^{r+})` for one user.
    fn user_importance(&mut self, docs: &PolarityDocuments, user: usize, maps: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let d = *self.params.dims();
        if self.opts.variant == Variant::UniformImportance {
            let p = self.tape.constant(uniform(d.preferred_aspects));
            let r = self.tape.constant(uniform(d.rejected_aspects));
            return Ok((p, r));
        }
        let rho_p = self.extract(&docs.positive, user, Polarity::Preferred)?;
        let rho_r = self.extract(&docs.negative, user, Polarity::Rejected)?;
        let Some((phi, psi_t)) = maps else { return Ok((rho_p, rho_r)) };
        let mu_r = self.tape.mat_t_vec(phi, rho_p)?;
        let mu_p = self.tape.matvec(psi_t, rho_r)?;
        Ok((self.tape.add(rho_p, mu_p)?, self.tape.add(rho_r, mu_r)?))
    }
}

struct Recorded<'a> {
    graph: Graph<'a>,
    total: Var,
    data: Var,
    predictions: Vec<Var>,
}

fn record<'a>(
    params: &'a ModelParams,
    docs: &[PolarityDocuments],
    batch: &[Example],
    reg: RegConfig,
    opts: ModelOptions,
    dropout_seed: Option<u64>,
) -> Result<Recorded<'a>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut g = Graph { tape: Tape::new(), params, opts, dropout_seed, leaves: HashMap::new() };
    let maps = if opts.variant.uses_offset() { Some(g.attention()?) } else { None };
    let m = g.leaf(ParamId::PreferredIndicators);
    let v = g.leaf(ParamId::RejectedIndicators);

    let mut per_user: HashMap<usize, (Var, Var)> = HashMap::new();
    let mut squares = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    for ex in batch {
        let plus = match per_user.get(&ex.user) {
            Some(&vars) => vars,
            None => {
                let user_docs = docs.get(ex.user).ok_or(Error::Index { id: ex.user, rows: docs.len() })?;
                let vars = g.user_importance(user_docs, ex.user, maps)?;
                per_user.insert(ex.user, vars);
                vars
            }
        };
        let p = g.tape.param_row(ParamId::UserFactors.key(), &params[ParamId::UserFactors], ex.user)?;
        let q = g.tape.param_row(ParamId::ItemFactors.key(), &params[ParamId::ItemFactors], ex.item)?;
        let pq = g.tape.mul(p, q)?;
        let s_p = g.tape.mat_t_vec(m, pq)?;
        let s_r = g.tape.mat_t_vec(v, pq)?;
        let pos = g.tape.dot(plus.0, s_p)?;
        let neg = g.tape.dot(plus.1, s_r)?;
        let r_hat = g.tape.sub(pos, neg)?;
        let target = g.tape.constant(Tensor::scalar(ex.rating));
        let err = g.tape.sub(r_hat, target)?;
        squares.push(g.tape.sum_squares(err));
        predictions.push(r_hat);
    }
    let sq = g.tape.sum_scalars(&squares);
    let data = g.tape.scale(sq, 0.5);

    let l1_m = g.tape.abs_sum(m);
    let l1_v = g.tape.abs_sum(v);
    let l1 = g.tape.sum_scalars(&[l1_m, l1_v]);
    let l1 = g.tape.scale(l1, reg.beta1);

    let users: Vec<usize> = batch.iter().map(|e| e.user).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<usize> = batch.iter().map(|e| e.item).collect::<BTreeSet<_>>().into_iter().collect();
    let pu = g.tape.param_rows(ParamId::UserFactors.key(), &params[ParamId::UserFactors], &users)?;
    let qi = g.tape.param_rows(ParamId::ItemFactors.key(), &params[ParamId::ItemFactors], &items)?;
    let mut l2_terms = vec![g.tape.sum_squares(pu), g.tape.sum_squares(qi)];
    for id in ParamId::THETA {
        let leaf = g.leaf(id);
        l2_terms.push(g.tape.sum_squares(leaf));
    }
    let l2 = g.tape.sum_scalars(&l2_terms);
    let l2 = g.tape.scale(l2, 0.5 * reg.beta2);

    let total = g.tape.sum_scalars(&[data, l1, l2]);
    Ok(Recorded { graph: g, total, data, predictions })
}

/// The regularised objective of `batch`, without gradients or dropout.
pub fn loss(
    params: &ModelParams,
    docs: &[PolarityDocuments],
    batch: &[Example],
    reg: RegConfig,
    opts: ModelOptions,
) -> Result<f64> {
    let rec = record(params, docs, batch, reg, opts, None)?;
    Ok(rec.graph.tape.value(rec.total).item())
}

/// Objective and gradients for one mini-batch. `docs` is indexed by user.
/// A non-finite objective is a divergence at `batch_index`.
pub fn forward_backward(
    params: &ModelParams,
    docs: &[PolarityDocuments],
    batch: &[Example],
    reg: RegConfig,
    opts: ModelOptions,
    dropout_seed: Option<u64>,
    batch_index: usize,
) -> Result<BatchOutput> {
    let rec = record(params, docs, batch, reg, opts, dropout_seed)?;
    let tape = &rec.graph.tape;
    let loss = tape.value(rec.total).item();
    if !loss.is_finite() {
        return Err(Error::Divergence { batch: batch_index });
    }
    let back = tape.backward(rec.total);
    Ok(BatchOutput {
        loss,
        data_loss: tape.value(rec.data).item(),
        predictions: rec.predictions.iter().map(|v| tape.value(*v).item()).collect(),
        grads: back.params,
    })
}

/// Gradients laid out like `params`, zero where nothing flowed.
pub fn dense_grads(grads: &ParamGrads, params: &ModelParams) -> Vec<Tensor> {
    ParamId::ALL
        .iter()
        .map(|&id| match grads.get(id.key()) {
            Some(g) => g.to_dense(),
            None => Tensor::zeros(params[id].shape()),
        })
        .collect()
}
