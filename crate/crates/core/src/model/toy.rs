use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    dense_grads, forward_backward, loss, Example, ModelDims, ModelOptions, ModelParams, ParamId, Polarity, RegConfig,
    Variant,
};
use crate::corpus::PolarityDocuments;
use crate::error::Result;
use crate::kernel::{finite_diff_grad, max_relative_error, ops, Tensor, DEFAULT_STEP};

/// A tiny random model with its documents and a full user × item batch.
#[derive(Clone, Debug)]
pub struct ToyInstance {
    pub params: ModelParams,
    pub docs: Vec<PolarityDocuments>,
    pub batch: Vec<Example>,
    pub reg: RegConfig,
}

pub const TOY_DOC_LEN: usize = 5;

/// Minimum distance of every non-differentiable point from the sampled
/// parameters. Ten times the default finite-difference step.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn toy_dims() -> ModelDims {
    ModelDims {
        n_users: 2,
        n_items: 2,
        factors: 3,
        preferred_aspects: 2,
        rejected_aspects: 2,
        filters: 4,
        kernel_width: 3,
        embedding_dim: 3,
        attention_hidden: 5,
        vocab_size: 8,
    }
}

/// Parameters uniform in ±0.5, random 5-word documents on both sides and
/// random ratings for all four pairs. Draws whose [`kink_distance`] is
/// below [`KINK_MARGIN`] are rejected and redrawn from the same stream, so
/// a central difference never straddles a ReLU hinge, an `|x|` corner or a
/// max-pool switch.
pub fn toy_instance(seed: u64) -> Result<ToyInstance> {
    let dims = toy_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let inst = draw(&dims, &mut rng)?;
        if kink_distance(&inst.params, &inst.docs)? >= KINK_MARGIN {
            return Ok(inst);
        }
    }
}

fn draw(dims: &ModelDims, rng: &mut ChaCha8Rng) -> Result<ToyInstance> {
    let params = ModelParams::random_uniform(*dims, rng.random(), 0.5)?;
    let doc = |rng: &mut ChaCha8Rng| (0..TOY_DOC_LEN).map(|_| rng.random_range(0..dims.vocab_size)).collect();
    let docs = (0..dims.n_users)
        .map(|_| PolarityDocuments { positive: doc(rng), negative: doc(rng) })
        .collect();
    let mut batch = Vec::new();
    for user in 0..dims.n_users {
        for item in 0..dims.n_items {
            batch.push(Example { user, item, rating: rng.random_range(1.0..=5.0) });
        }
    }
    Ok(ToyInstance { params, docs, batch, reg: RegConfig { beta1: 0.01, beta2: 0.05 } })
}

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// Smallest gap between the top two entries of each column whose maximum
/// is positive.
fn max_pool_gap(x: &Tensor) -> f64 {
    let mut gap = f64::INFINITY;
    for c in 0..x.cols() {
        let mut col: Vec<f64> = (0..x.rows()).map(|r| x.get2(r, c)).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        if col.len() > 1 && col[0] > 0.0 {
            gap = gap.min(col[0] - col[1]);
        }
    }
    gap
}

/// Distance of the parameters from the nearest point where the objective
/// is not differentiable, over all variants.
pub fn kink_distance(params: &ModelParams, docs: &[PolarityDocuments]) -> Result<f64> {
    let dims = params.dims();
    let mut dist = min_abs(&params[ParamId::PreferredIndicators]).min(min_abs(&params[ParamId::RejectedIndicators]));
    let pairs = ops::pair_products(&params[ParamId::PreferredIndicators], &params[ParamId::RejectedIndicators])?;
    let att = ops::linear(&pairs, &params[ParamId::AttentionWeight], Some(&params[ParamId::AttentionBias]))?;
    dist = dist.min(min_abs(&att));
    for d in docs {
        for side in [Polarity::Preferred, Polarity::Rejected] {
            let doc = side.document(d);
            if doc.is_empty() {
                continue;
            }
            let emb = ops::gather_rows(&params[ParamId::WordEmbeddings], doc)?;
            let pre = ops::conv1d(&emb, &params[ParamId::ConvKernel], &params[ParamId::ConvBias], dims.kernel_width, None)?;
            let ctx = ops::relu(&pre);
            let (w, b) = side.head();
            let head = ops::linear(&ctx, &params[w], Some(&params[b]))?;
            let (pooled, _) = ops::max_rows(&ctx)?;
            let coarse = ops::linear(&pooled, &params[w], Some(&params[b]))?;
            dist = dist.min(min_abs(&pre)).min(min_abs(&head)).min(min_abs(&coarse)).min(max_pool_gap(&ctx));
        }
    }
    Ok(dist)
}

/// Worst relative error between tape and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub per_param: Vec<(ParamId, f64)>,
    pub max: f64,
}

/// Compares the tape gradient of the regularised objective with central
/// differences at step `h`, with dropout off.
pub fn certify_gradients(instance: &ToyInstance, variant: Variant, h: f64) -> Result<GradientReport> {
    let opts = ModelOptions { variant, dropout: 0.0, train_embeddings: true };
    let ToyInstance { docs, batch, reg, .. } = instance;
    let mut params = instance.params.clone();
    let out = forward_backward(&params, docs, batch, *reg, opts, None, 0)?;
    let analytic = dense_grads(&out.grads, &params);
    let numeric = finite_diff_grad(&mut params, |p| loss(p, docs, batch, *reg, opts).unwrap_or(f64::NAN), h)?;
    let per_param: Vec<(ParamId, f64)> = ParamId::ALL
        .iter()
        .map(|&id| (id, max_relative_error(&analytic[id.key()..=id.key()], &numeric[id.key()..=id.key()])))
        .collect();
    let max = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradientReport { per_param, max })
}

/// [`certify_gradients`] at the default step.
pub fn certify_default(seed: u64, variant: Variant) -> Result<GradientReport> {
    certify_gradients(&toy_instance(seed)?, variant, DEFAULT_STEP)
}
