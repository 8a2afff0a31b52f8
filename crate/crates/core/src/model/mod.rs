//! The rating model: aspect scores from latent factors, importance from
//! review text, attention offsets between the two polarities and the
//! preferred-minus-rejected prediction.

mod entities;
mod forward;
mod params;
mod toy;
mod variant;

use serde::{Deserialize, Serialize};

use crate::corpus::PolarityDocuments;
use crate::error::{Error, Result};
use crate::kernel::{ops, Tensor};

pub use entities::{EntityIndex, Example};
pub use forward::{dense_grads, forward_backward, loss, BatchOutput};
pub use params::{ModelDims, ModelParams, ParamId, UpdateGroup};
pub use toy::{
    certify_default, certify_gradients, kink_distance, toy_dims, toy_instance, GradientReport, ToyInstance, KINK_MARGIN,
    TOY_DOC_LEN,
};
pub use variant::{ModelOptions, RegConfig, Variant};

/// Which half of the model a document, head or aspect set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Preferred,
    Rejected,
}

impl Polarity {
    pub fn head(self) -> (ParamId, ParamId) {
        match self {
            Polarity::Preferred => (ParamId::PreferredHeadWeight, ParamId::PreferredHeadBias),
            Polarity::Rejected => (ParamId::RejectedHeadWeight, ParamId::RejectedHeadBias),
        }
    }

    pub fn indicators(self) -> ParamId {
        match self {
            Polarity::Preferred => ParamId::PreferredIndicators,
            Polarity::Rejected => ParamId::RejectedIndicators,
        }
    }

    pub fn aspects(self, dims: &ModelDims) -> usize {
        match self {
            Polarity::Preferred => dims.preferred_aspects,
            Polarity::Rejected => dims.rejected_aspects,
        }
    }

    /// The user's document feeding this side.
    pub fn document(self, docs: &PolarityDocuments) -> &[usize] {
        match self {
            Polarity::Preferred => &docs.positive,
            Polarity::Rejected => &docs.negative,
        }
    }
}

/// Orientation of an attention map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `Φ`, `|P| × |R|`: column `y` distributes rejected aspect `y` over the
    /// preferred aspects.
    RejectedAttendsPreferred,
    /// `Ψ`, `|R| × |P|`: column `x` distributes preferred aspect `x` over the
    /// rejected aspects.
    PreferredAttendsRejected,
}

pub fn uniform(n: usize) -> Tensor {
    Tensor::full(&[n], 1.0 / n as f64)
}

/// `(Mᵀ(p ⊙ q), Vᵀ(p ⊙ q))`.
pub fn aspect_scores(p_u: &Tensor, q_i: &Tensor, m: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let pq = ops::elementwise_product(p_u, q_i)?;
    Ok((ops::mat_t_vec(m, &pq)?, ops::mat_t_vec(v, &pq)?))
}

/// Per-word aspect weights `ReLU(W c_j + b)`, one row per token.
pub fn word_weights(params: &ModelParams, doc: &[usize], side: Polarity) -> Result<Tensor> {
    let (w, b) = side.head();
    let dims = params.dims();
    let emb = ops::gather_rows(&params[ParamId::WordEmbeddings], doc)?;
    let ctx = ops::conv_context(&emb, &params[ParamId::ConvKernel], &params[ParamId::ConvBias], dims.kernel_width, None)?;
    ops::linear_relu(&ctx, &params[w], &params[b])
}

/// Importance over one side's aspects. Empty documents give the uniform
/// distribution.
pub fn extract_importance(params: &ModelParams, doc: &[usize], side: Polarity, variant: Variant) -> Result<Tensor> {
    let aspects = side.aspects(params.dims());
    if doc.is_empty() {
        return Ok(uniform(aspects));
    }
    let (w, b) = side.head();
    if variant == Variant::CoarseGrained {
        let dims = params.dims();
        let emb = ops::gather_rows(&params[ParamId::WordEmbeddings], doc)?;
        let ctx =
            ops::conv_context(&emb, &params[ParamId::ConvKernel], &params[ParamId::ConvBias], dims.kernel_width, None)?;
        let (pooled, _) = ops::max_rows(&ctx)?;
        return ops::softmax(&ops::linear_relu(&pooled, &params[w], &params[b])?);
    }
    ops::softmax(&ops::sum_rows(&word_weights(params, doc, side)?)?)
}

/// Attention logits `L`, `|P| × |R|`, with `L[x][y] = h_aᵀ ReLU(W_a(v_y ⊙ m_x) + b_a)`.
pub fn attention_logits(params: &ModelParams) -> Result<Tensor> {
    let d = params.dims();
    let pairs = ops::pair_products(&params[ParamId::PreferredIndicators], &params[ParamId::RejectedIndicators])?;
    let hidden = ops::linear_relu(&pairs, &params[ParamId::AttentionWeight], &params[ParamId::AttentionBias])?;
    let h = params[ParamId::AttentionVector].clone().reshape(vec![1, d.attention_hidden])?;
    ops::linear(&hidden, &h, None)?.reshape(vec![d.preferred_aspects, d.rejected_aspects])
}

pub fn attention_map(params: &ModelParams, direction: Direction) -> Result<Tensor> {
    let logits = attention_logits(params)?;
    match direction {
        Direction::RejectedAttendsPreferred => ops::softmax_cols(&logits),
        Direction::PreferredAttendsRejected => Ok(ops::softmax_rows(&logits)?.transpose()),
    }
}

/// Importance after the attention offset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Enhanced {
    pub rho_p_plus: Tensor,
    pub rho_r_plus: Tensor,
    pub mu_p: Tensor,
    pub mu_r: Tensor,
}

/// `μ^r = Φᵀρ^p`, `μ^p = Ψᵀρ^r`, each added to its own side.
pub fn enhance_importance(rho_p: &Tensor, rho_r: &Tensor, phi: &Tensor, psi: &Tensor) -> Result<Enhanced> {
    let mu_r = ops::mat_t_vec(phi, rho_p)?;
    let mu_p = ops::mat_t_vec(psi, rho_r)?;
    Ok(Enhanced { rho_p_plus: add(rho_p, &mu_p)?, rho_r_plus: add(rho_r, &mu_r)?, mu_p, mu_r })
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// `ρ^{p+}·s^p − ρ^{r+}·s^r`, unclipped.
pub fn predict_rating(rho_p_plus: &Tensor, s_p: &Tensor, rho_r_plus: &Tensor, s_r: &Tensor) -> Result<f64> {
    Ok(ops::dot(rho_p_plus, s_p)?.item() - ops::dot(rho_r_plus, s_r)?.item())
}

/// A user's raw and enhanced importance on both sides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserImportance {
    pub rho_p: Tensor,
    pub rho_r: Tensor,
    pub mu_p: Tensor,
    pub mu_r: Tensor,
    pub rho_p_plus: Tensor,
    pub rho_r_plus: Tensor,
}

/// Everything the model computes for one `(user, item)` pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AspectProfile {
    pub s_p: Tensor,
    pub s_r: Tensor,
    pub rho_p: Tensor,
    pub rho_r: Tensor,
    pub mu_p: Tensor,
    pub mu_r: Tensor,
    pub rho_p_plus: Tensor,
    pub rho_r_plus: Tensor,
    pub r_hat: f64,
}

impl AspectProfile {
    pub fn positive_term(&self) -> f64 {
        self.rho_p_plus.data().iter().zip(self.s_p.data()).fold(0.0, |acc, (a, b)| acc + a * b)
    }

    pub fn negative_term(&self) -> f64 {
        self.rho_r_plus.data().iter().zip(self.s_r.data()).fold(0.0, |acc, (a, b)| acc + a * b)
    }
}

/// Inference over a frozen parameter snapshot. Dropout never applies here.
#[derive(Clone, Debug)]
pub struct Predictor<'a> {
    params: &'a ModelParams,
    variant: Variant,
    phi: Tensor,
    psi: Tensor,
}

impl<'a> Predictor<'a> {
    pub fn new(params: &'a ModelParams, variant: Variant) -> Result<Self> {
        let logits = attention_logits(params)?;
        let phi = ops::softmax_cols(&logits)?;
        let psi = ops::softmax_rows(&logits)?.transpose();
        Ok(Self { params, variant, phi, psi })
    }

    /// Uses the given `Φ` (`|P| × |R|`) and `Ψ` (`|R| × |P|`) in place of
    /// the attention net's maps. Only meaningful for offset-using variants.
    pub fn with_maps(params: &'a ModelParams, variant: Variant, phi: Tensor, psi: Tensor) -> Result<Self> {
        let d = params.dims();
        if phi.shape() != [d.preferred_aspects, d.rejected_aspects]
            || psi.shape() != [d.rejected_aspects, d.preferred_aspects]
        {
            return Err(Error::Shape(format!("attention maps {:?} / {:?}", phi.shape(), psi.shape())));
        }
        Ok(Self { params, variant, phi, psi })
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn phi(&self) -> &Tensor {
        &self.phi
    }

    pub fn psi(&self) -> &Tensor {
        &self.psi
    }

    pub fn importance(&self, docs: &PolarityDocuments) -> Result<UserImportance> {
        let d = self.params.dims();
        if self.variant == Variant::UniformImportance {
            let (p, r) = (uniform(d.preferred_aspects), uniform(d.rejected_aspects));
            return Ok(UserImportance {
                mu_p: Tensor::zeros(&[d.preferred_aspects]),
                mu_r: Tensor::zeros(&[d.rejected_aspects]),
                rho_p_plus: p.clone(),
                rho_r_plus: r.clone(),
                rho_p: p,
                rho_r: r,
            });
        }
        let rho_p = extract_importance(self.params, Polarity::Preferred.document(docs), Polarity::Preferred, self.variant)?;
        let rho_r = extract_importance(self.params, Polarity::Rejected.document(docs), Polarity::Rejected, self.variant)?;
        if !self.variant.uses_offset() {
            return Ok(UserImportance {
                mu_p: Tensor::zeros(&[d.preferred_aspects]),
                mu_r: Tensor::zeros(&[d.rejected_aspects]),
                rho_p_plus: rho_p.clone(),
                rho_r_plus: rho_r.clone(),
                rho_p,
                rho_r,
            });
        }
        let e = enhance_importance(&rho_p, &rho_r, &self.phi, &self.psi)?;
        Ok(UserImportance { rho_p, rho_r, mu_p: e.mu_p, mu_r: e.mu_r, rho_p_plus: e.rho_p_plus, rho_r_plus: e.rho_r_plus })
    }

    pub fn profile(&self, user: usize, item: usize, imp: &UserImportance) -> Result<AspectProfile> {
        let p = &self.params[ParamId::UserFactors];
        let q = &self.params[ParamId::ItemFactors];
        if user >= p.rows() {
            return Err(Error::Index { id: user, rows: p.rows() });
        }
        if item >= q.rows() {
            return Err(Error::Index { id: item, rows: q.rows() });
        }
        let p_u = Tensor::vector(p.row(user).to_vec());
        let q_i = Tensor::vector(q.row(item).to_vec());
        let (s_p, s_r) = aspect_scores(
            &p_u,
            &q_i,
            &self.params[ParamId::PreferredIndicators],
            &self.params[ParamId::RejectedIndicators],
        )?;
        let r_hat = predict_rating(&imp.rho_p_plus, &s_p, &imp.rho_r_plus, &s_r)?;
        Ok(AspectProfile {
            s_p,
            s_r,
            rho_p: imp.rho_p.clone(),
            rho_r: imp.rho_r.clone(),
            mu_p: imp.mu_p.clone(),
            mu_r: imp.mu_r.clone(),
            rho_p_plus: imp.rho_p_plus.clone(),
            rho_r_plus: imp.rho_r_plus.clone(),
            r_hat,
        })
    }

    pub fn predict(&self, docs: &PolarityDocuments, user: usize, item: usize) -> Result<AspectProfile> {
        self.profile(user, item, &self.importance(docs)?)
    }
}

#[cfg(test)]
mod tests;
