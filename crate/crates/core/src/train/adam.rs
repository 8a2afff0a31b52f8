use crate::error::{Error, Result};
use crate::kernel::Tensor;
use crate::model::{ModelParams, ParamId, UpdateGroup};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moments and step count of one update group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    group: UpdateGroup,
    members: Vec<ParamId>,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(group: UpdateGroup, params: &ModelParams) -> Self {
        let members: Vec<ParamId> = group.members().collect();
        let zeros = || members.iter().map(|&id| Tensor::zeros(params[id].shape())).collect();
        Self { group, m: zeros(), v: zeros(), members, step: 0 }
    }

    pub fn group(&self) -> UpdateGroup {
        self.group
    }

    pub fn members(&self) -> &[ParamId] {
        &self.members
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

/// One bias-corrected Adam update of the parameters in `state`'s group.
/// `grads` is laid out in [`ParamId::ALL`] order. With `freeze_embeddings`
/// the word vectors are left alone; the `pad` embedding row is kept at zero.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    freeze_embeddings: bool,
    pad: Option<usize>,
) -> Result<()> {
    for &id in &state.members {
        let g = &grads[id.key()];
        if g.shape() != params[id].shape() {
            return Err(Error::Shape(format!("{} gradient {:?} vs {:?}", id.name(), g.shape(), params[id].shape())));
        }
        if !g.is_finite() {
            return Err(Error::Divergence { batch: 0 });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, &id) in state.members.iter().enumerate() {
        if freeze_embeddings && id == ParamId::WordEmbeddings {
            continue;
        }
        let g = grads[id.key()].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let p = params[id].data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        if id == ParamId::WordEmbeddings {
            super::zero_row(&mut params[id], pad);
        }
    }
    Ok(())
}
