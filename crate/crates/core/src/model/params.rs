use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ParamSet, Tensor};

/// Every size that fixes the shapes of [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_items: usize,
    /// Latent factor dimension `f`.
    pub factors: usize,
    pub preferred_aspects: usize,
    pub rejected_aspects: usize,
    pub filters: usize,
    /// Convolution window width, odd.
    pub kernel_width: usize,
    pub embedding_dim: usize,
    pub attention_hidden: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("factors", self.factors),
            ("preferred_aspects", self.preferred_aspects),
            ("rejected_aspects", self.rejected_aspects),
            ("filters", self.filters),
            ("kernel_width", self.kernel_width),
            ("embedding_dim", self.embedding_dim),
            ("attention_hidden", self.attention_hidden),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!("kernel_width {} must be odd", self.kernel_width)));
        }
        Ok(())
    }

    /// Expected shape of each parameter.
    pub fn shape(&self, id: ParamId) -> Vec<usize> {
        use ParamId::*;
        match id {
            UserFactors => vec![self.n_users, self.factors],
            ItemFactors => vec![self.n_items, self.factors],
            PreferredIndicators => vec![self.factors, self.preferred_aspects],
            RejectedIndicators => vec![self.factors, self.rejected_aspects],
            ConvKernel => vec![self.filters, self.kernel_width * self.embedding_dim],
            ConvBias => vec![self.filters],
            PreferredHeadWeight => vec![self.preferred_aspects, self.filters],
            PreferredHeadBias => vec![self.preferred_aspects],
            RejectedHeadWeight => vec![self.rejected_aspects, self.filters],
            RejectedHeadBias => vec![self.rejected_aspects],
            AttentionWeight => vec![self.attention_hidden, self.factors],
            AttentionBias => vec![self.attention_hidden],
            AttentionVector => vec![self.attention_hidden],
            WordEmbeddings => vec![self.vocab_size, self.embedding_dim],
        }
    }
}

/// Identity of every learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    /// `P`, one latent row per user.
    UserFactors,
    /// `Q`, one latent row per item.
    ItemFactors,
    /// `M`, `f × |preferred|`; column `x` ties latent factors to preferred aspect `x`.
    PreferredIndicators,
    /// `V`, `f × |rejected|`.
    RejectedIndicators,
    ConvKernel,
    ConvBias,
    PreferredHeadWeight,
    PreferredHeadBias,
    RejectedHeadWeight,
    RejectedHeadBias,
    AttentionWeight,
    AttentionBias,
    AttentionVector,
    WordEmbeddings,
}

impl ParamId {
    pub const ALL: [ParamId; 14] = [
        ParamId::UserFactors,
        ParamId::ItemFactors,
        ParamId::PreferredIndicators,
        ParamId::RejectedIndicators,
        ParamId::ConvKernel,
        ParamId::ConvBias,
        ParamId::PreferredHeadWeight,
        ParamId::PreferredHeadBias,
        ParamId::RejectedHeadWeight,
        ParamId::RejectedHeadBias,
        ParamId::AttentionWeight,
        ParamId::AttentionBias,
        ParamId::AttentionVector,
        ParamId::WordEmbeddings,
    ];

    /// Parameters regularised with the squared L2 norm as a whole (the
    /// extractor, both heads and the attention net).
    pub const THETA: [ParamId; 9] = [
        ParamId::ConvKernel,
        ParamId::ConvBias,
        ParamId::PreferredHeadWeight,
        ParamId::PreferredHeadBias,
        ParamId::RejectedHeadWeight,
        ParamId::RejectedHeadBias,
        ParamId::AttentionWeight,
        ParamId::AttentionBias,
        ParamId::AttentionVector,
    ];

    pub fn key(self) -> usize {
        self as usize
    }

    pub fn from_key(key: usize) -> Option<ParamId> {
        Self::ALL.get(key).copied()
    }

    pub fn name(self) -> &'static str {
        use ParamId::*;
        match self {
            UserFactors => "user_factors",
            ItemFactors => "item_factors",
            PreferredIndicators => "preferred_indicators",
            RejectedIndicators => "rejected_indicators",
            ConvKernel => "conv_kernel",
            ConvBias => "conv_bias",
            PreferredHeadWeight => "preferred_head_weight",
            PreferredHeadBias => "preferred_head_bias",
            RejectedHeadWeight => "rejected_head_weight",
            RejectedHeadBias => "rejected_head_bias",
            AttentionWeight => "attention_weight",
            AttentionBias => "attention_bias",
            AttentionVector => "attention_vector",
            WordEmbeddings => "word_embeddings",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::ConvBias | ParamId::PreferredHeadBias | ParamId::RejectedHeadBias | ParamId::AttentionBias
        )
    }

    /// Update group, in the order the optimiser visits them.
    pub fn group(self) -> UpdateGroup {
        match self {
            ParamId::UserFactors => UpdateGroup::Users,
            ParamId::ItemFactors => UpdateGroup::Items,
            ParamId::PreferredIndicators | ParamId::RejectedIndicators => UpdateGroup::Indicators,
            _ => UpdateGroup::Remaining,
        }
    }
}

/// The four sequential optimisation groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UpdateGroup {
    Users,
    Items,
    Indicators,
    Remaining,
}

impl UpdateGroup {
    pub const ORDER: [UpdateGroup; 4] =
        [UpdateGroup::Users, UpdateGroup::Items, UpdateGroup::Indicators, UpdateGroup::Remaining];

    pub fn members(self) -> impl Iterator<Item = ParamId> {
        ParamId::ALL.into_iter().filter(move |p| p.group() == self)
    }
}

/// All learnable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = ParamId::ALL.iter().map(|&p| Tensor::zeros(&dims.shape(p))).collect();
        Ok(Self { dims, tensors })
    }

    /// Assembles parameters from tensors in [`ParamId::ALL`] order,
    /// checking each shape.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", ParamId::ALL.len(), tensors.len())));
        }
        for (&p, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != dims.shape(p).as_slice() {
                return Err(Error::Shape(format!(
                    "{}: shape {:?}, expected {:?}",
                    p.name(),
                    t.shape(),
                    dims.shape(p)
                )));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        ParamId::ALL.iter().copied().zip(&self.tensors)
    }

    /// Replaces one tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.tensors[id.key()].shape() {
            return Err(Error::Shape(format!(
                "{}: cannot replace {:?} with {:?}",
                id.name(),
                self.tensors[id.key()].shape(),
                value.shape()
            )));
        }
        self.tensors[id.key()] = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Every entry, biases included, uniform in `[-bound, bound]`. Used for
    /// toy instances where all coordinates should be exercised.
    pub fn random_uniform(dims: ModelDims, seed: u64, bound: f64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut p.tensors {
            for x in t.data_mut() {
                *x = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }
}

impl Index<ParamId> for ModelParams {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.key()]
    }
}

impl IndexMut<ParamId> for ModelParams {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.key()]
    }
}

impl ParamSet for ModelParams {
    fn tensor_count(&self) -> usize {
        self.tensors.len()
    }
    fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }
}
