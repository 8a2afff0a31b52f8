use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Model wiring. `Base` is the full model; the others are the ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Base,
    /// Max-pool the contextual features over word positions, then one head
    /// application, instead of summing per-word contributions.
    CoarseGrained,
    /// One merged document per user feeds both heads.
    NoPolarity,
    /// Enhanced importance replaced with uniform vectors.
    UniformImportance,
    /// Raw importance used directly (no attention offset).
    NoOffset,
}

impl Variant {
    /// Base first, then the ablations in their reporting order.
    pub const ALL: [Variant; 5] =
        [Variant::Base, Variant::CoarseGrained, Variant::NoPolarity, Variant::UniformImportance, Variant::NoOffset];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::CoarseGrained => "coarse_grained",
            Variant::NoPolarity => "no_polarity",
            Variant::UniformImportance => "uniform_importance",
            Variant::NoOffset => "no_offset",
        }
    }

    pub fn uses_offset(self) -> bool {
        !matches!(self, Variant::NoOffset | Variant::UniformImportance)
    }

    pub fn merged_documents(self) -> bool {
        self == Variant::NoPolarity
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Switches that change the computation but not the parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub variant: Variant,
    /// Drop probability after the convolution and head layers, training only.
    pub dropout: f64,
    pub train_embeddings: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { variant: Variant::Base, dropout: 0.0, train_embeddings: true }
    }
}

/// Regularisation weights: L1 on the indicator matrices, squared L2 on the
/// touched latent rows and the network weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub beta1: f64,
    pub beta2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("fancy".parse::<Variant>(), Err(Error::Config(_))));
    }
}
