//! Comparison methods (NN, CT, LMT) and the ablation presets.

mod ct;
mod lmt;
mod pca;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub use ct::{ct_score, CoocTable};
pub use lmt::{lmt_loss, lmt_score, lmt_train, LmtConfig, LmtFit};
pub use pca::{nn_score, pca_fit, PcaModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "minus_O")]
    MinusO,
    #[serde(rename = "minus_A")]
    MinusA,
    #[serde(rename = "one_G")]
    OneG,
    #[serde(rename = "uc")]
    Uc,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Full, Preset::MinusO, Preset::MinusA, Preset::OneG, Preset::Uc];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::MinusO => "minus_O",
            Preset::MinusA => "minus_A",
            Preset::OneG => "one_G",
            Preset::Uc => "uc",
        }
    }

    /// Applies this preset's single change to `base`.
    pub fn apply(self, mut base: TrainConfig) -> TrainConfig {
        match self {
            Preset::Full => {}
            Preset::MinusO => base.lambda = 0.0,
            Preset::MinusA => base.adversarial = false,
            Preset::OneG => base.shared_generator = true,
            Preset::Uc => base.eta = 0.0,
        }
        base
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid("preset", format!("unknown preset `{s}` (expected full, minus_O, minus_A, one_G or uc)")))
    }
}

/// The default [`TrainConfig`] with the named ablation applied.
pub fn ablation_preset(name: &str) -> Result<TrainConfig> {
    Ok(name.parse::<Preset>()?.apply(TrainConfig::default()))
}
