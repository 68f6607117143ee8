//! JSON model container shared by the main model and the baselines.
//!
//! ```json
//! {
//!   "format": "stylematch-checkpoint",
//!   "version": 1,
//!   "model": { "method": "scgan", "bank": { ... }, "critic": { ... } },
//!   "train_config": { ... }
//! }
//! ```
//!
//! `method` is one of `scgan`, `nn`, `ct`, `lmt`. Floats are written with
//! shortest round-trip formatting, so save → load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{CoocTable, PcaModel};
use crate::error::{Error, Result};
use crate::model::{Critic, GeneratorBank};
use crate::numcore::Matrix;
use crate::trainer::TrainConfig;

pub const FORMAT: &str = "stylematch-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CheckpointModel {
    Scgan { bank: GeneratorBank, critic: Critic },
    Nn { pca: PcaModel },
    Ct { table: CoocTable },
    Lmt { matrix: Matrix },
}

impl CheckpointModel {
    pub fn method(&self) -> &'static str {
        match self {
            CheckpointModel::Scgan { .. } => "scgan",
            CheckpointModel::Nn { .. } => "nn",
            CheckpointModel::Ct { .. } => "ct",
            CheckpointModel::Lmt { .. } => "lmt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: CheckpointModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(model: CheckpointModel, train_config: Option<TrainConfig>) -> Self {
        Self { format: FORMAT.to_string(), version: VERSION, model, train_config }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::invalid("format", format!("expected `{FORMAT}`, found `{}`", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::invalid("version", format!("unsupported checkpoint version {}", ck.version)));
        }
        if let CheckpointModel::Scgan { bank, critic } = &ck.model {
            let shape = (bank.style_dim(), bank.feature_dim());
            for s in 0..bank.slots() {
                if bank.matrix_at(s).shape() != shape {
                    return Err(Error::invalid("bank", format!("matrix {s} is not {shape:?}")));
                }
            }
            for c in bank.categories() {
                if bank.slot(c)? >= bank.slots() {
                    return Err(Error::invalid("bank", format!("category {c} points past the matrix list")));
                }
            }
            if critic.input_dim() != bank.style_dim() {
                return Err(Error::invalid("critic", "input width differs from the style dimension"));
            }
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, ck.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::init_model;

    #[test]
    fn round_trip_is_exact() {
        let ds = synth_generate(&SynthConfig { items_per_category: 20, ..SynthConfig::default() }).unwrap();
        let cfg = TrainConfig { style_dim: 9, critic_hidden: vec![5], ..TrainConfig::default() };
        let (bank, critic) = init_model(&cfg, &ds.categories(), ds.feature_dim(), 3).unwrap();
        let ck = Checkpoint::new(CheckpointModel::Scgan { bank, critic }, Some(cfg));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let table = CoocTable::from_counts(vec!["a".into(), "b".into()], &[("a", "b", 2.0)], 1.0);
        let ck = Checkpoint::new(CheckpointModel::Ct { table }, None);
        assert_eq!(Checkpoint::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }

    #[test]
    fn wrong_format_rejected() {
        let ck = Checkpoint::new(CheckpointModel::Lmt { matrix: Matrix::identity(2) }, None);
        let text = ck.to_json().unwrap().replace(FORMAT, "other");
        assert!(Checkpoint::from_json(&text).unwrap_err().is_validation());
    }
}
