//! The experiment file: one strict JSON document with `data`, `train`,
//! `eval`, `baselines` and `output` sections.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use stylematch::baselines::LmtConfig;
use stylematch::{EvalOptions, SplitConfig, SynthConfig, TrainConfig};

/// Bad user input. Maps to exit code 2.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    /// Negative sampling for every reported AUC, including training checkpoints.
    pub eval: EvalOptions,
    pub baselines: BaselineSection,
    pub output: OutputSection,
}

/// Either a synthetic corpus or an items/pairs file pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// `provenance.json` from `synth`; enables the cheat oracle and style labels for file data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<PathBuf>,
    /// Standardize features after loading files. Synthetic data is standardized by its own config.
    pub standardize: bool,
    pub split: SplitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// PCA dimension for NN; defaults to the effective style dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_dim: Option<usize>,
    pub ct_smoothing: f64,
    pub lmt: LmtConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { nn_dim: None, ct_smoothing: 1.0, lmt: LmtConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub pair_scores: bool,
    pub svg: bool,
    /// Save the model at every training checkpoint under `models/`.
    pub checkpoint_models: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default"), pair_scores: true, svg: true, checkpoint_models: false }
    }
}

/// Overrides coming from command-line flags.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub set: Vec<String>,
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("--set: malformed key `{key}`")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| invalid(format!("--set: `{key}` crosses a non-object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    let obj = cur.as_object_mut().ok_or_else(|| invalid(format!("--set: `{key}` crosses a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key.path=value` assignments. Values parse as JSON, falling back to a string.
pub fn apply_sets(root: &mut Value, sets: &[String]) -> Result<()> {
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(root, k.trim(), value)?;
    }
    Ok(())
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    /// Reads, overrides, parses strictly, fills defaults and validates.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut raw = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !raw.is_object() {
            return Err(invalid("config: top level must be a JSON object"));
        }
        apply_sets(&mut raw, &ov.set)?;
        let mut cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| invalid(format!("config: {e}")))?;

        let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        rebase(&base, &mut cfg.data.items);
        rebase(&base, &mut cfg.data.pairs);
        rebase(&base, &mut cfg.data.provenance);
        if let Some(out) = &ov.out {
            cfg.output.dir = out.clone();
        } else if cfg.output.dir.is_relative() && path.is_some() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }

        match (&cfg.data.items, &cfg.data.pairs, &cfg.data.synth) {
            (None, None, None) => cfg.data.synth = Some(SynthConfig::default()),
            (None, None, Some(_)) | (Some(_), Some(_), None) => {}
            (Some(_), Some(_), Some(_)) => return Err(invalid("data: give either `synth` or `items`/`pairs`, not both")),
            _ => return Err(invalid("data: `items` and `pairs` must be given together")),
        }
        if let Some(seed) = ov.seed {
            if let Some(s) = &mut cfg.data.synth {
                s.seed = seed;
            }
            cfg.data.split.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.train.eval = cfg.eval;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, e: stylematch::Error| invalid(format!("{section}: {e}"));
        if let Some(s) = &self.data.synth {
            s.validate().map_err(|e| wrap("data.synth", e))?;
        }
        let split = &self.data.split;
        if !(split.seed_permille >= 0.0 && split.seed_permille.is_finite()) {
            return Err(invalid(format!("data.split: invalid seed_permille: {}", split.seed_permille)));
        }
        if !(split.test_fraction > 0.0 && split.test_fraction < 1.0) {
            return Err(invalid(format!("data.split: invalid test_fraction: must lie in (0, 1), got {}", split.test_fraction)));
        }
        self.train.validate().map_err(|e| wrap("train", e))?;
        if !(self.baselines.ct_smoothing >= 0.0 && self.baselines.ct_smoothing.is_finite()) {
            return Err(invalid("baselines: invalid ct_smoothing: must be non-negative"));
        }
        if self.baselines.nn_dim == Some(0) {
            return Err(invalid("baselines: invalid nn_dim: must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
