//! Items, compatible pairs, splits, the synthetic lab and file I/O.

mod io;
mod projection;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, sha256_hex};
pub use projection::{project_2d, render_svg, write_projection_csv, ProjectedPoint};
pub use synth::{cheat_bank, synth_generate, Distortion, GroundTruth, SynthConfig};

/// One item: identifier, category and raw feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub category: String,
    pub features: Vec<f64>,
}

/// An unordered compatible pair, as indices into [`Dataset::items`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
}

impl Pair {
    fn key(self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

/// Where a dataset came from. Ground-truth style labels only ever live here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { config: SynthConfig, truth: Box<GroundTruth> },
    Files { items_sha256: String, pairs_sha256: String },
    InMemory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    items: Vec<ItemRecord>,
    by_id: HashMap<String, usize>,
    by_category: BTreeMap<String, Vec<usize>>,
    pairs: Vec<Pair>,
    train: Vec<Pair>,
    test: Vec<Pair>,
    feature_dim: usize,
    pub provenance: Provenance,
}

impl Dataset {
    /// Validates items and pairs. Duplicate unordered pairs are dropped; the
    /// first orientation seen is kept. All pairs start in the test set.
    pub fn new(items: Vec<ItemRecord>, pairs: Vec<Pair>, provenance: Provenance) -> Result<Self> {
        let feature_dim = items.first().map_or(0, |i| i.features.len());
        let mut by_id = HashMap::with_capacity(items.len());
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, it) in items.iter().enumerate() {
            if it.features.len() != feature_dim {
                return Err(Error::invalid(
                    format!("item {}", it.id),
                    format!("has {} features, expected {feature_dim}", it.features.len()),
                ));
            }
            if it.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("item {}", it.id), "non-finite feature"));
            }
            if by_id.insert(it.id.clone(), idx).is_some() {
                return Err(Error::invalid("id", format!("duplicate item id `{}`", it.id)));
            }
            by_category.entry(it.category.clone()).or_default().push(idx);
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.a >= items.len() || p.b >= items.len() {
                return Err(Error::invalid("pair", format!("index out of range: {p:?}")));
            }
            if items[p.a].category == items[p.b].category {
                return Err(Error::invalid(
                    "pair",
                    format!("{} and {} share category {}", items[p.a].id, items[p.b].id, items[p.a].category),
                ));
            }
            if seen.insert(p.key()) {
                kept.push(p);
            }
        }
        Ok(Self {
            test: kept.clone(),
            items,
            by_id,
            by_category,
            pairs: kept,
            train: Vec::new(),
            feature_dim,
            provenance,
        })
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &ItemRecord {
        &self.items[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Category names in sorted order.
    pub fn categories(&self) -> Vec<String> {
        self.by_category.keys().cloned().collect()
    }

    pub fn category_items(&self, category: &str) -> &[usize] {
        self.by_category.get(category).map_or(&[], Vec::as_slice)
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn train_pairs(&self) -> &[Pair] {
        &self.train
    }

    pub fn test_pairs(&self) -> &[Pair] {
        &self.test
    }

    pub fn set_split(&mut self, train: Vec<Pair>, test: Vec<Pair>) -> Result<()> {
        let train_keys: HashSet<_> = train.iter().map(|p| p.key()).collect();
        if test.iter().any(|p| train_keys.contains(&p.key())) {
            return Err(Error::invalid("split", "train and test pairs overlap"));
        }
        self.train = train;
        self.test = test;
        Ok(())
    }

    /// Splits [`Dataset::pairs`] with [`split_pairs`] and installs the result.
    pub fn apply_split(&mut self, seed_permille: f64, test_fraction: f64, rng_seed: u64) -> Result<()> {
        let (train, test) = split_pairs(&self.pairs, seed_permille, test_fraction, rng_seed)?;
        self.set_split(train, test)
    }

    /// Standardizes every feature dimension to zero mean and unit variance over
    /// the corpus. Constant dimensions are only centered. Returns `(mean, std)`.
    pub fn standardize(&mut self) -> (Vec<f64>, Vec<f64>) {
        let (mean, std) = feature_moments(&self.items, self.feature_dim);
        for it in &mut self.items {
            for ((v, m), s) in it.features.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        (mean, std)
    }
}

/// Per-dimension mean and (population) standard deviation; zero deviations are reported as 1.
pub(crate) fn feature_moments(items: &[ItemRecord], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = items.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for it in items {
        for (m, v) in mean.iter_mut().zip(&it.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for it in items {
        for ((s, v), m) in var.iter_mut().zip(&it.features).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    (mean, std)
}

/// How annotated pairs are divided into anchors and held-out test pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed_permille: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { seed_permille: 15.0, test_fraction: 0.2, seed: 0 }
    }
}

impl Dataset {
    pub fn apply_split_config(&mut self, split: &SplitConfig) -> Result<()> {
        self.apply_split(split.seed_permille, split.test_fraction, split.seed)
    }
}

/// Disjoint uniform random train/test selection.
///
/// The test set has `floor(n·test_fraction)` pairs and the train set
/// `floor(n·seed_permille/1000)` pairs. A fixed `rng_seed` gives the same
/// test set for every `seed_permille`, and train sets nested by size.
pub fn split_pairs<T: Clone>(
    pairs: &[T],
    seed_permille: f64,
    test_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(seed_permille >= 0.0) || !seed_permille.is_finite() {
        return Err(Error::invalid("seed_permille", format!("must be non-negative, got {seed_permille}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", format!("must lie in (0, 1), got {test_fraction}")));
    }
    let n = pairs.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let n_train = (n as f64 * seed_permille / 1000.0).floor() as usize;
    if n_test + n_train > n {
        return Err(Error::invalid(
            "split",
            format!("{n_train} train + {n_test} test pairs exceed the {n} available"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let test = order[..n_test].iter().map(|&i| pairs[i].clone()).collect();
    let train = order[n_test..n_test + n_train].iter().map(|&i| pairs[i].clone()).collect();
    Ok((train, test))
}
