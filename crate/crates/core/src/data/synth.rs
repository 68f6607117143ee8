//! Planted-style synthetic corpus.
//!
//! Items are organised in latent outfits. Every outfit has a style (one of
//! `n_styles` cluster centres) and a latent code `z = centre + jitter`. Each
//! category renders the outfit through its own distortion
//! `v = scale_c · Q_c z + noise`, with `Q_c` an `F x k` matrix of orthonormal
//! columns. Compatible pairs connect items of the same outfit in different
//! categories. Features are standardized per dimension afterwards.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{feature_moments, Dataset, ItemRecord, Pair, Provenance};
use crate::error::{Error, Result};
use crate::model::{random_orthonormal_rows, GeneratorBank};
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// Random orthonormal embedding and a scale drawn from `scale_range`.
    #[default]
    Random,
    /// Embeds the latent code in the first `k` feature dimensions, scale 1.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub items_per_category: usize,
    pub n_styles: usize,
    pub style_dim_true: usize,
    pub feature_dim: usize,
    pub distortion: Distortion,
    pub scale_range: [f64; 2],
    /// Norm of a latent mean shared by all styles. Each category's distortion
    /// moves it somewhere else, which is what separates categories in raw features.
    pub latent_offset: f64,
    /// Standard deviation of the outfit code around its style centre.
    pub style_spread: f64,
    pub noise_sigma: f64,
    /// Probability that a same-outfit cross-category candidate becomes a pair.
    pub pair_density: f64,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_categories: 4,
            items_per_category: 500,
            n_styles: 6,
            style_dim_true: 16,
            feature_dim: 64,
            distortion: Distortion::Random,
            scale_range: [0.5, 2.0],
            latent_offset: 4.0,
            style_spread: 0.5,
            noise_sigma: 0.1,
            pair_density: 2.0 / 3.0,
            standardize: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_categories < 2 {
            return Err(Error::invalid("n_categories", "need at least 2 categories"));
        }
        if self.items_per_category == 0 {
            return Err(Error::invalid("items_per_category", "must be positive"));
        }
        if self.n_styles < 2 {
            return Err(Error::invalid("n_styles", format!("must be at least 2, got {}", self.n_styles)));
        }
        if self.style_dim_true == 0 || self.style_dim_true > self.feature_dim {
            return Err(Error::invalid(
                "style_dim_true",
                format!("must lie in 1..={} (feature_dim), got {}", self.feature_dim, self.style_dim_true),
            ));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("scale_range", format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma", "must be non-negative"));
        }
        if !(self.latent_offset >= 0.0) || !self.latent_offset.is_finite() {
            return Err(Error::invalid("latent_offset", "must be non-negative"));
        }
        if !(self.style_spread >= 0.0) || !self.style_spread.is_finite() {
            return Err(Error::invalid("style_spread", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.pair_density) {
            return Err(Error::invalid("pair_density", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything the generator knows and training never sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted style of every item, by id.
    pub styles: BTreeMap<String, usize>,
    /// Outfit of every item, by id.
    pub outfits: BTreeMap<String, usize>,
    /// Per category: `k x F` matrix whose rows span the category's signal subspace (`Q_cᵀ`).
    pub embeddings: BTreeMap<String, Matrix>,
    pub scales: BTreeMap<String, f64>,
    /// Standardization applied after rendering (identity when disabled).
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

fn category_name(c: usize) -> String {
    format!("cat{c}")
}

pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let k = config.style_dim_true;
    let f = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // style centres, recentred on the shared latent mean
    let mut centres: Vec<Vec<f64>> =
        (0..config.n_styles).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let dir: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for d in 0..k {
        let m = centres.iter().map(|c| c[d]).sum::<f64>() / config.n_styles as f64;
        let shift = config.latent_offset * dir[d] / norm;
        centres.iter_mut().for_each(|c| c[d] += shift - m);
    }

    let n_outfits = config.items_per_category;
    let styles: Vec<usize> = (0..n_outfits).map(|_| rng.random_range(0..config.n_styles)).collect();
    let codes: Vec<Vec<f64>> = styles
        .iter()
        .map(|&s| centres[s].iter().map(|&c| c + config.style_spread * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let mut embeddings = BTreeMap::new();
    let mut scales = BTreeMap::new();
    for c in 0..config.n_categories {
        let (q_t, scale) = match config.distortion {
            Distortion::Random => {
                let q_t = random_orthonormal_rows(k, f, &mut rng)?;
                let [lo, hi] = config.scale_range;
                (q_t, if hi > lo { rng.random_range(lo..=hi) } else { lo })
            }
            Distortion::Identity => {
                let mut q_t = Matrix::zeros(k, f);
                (0..k).for_each(|i| q_t.set(i, i, 1.0));
                (q_t, 1.0)
            }
        };
        embeddings.insert(category_name(c), q_t);
        scales.insert(category_name(c), scale);
    }

    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let mut items = Vec::with_capacity(n_outfits * config.n_categories);
    // item index of outfit o in category c
    let mut slot = vec![vec![0usize; n_outfits]; config.n_categories];
    let mut truth_styles = BTreeMap::new();
    let mut truth_outfits = BTreeMap::new();
    for (c, slot_c) in slot.iter_mut().enumerate() {
        let name = category_name(c);
        let q_t = &embeddings[&name];
        let scale = scales[&name];
        let mut order: Vec<usize> = (0..n_outfits).collect();
        order.shuffle(&mut rng);
        for (pos, &o) in order.iter().enumerate() {
            let mut v = vec![0.0; f];
            for (latent, q_row) in codes[o].iter().zip((0..k).map(|i| q_t.row(i))) {
                for (dst, q) in v.iter_mut().zip(q_row) {
                    *dst += scale * latent * q;
                }
            }
            if config.noise_sigma > 0.0 {
                v.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            }
            let id = format!("{name}-{pos:04}");
            truth_styles.insert(id.clone(), styles[o]);
            truth_outfits.insert(id.clone(), o);
            slot_c[o] = items.len();
            items.push(ItemRecord { id, category: name.clone(), features: v });
        }
    }

    let mut pairs = Vec::new();
    for o in 0..n_outfits {
        for ci in 0..config.n_categories {
            for cj in ci + 1..config.n_categories {
                if rng.random::<f64>() < config.pair_density {
                    pairs.push(Pair { a: slot[ci][o], b: slot[cj][o] });
                }
            }
        }
    }

    let (feature_mean, feature_std) = if config.standardize {
        let (mean, std) = feature_moments(&items, f);
        for it in &mut items {
            for ((v, m), s) in it.features.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        (mean, std)
    } else {
        (vec![0.0; f], vec![1.0; f])
    };

    let truth = GroundTruth {
        styles: truth_styles,
        outfits: truth_outfits,
        embeddings,
        scales,
        feature_mean,
        feature_std,
    };
    Dataset::new(items, pairs, Provenance::Synthetic { config: config.clone(), truth: Box::new(truth) })
}

/// The ground-truth inversion: `G_c = Q_cᵀ · diag(std) / scale_c`, mapping every
/// item back onto its latent outfit code (up to noise and the standardization offset).
pub fn cheat_bank(truth: &GroundTruth) -> Result<GeneratorBank> {
    let mut mats = BTreeMap::new();
    for (cat, q_t) in &truth.embeddings {
        let scale = truth.scales[cat];
        let mut g = q_t.clone();
        for r in 0..g.rows() {
            for (v, s) in g.row_mut(r).iter_mut().zip(&truth.feature_std) {
                *v *= s / scale;
            }
        }
        mats.insert(cat.clone(), g);
    }
    GeneratorBank::from_matrices(mats)
}
