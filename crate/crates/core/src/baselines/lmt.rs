//! Single shared low-rank Mahalanobis embedding trained with a logistic pair loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pair};
use crate::error::{Error, Result};
use crate::numcore::{squared_distance, Matrix, RmsPropConfig, RmsPropState, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmtConfig {
    pub style_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub neg_per_pos: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LmtConfig {
    fn default() -> Self {
        Self { style_dim: 128, epochs: 200, learning_rate: 1e-3, neg_per_pos: 1, batch_size: 30, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmtFit {
    pub matrix: Matrix,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
}

/// Records `mean softplus(d⁺) + mean softplus(−d⁻)` where `d = ‖M(a − b)‖²`.
///
/// `pos_diff` and `neg_diff` hold one feature difference `v_a − v_b` per row;
/// the negative term is skipped when `neg_diff` has no rows.
pub fn lmt_loss(tape: &mut Tape, m: Var, pos_diff: &Matrix, neg_diff: &Matrix) -> Result<Var> {
    let sq_dist = |tape: &mut Tape, diff: &Matrix| -> Result<Var> {
        let x = tape.constant(diff.clone());
        let s = tape.matmul_t(x, m)?;
        let sq = tape.mul(s, s)?;
        let ones = tape.constant(Matrix::filled(tape.value(sq).cols(), 1, 1.0));
        tape.matmul(sq, ones)
    };
    let dp = sq_dist(tape, pos_diff)?;
    let lp = tape.softplus(dp);
    let mut loss = tape.mean(lp)?;
    if neg_diff.rows() > 0 {
        let dn = sq_dist(tape, neg_diff)?;
        let neg = tape.scale(dn, -1.0);
        let ln = tape.softplus(neg);
        let ln = tape.mean(ln)?;
        loss = tape.add(loss, ln)?;
    }
    Ok(loss)
}

fn diff_rows(ds: &Dataset, pairs: &[(usize, usize)]) -> Result<Matrix> {
    let f = ds.feature_dim();
    let mut data = Vec::with_capacity(pairs.len() * f);
    for &(a, b) in pairs {
        data.extend(ds.item(a).features.iter().zip(&ds.item(b).features).map(|(x, y)| x - y));
    }
    Matrix::new(pairs.len(), f, data)
}

/// Trains `M` (`d x F`) on the dataset's training pairs. Pairs are put in
/// canonical orientation (lower item index first) and negatives replace the
/// second member with a uniformly drawn item of the same category.
pub fn lmt_train(ds: &Dataset, config: &LmtConfig) -> Result<LmtFit> {
    let f = ds.feature_dim();
    let d = config.style_dim.min(f);
    if d == 0 {
        return Err(Error::invalid("style_dim", "must be positive"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = 1.0 / (f as f64).sqrt();
    let data = (0..d * f).map(|_| rng.random_range(-half..=half)).collect();
    let mut m = Matrix::new(d, f, data)?;
    let mut losses = Vec::with_capacity(config.epochs);
    if ds.train_pairs().is_empty() {
        if config.epochs > 0 {
            log::warn!("lmt: no training pairs; returning the random initialisation");
        }
        return Ok(LmtFit { matrix: m, losses });
    }

    let mut pairs: Vec<(usize, usize)> =
        ds.train_pairs().iter().map(|&Pair { a, b }| (a.min(b), a.max(b))).collect();
    pairs.sort_unstable();
    let mut state = RmsPropState::new(
        RmsPropConfig { learning_rate: config.learning_rate, ..RmsPropConfig::default() },
        (d, f),
    );

    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in pairs.chunks(config.batch_size) {
            let mut negs = Vec::with_capacity(chunk.len() * config.neg_per_pos);
            for &(a, b) in chunk {
                let pool = ds.category_items(&ds.item(b).category);
                for _ in 0..config.neg_per_pos {
                    let mut y = pool[rng.random_range(0..pool.len())];
                    if y == b && pool.len() > 1 {
                        y = pool[(pool.iter().position(|&i| i == b).unwrap() + 1) % pool.len()];
                    }
                    negs.push((a, y));
                }
            }
            let pos_diff = diff_rows(ds, chunk)?;
            let neg_diff = diff_rows(ds, &negs)?;
            let mut tape = Tape::new();
            let mv = tape.param(m.clone());
            let loss = lmt_loss(&mut tape, mv, &pos_diff, &neg_diff)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite { context: format!("lmt loss at epoch {epoch}") });
            }
            let grads = tape.backward(loss)?;
            state.step(&mut m, &grads.get_or_zeros(mv, (d, f)))?;
            total += value;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(LmtFit { matrix: m, losses })
}

/// `σ(−‖M v_x − M v_y‖²)`.
pub fn lmt_score(x: &[f64], y: &[f64], m: &Matrix) -> Result<f64> {
    let d = squared_distance(&m.matvec(x)?, &m.matvec(y)?);
    Ok(crate::eval::sigmoid_neg(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemRecord, Provenance};
    use crate::numcore::grad_check;

    fn toy(pairs: Vec<Pair>) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items = (0..20)
            .map(|i| ItemRecord {
                id: format!("i{i}"),
                category: if i < 10 { "x".into() } else { "y".into() },
                features: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let mut ds = Dataset::new(items, pairs.clone(), Provenance::InMemory).unwrap();
        ds.set_split(pairs, vec![]).unwrap();
        ds
    }

    #[test]
    fn zero_epochs_returns_init() {
        let ds = toy(vec![Pair { a: 0, b: 10 }]);
        let cfg = LmtConfig { style_dim: 3, epochs: 0, ..LmtConfig::default() };
        let a = lmt_train(&ds, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let half = 1.0 / 5f64.sqrt();
        let init: Vec<f64> = (0..15).map(|_| rng.random_range(-half..=half)).collect();
        assert_eq!(a.matrix.as_slice(), init.as_slice());
        assert!(a.losses.is_empty());
    }

    #[test]
    fn single_pair_distance_decreases_monotonically() {
        let ds = toy(vec![Pair { a: 2, b: 13 }]);
        let mut last = f64::INFINITY;
        for epochs in [0, 1, 5, 20, 60] {
            let cfg = LmtConfig { style_dim: 3, epochs, neg_per_pos: 0, learning_rate: 1e-3, ..LmtConfig::default() };
            let fit = lmt_train(&ds, &cfg).unwrap();
            let d = squared_distance(
                &fit.matrix.matvec(&ds.item(2).features).unwrap(),
                &fit.matrix.matvec(&ds.item(13).features).unwrap(),
            );
            assert!(d < last, "epochs {epochs}: {d} !< {last}");
            last = d;
            assert!(fit.losses.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn swapping_pair_order_keeps_trajectory() {
        let pairs = vec![Pair { a: 0, b: 10 }, Pair { a: 3, b: 15 }, Pair { a: 7, b: 12 }];
        let swapped = pairs.iter().map(|p| Pair { a: p.b, b: p.a }).collect();
        let cfg = LmtConfig { style_dim: 2, epochs: 10, ..LmtConfig::default() };
        let a = lmt_train(&toy(pairs), &cfg).unwrap();
        let b = lmt_train(&toy(swapped), &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_m = |r, c| {
            Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let m = rand_m(3, 5);
        let pos = rand_m(4, 5);
        let neg = rand_m(4, 5).scale(0.3);
        let err = grad_check(|t, v| lmt_loss(t, v[0], &pos, &neg), &[m], 1e-5, 64).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
