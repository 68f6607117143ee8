//! Style distance, compatibility, AUC with sampled negatives, and the
//! correlation and clustering diagnostics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ct_score, CoocTable, PcaModel};
use crate::data::{Dataset, ItemRecord, Pair};
use crate::error::{Error, Result};
use crate::model::GeneratorBank;
use crate::numcore::{squared_distance, Matrix};
use crate::trainer::TrainTrace;

/// `1 / (1 + e^d)`, evaluated without overflow.
pub fn sigmoid_neg(d: f64) -> f64 {
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// `‖G_{c(x)} v_x − G_{c(y)} v_y‖²`.
pub fn distance(x: &ItemRecord, y: &ItemRecord, bank: &GeneratorBank) -> Result<f64> {
    let sx = bank.project_features(&x.category, &x.features)?;
    let sy = bank.project_features(&y.category, &y.features)?;
    Ok(squared_distance(&sx, &sy))
}

/// `σ(−d(x, y))`, in `(0, 0.5]`.
pub fn compatibility(x: &ItemRecord, y: &ItemRecord, bank: &GeneratorBank) -> Result<f64> {
    Ok(sigmoid_neg(distance(x, y, bank)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub distance: Option<f64>,
    pub score: f64,
}

/// Anything that assigns a compatibility score to an item pair. `Ok(None)`
/// means the pair cannot be scored and is skipped.
pub trait PairScorer {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>>;
}

impl PairScorer for GeneratorBank {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>> {
        if !self.contains(&x.category) || !self.contains(&y.category) {
            return Ok(None);
        }
        let d = distance(x, y, self)?;
        Ok(Some(Scored { distance: Some(d), score: sigmoid_neg(d) }))
    }
}

impl PairScorer for PcaModel {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>> {
        let d = squared_distance(&self.transform(&x.features)?, &self.transform(&y.features)?);
        Ok(Some(Scored { distance: Some(d), score: sigmoid_neg(d) }))
    }
}

impl PairScorer for CoocTable {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>> {
        Ok(Some(Scored { distance: None, score: ct_score(&x.category, &y.category, self) }))
    }
}

/// LMT: one shared matrix for every category.
pub struct LmtScorer<'a>(pub &'a Matrix);

impl PairScorer for LmtScorer<'_> {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>> {
        let d = squared_distance(&self.0.matvec(&x.features)?, &self.0.matvec(&y.features)?);
        Ok(Some(Scored { distance: Some(d), score: sigmoid_neg(d) }))
    }
}

/// Wraps a closure returning a score.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&ItemRecord, &ItemRecord) -> f64> PairScorer for FnScorer<F> {
    fn score_pair(&self, x: &ItemRecord, y: &ItemRecord) -> Result<Option<Scored>> {
        Ok(Some(Scored { distance: None, score: (self.0)(x, y) }))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePool {
    /// Negatives share the category of the replaced item.
    #[default]
    SameCategory,
    /// Any item other than the two pair members.
    AnyItem,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// A tie counts as a miss.
    #[default]
    Strict,
    HalfCredit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub negative_pool: NegativePool,
    pub ties: TieMode,
    pub negative_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryPairAuc {
    pub categories: [String; 2],
    pub auc: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub breakdown: Vec<CategoryPairAuc>,
    pub n_test_pairs: usize,
    pub n_skipped: usize,
    pub negative_seed: u64,
    pub negative_pool: NegativePool,
    pub ties: TieMode,
}

/// Per-pair record of an AUC evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub index: usize,
    pub x: String,
    pub y: String,
    pub negative: String,
    pub d: Option<f64>,
    pub r: f64,
    pub d_neg: Option<f64>,
    pub r_neg: f64,
    pub hit: f64,
}

/// Draws the negative replacing `y` for pair number `index`. The stream is a
/// function of `(seed, index)` only.
fn draw_negative(ds: &Dataset, x: usize, y: usize, pool: NegativePool, seed: u64, index: usize) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    match pool {
        NegativePool::SameCategory => {
            let cands = ds.category_items(&ds.item(y).category);
            let pos = cands.iter().position(|&i| i == y)?;
            if cands.len() < 2 {
                return None;
            }
            let k = rng.random_range(0..cands.len() - 1);
            Some(cands[if k >= pos { k + 1 } else { k }])
        }
        NegativePool::AnyItem => {
            let n = ds.items().len();
            if n < 3 {
                return None;
            }
            let (lo, hi) = (x.min(y), x.max(y));
            let mut k = rng.random_range(0..n - 2);
            if k >= lo {
                k += 1;
            }
            if k >= hi {
                k += 1;
            }
            Some(k)
        }
    }
}

fn credit(r: f64, r_neg: f64, ties: TieMode) -> f64 {
    if r > r_neg {
        1.0
    } else if r == r_neg && ties == TieMode::HalfCredit {
        0.5
    } else {
        0.0
    }
}

/// Scores each pair against one sampled negative and reports the fraction of
/// wins. Each pair is read as `(x, y)` with `x` the lower item index; `y` is
/// the member that gets replaced.
pub fn auc<S: PairScorer + ?Sized>(
    scorer: &S,
    ds: &Dataset,
    pairs: &[Pair],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<PairScore>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("test pairs", "AUC needs at least one pair"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut groups: BTreeMap<[String; 2], (f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for (index, p) in pairs.iter().enumerate() {
        let (x, y) = (p.a.min(p.b), p.a.max(p.b));
        let Some(neg) = draw_negative(ds, x, y, opts.negative_pool, opts.negative_seed, index) else {
            skipped += 1;
            continue;
        };
        let (ix, iy, ineg) = (ds.item(x), ds.item(y), ds.item(neg));
        let (Some(pos), Some(negs)) = (scorer.score_pair(ix, iy)?, scorer.score_pair(ix, ineg)?) else {
            skipped += 1;
            continue;
        };
        if !pos.score.is_finite() || !negs.score.is_finite() {
            return Err(Error::NonFinite { context: format!("score of pair {index}") });
        }
        let hit = credit(pos.score, negs.score, opts.ties);
        let key = if ix.category <= iy.category {
            [ix.category.clone(), iy.category.clone()]
        } else {
            [iy.category.clone(), ix.category.clone()]
        };
        let g = groups.entry(key).or_insert((0.0, 0));
        g.0 += hit;
        g.1 += 1;
        rows.push(PairScore {
            index,
            x: ix.id.clone(),
            y: iy.id.clone(),
            negative: ineg.id.clone(),
            d: pos.distance,
            r: pos.score,
            d_neg: negs.distance,
            r_neg: negs.score,
            hit,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("test pairs", "every pair was skipped"));
    }
    let total: f64 = rows.iter().map(|r| r.hit).sum();
    let report = EvalReport {
        auc: total / rows.len() as f64,
        breakdown: groups
            .into_iter()
            .map(|(categories, (hits, n))| CategoryPairAuc { categories, auc: hits / n as f64, n })
            .collect(),
        n_test_pairs: rows.len(),
        n_skipped: skipped,
        negative_seed: opts.negative_seed,
        negative_pool: opts.negative_pool,
        ties: opts.ties,
    };
    Ok((report, rows))
}

/// `pair,x,y,negative,d,r,d_neg,r_neg,hit`; distances are empty for scorers without one.
pub fn write_pair_scores_csv<W: Write>(rows: &[PairScore], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["pair", "x", "y", "negative", "d", "r", "d_neg", "r_neg", "hit"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.x.clone(),
            r.y.clone(),
            r.negative.clone(),
            opt(r.d),
            r.r.to_string(),
            opt(r.d_neg),
            r.r_neg.to_string(),
            r.hit.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing pair scores", e))?;
    Ok(())
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pairs each checkpoint AUC with the mean `|W|` over the trailing `window`
/// iterations ending at that checkpoint.
pub fn smoothed_checkpoint_series(trace: &TrainTrace, window: usize) -> Vec<(usize, f64, f64)> {
    let window = window.max(1);
    trace
        .checkpoints
        .iter()
        .filter_map(|cp| {
            let lo = cp.iteration.saturating_sub(window);
            let ws: Vec<f64> = trace
                .records
                .iter()
                .filter(|r| r.iteration > lo && r.iteration <= cp.iteration)
                .map(|r| r.losses.wasserstein_estimate.abs())
                .collect();
            if ws.is_empty() {
                None
            } else {
                Some((cp.iteration, ws.iter().sum::<f64>() / ws.len() as f64, cp.auc))
            }
        })
        .collect()
}

/// Pearson correlation between smoothed `|W|` and checkpoint AUC.
pub fn trace_correlation(trace: &TrainTrace, window: usize) -> Result<f64> {
    let series = smoothed_checkpoint_series(trace, window);
    if series.len() < 10 {
        return Err(Error::invalid("trace", format!("need at least 10 checkpoints, have {}", series.len())));
    }
    let w: Vec<f64> = series.iter().map(|s| s.1).collect();
    let a: Vec<f64> = series.iter().map(|s| s.2).collect();
    pearson(&w, &a).ok_or_else(|| Error::invalid("trace", "a constant series makes the correlation undefined"))
}

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::shape("silhouette", format!("{} points, {} labels", points.len(), labels.len())));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::invalid("labels", "silhouette needs at least two clusters"));
    }
    let k = ids.len();
    let lab: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap()).collect();
    let mut sizes = vec![0usize; k];
    lab.iter().for_each(|&l| sizes[l] += 1);
    let n = points.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[lab[j]] += squared_distance(&points[i], &points[j]).sqrt();
            }
        }
        let own = lab[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_neg(0.0), 0.5);
        assert!(sigmoid_neg(800.0) >= 0.0 && sigmoid_neg(800.0) < 1e-300);
        assert!((sigmoid_neg(1.0) - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn three_four_five() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Matrix::identity(2));
        m.insert("b".to_string(), Matrix::identity(2));
        let bank = GeneratorBank::from_matrices(m).unwrap();
        let x = ItemRecord { id: "x".into(), category: "a".into(), features: vec![0.0, 0.0] };
        let y = ItemRecord { id: "y".into(), category: "b".into(), features: vec![3.0, 4.0] };
        assert_eq!(distance(&x, &y, &bank).unwrap(), 25.0);
        assert_eq!(distance(&x, &x, &bank).unwrap(), 0.0);
    }

    fn line_dataset() -> Dataset {
        // category a at 0..5, category b at 10..15 on a line; pair i ↔ 5+i
        let mut items = Vec::new();
        for i in 0..5 {
            items.push(ItemRecord { id: format!("a{i}"), category: "a".into(), features: vec![i as f64] });
        }
        for i in 0..5 {
            items.push(ItemRecord { id: format!("b{i}"), category: "b".into(), features: vec![i as f64] });
        }
        let pairs = (0..5).map(|i| Pair { a: i, b: 5 + i }).collect();
        Dataset::new(items, pairs, Provenance::InMemory).unwrap()
    }

    #[test]
    fn constant_scorer_ties() {
        let ds = line_dataset();
        let c = FnScorer(|_: &ItemRecord, _: &ItemRecord| 0.3);
        let strict = auc(&c, &ds, ds.test_pairs(), &EvalOptions::default()).unwrap().0;
        assert_eq!(strict.auc, 0.0);
        let half = EvalOptions { ties: TieMode::HalfCredit, ..EvalOptions::default() };
        assert_eq!(auc(&c, &ds, ds.test_pairs(), &half).unwrap().0.auc, 0.5);
    }

    #[test]
    fn perfect_scorer_and_bit_reproducible() {
        let ds = line_dataset();
        let s = FnScorer(|x: &ItemRecord, y: &ItemRecord| -(x.features[0] - y.features[0]).abs());
        let opts = EvalOptions { negative_seed: 9, ..EvalOptions::default() };
        let (a, rows) = auc(&s, &ds, ds.test_pairs(), &opts).unwrap();
        assert_eq!(a.auc, 1.0);
        assert_eq!(a.n_test_pairs, 5);
        assert!(rows.iter().all(|r| r.negative.starts_with('b') && r.negative != r.y));
        let (b, rows2) = auc(&s, &ds, ds.test_pairs(), &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(rows, rows2);
    }

    #[test]
    fn pearson_basics() {
        let up: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let down: Vec<f64> = up.iter().map(|v| 100.0 - v * v).collect();
        assert!(pearson(&up, &down).unwrap() < -0.9);
        assert_eq!(pearson(&up, &up).unwrap(), 1.0);
        assert!(pearson(&up, &[1.0; 20]).is_none());
    }

    #[test]
    fn silhouette_separated_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98);
        let mixed = silhouette(&pts, &[0, 1, 0, 1]).unwrap();
        assert!(mixed < 0.0);
        assert!(silhouette(&pts, &[1, 1, 1, 1]).is_err());
    }
}
