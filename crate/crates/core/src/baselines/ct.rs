use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// Symmetric co-occurrence counts over category pairs, with additive smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoocTable {
    pub categories: Vec<String>,
    /// Keyed by the lexicographically ordered category pair.
    #[serde(with = "count_entries")]
    counts: BTreeMap<(String, String), f64>,
    pub smoothing: f64,
    total: f64,
}

// JSON object keys must be strings, so counts travel as `[a, b, n]` triples.
mod count_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(String, String), f64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|((a, b), n)| (a, b, n)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), f64>, D::Error> {
        let v = Vec::<(String, String, f64)>::deserialize(d)?;
        Ok(v.into_iter().map(|(a, b, n)| (super::key(&a, &b), n)).collect())
    }
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CoocTable {
    pub fn from_counts(categories: Vec<String>, pairs: &[(&str, &str, f64)], smoothing: f64) -> Self {
        let mut counts = BTreeMap::new();
        for &(a, b, n) in pairs {
            *counts.entry(key(a, b)).or_insert(0.0) += n;
        }
        let mut t = Self { categories, counts, smoothing, total: 0.0 };
        t.total = t.normaliser();
        t
    }

    /// Counts the training pairs of `ds` per category pair.
    pub fn build(ds: &Dataset, smoothing: f64) -> Self {
        let mut counts = BTreeMap::new();
        for p in ds.train_pairs() {
            let (a, b) = (&ds.item(p.a).category, &ds.item(p.b).category);
            *counts.entry(key(a, b)).or_insert(0.0) += 1.0;
        }
        let mut t = Self { categories: ds.categories(), counts, smoothing, total: 0.0 };
        t.total = t.normaliser();
        t
    }

    // Sum of smoothed counts over every unordered pair of distinct known categories.
    fn normaliser(&self) -> f64 {
        let n = self.categories.len() as f64;
        let cells = n * (n - 1.0) / 2.0;
        let observed: f64 = self.counts.values().sum();
        (observed + self.smoothing * cells).max(f64::MIN_POSITIVE)
    }

    pub fn count(&self, a: &str, b: &str) -> f64 {
        self.counts.get(&key(a, b)).copied().unwrap_or(0.0)
    }

    /// Normalized smoothed co-occurrence frequency of the category pair.
    pub fn score(&self, a: &str, b: &str) -> f64 {
        (self.count(a, b) + self.smoothing) / self.total
    }
}

/// CT baseline score for two items of categories `cat_x`, `cat_y`.
pub fn ct_score(cat_x: &str, cat_y: &str, table: &CoocTable) -> f64 {
    table.score(cat_x, cat_y)
}
