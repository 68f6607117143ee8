//! Per-category generator matrices and the weight-clipped critic.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ItemRecord;
use crate::error::{Error, Result};
use crate::numcore::{clip_in_place, Matrix, Tape, Var};
use crate::trainer::TrainConfig;

/// How generator matrices are initialised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorInit {
    /// Entries uniform in `[-1/√F, 1/√F]`.
    #[default]
    Uniform,
    /// Random matrix with orthonormal rows.
    Orthonormal,
}

/// One `d x F` style transformation per category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBank {
    style_dim: usize,
    feature_dim: usize,
    shared: bool,
    index: BTreeMap<String, usize>,
    matrices: Vec<Matrix>,
}

impl GeneratorBank {
    /// Builds a bank from explicit matrices, one per category.
    pub fn from_matrices(matrices: BTreeMap<String, Matrix>) -> Result<Self> {
        let first = matrices
            .values()
            .next()
            .ok_or_else(|| Error::invalid("categories", "bank needs at least one category"))?;
        let (style_dim, feature_dim) = first.shape();
        let mut index = BTreeMap::new();
        let mut mats = Vec::with_capacity(matrices.len());
        for (cat, m) in matrices {
            if m.shape() != (style_dim, feature_dim) {
                return Err(Error::shape(
                    "GeneratorBank",
                    format!("category {cat} has {:?}, expected {:?}", m.shape(), (style_dim, feature_dim)),
                ));
            }
            index.insert(cat, mats.len());
            mats.push(m);
        }
        Ok(Self { style_dim, feature_dim, shared: false, index, matrices: mats })
    }

    /// A bank where every category resolves to the same matrix.
    pub fn shared(categories: &[String], matrix: Matrix) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::invalid("categories", "bank needs at least one category"));
        }
        let (style_dim, feature_dim) = matrix.shape();
        let index = categories.iter().map(|c| (c.clone(), 0)).collect();
        Ok(Self { style_dim, feature_dim, shared: true, index, matrices: vec![matrix] })
    }

    pub fn style_dim(&self) -> usize {
        self.style_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.index.contains_key(category)
    }

    /// Slot of the matrix serving `category`; equal for all categories in shared mode.
    pub fn slot(&self, category: &str) -> Result<usize> {
        self.index
            .get(category)
            .copied()
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }

    pub fn matrix(&self, category: &str) -> Result<&Matrix> {
        Ok(&self.matrices[self.slot(category)?])
    }

    pub fn matrix_at(&self, slot: usize) -> &Matrix {
        &self.matrices[slot]
    }

    pub fn matrix_at_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.matrices[slot]
    }

    pub fn slots(&self) -> usize {
        self.matrices.len()
    }

    /// `G_c · v` for a raw feature vector of category `category`.
    pub fn project_features(&self, category: &str, features: &[f64]) -> Result<Vec<f64>> {
        let g = self.matrix(category)?;
        if features.len() != self.feature_dim {
            return Err(Error::shape(
                "project",
                format!("feature dim {} but bank expects {}", features.len(), self.feature_dim),
            ));
        }
        g.matvec(features)
    }

    /// Projects items (all of one category) into an `n x d` matrix of style rows.
    pub fn project_batch(&self, category: &str, items: &[&ItemRecord]) -> Result<Matrix> {
        let g = self.matrix(category)?;
        feature_matrix(items, self.feature_dim)?.matmul_t(g)
    }
}

/// Stacks item features into an `n x F` matrix.
pub fn feature_matrix(items: &[&ItemRecord], feature_dim: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(items.len() * feature_dim);
    for it in items {
        if it.features.len() != feature_dim {
            return Err(Error::shape(
                "feature_matrix",
                format!("item {} has {} features, expected {feature_dim}", it.id, it.features.len()),
            ));
        }
        data.extend_from_slice(&it.features);
    }
    Matrix::new(items.len(), feature_dim, data)
}

/// `s_x = G_c v_x`.
pub fn project(item: &ItemRecord, bank: &GeneratorBank) -> Result<Vec<f64>> {
    bank.project_features(&item.category, &item.features)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in x out`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
}

/// Hidden-layer nonlinearity of the critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.2 }
    }
}

/// Scalar-output MLP whose weight matrices are kept in `[-clip_bound, clip_bound]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    pub clip_bound: f64,
}

/// Tape handles for every critic parameter, layer by layer `(weight, bias)`.
#[derive(Clone, Debug)]
pub struct CriticVars {
    pub layers: Vec<(Var, Var)>,
}

impl Critic {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    /// Layer widths from input to the scalar output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weight.cols()));
        w
    }

    pub fn zeros(widths: &[usize], clip_bound: f64) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::invalid("critic widths", "need input width and a scalar output"));
        }
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer { weight: Matrix::zeros(w[0], w[1]), bias: Matrix::zeros(1, w[1]) })
            .collect();
        Ok(Self { layers, activation: Activation::default(), clip_bound })
    }

    /// Largest absolute weight entry (biases excluded).
    pub fn max_abs_weight(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.max_abs()).fold(0.0, f64::max)
    }

    pub fn clip(&mut self) -> Result<()> {
        for l in &mut self.layers {
            clip_in_place(&mut l.weight, self.clip_bound)?;
        }
        Ok(())
    }

    /// Upper bound on the Lipschitz constant implied by the clip bound alone:
    /// each `in x out` layer has operator norm at most `c·√(in·out)`.
    pub fn lipschitz_bound_from_clip(&self) -> f64 {
        let slope_bound = match self.activation {
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
        };
        let n = self.layers.len();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (a, b) = l.weight.shape();
                let act = if i + 1 < n { slope_bound } else { 1.0 };
                self.clip_bound * ((a * b) as f64).sqrt() * act
            })
            .product()
    }

    /// Records the critic's parameters on a tape.
    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> CriticVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        CriticVars { layers }
    }

    /// Records the forward pass of an `n x d` batch; returns the `n x 1` outputs.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &CriticVars, input: Var) -> Result<Var> {
        let d = tape.value(input).cols();
        if d != self.input_dim() {
            return Err(Error::shape("critic_eval", format!("input dim {d}, critic expects {}", self.input_dim())));
        }
        let mut h = input;
        let last = vars.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if i < last {
                let Activation::LeakyRelu { slope } = self.activation;
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }

    /// Plain forward pass over an `n x d` batch, returning one output per row.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<f64>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "critic_eval",
                format!("input dim {}, critic expects {}", batch.cols(), self.input_dim()),
            ));
        }
        let mut h = batch.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&l.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(l.bias.as_slice()) {
                    *v += b;
                }
            }
            if i < last {
                let Activation::LeakyRelu { slope } = self.activation;
                z = z.map(|v| if v > 0.0 { v } else { slope * v });
            }
            h = z;
        }
        Ok(h.into_vec())
    }
}

/// `D(s)` for a single style vector.
pub fn critic_eval(s: &[f64], critic: &Critic) -> Result<f64> {
    let batch = Matrix::new(1, s.len(), s.to_vec())?;
    Ok(critic.forward(&batch)?[0])
}

fn uniform_matrix(rows: usize, cols: usize, half_width: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-half_width..=half_width)).collect();
    Matrix::new(rows, cols, data).expect("shape is consistent")
}

/// A `rows x cols` matrix (rows ≤ cols) with orthonormal rows, by Gram–Schmidt on Gaussian rows.
pub fn random_orthonormal_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if rows > cols {
        return Err(Error::invalid("orthonormal rows", format!("{rows} rows cannot be orthonormal in {cols} dims")));
    }
    let mut m = Matrix::zeros(rows, cols);
    let mut r = 0;
    while r < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        // two passes of modified Gram–Schmidt for numerical orthogonality
        for _ in 0..2 {
            for q in 0..r {
                let p = crate::numcore::dot(&v, m.row(q));
                for (x, y) in v.iter_mut().zip(m.row(q)) {
                    *x -= p * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        m.row_mut(r).iter_mut().zip(&v).for_each(|(dst, x)| *dst = x / norm);
        r += 1;
    }
    Ok(m)
}

/// Randomly initialises generators and critic; deterministic per seed.
pub fn init_model(
    config: &TrainConfig,
    categories: &[String],
    feature_dim: usize,
    seed: u64,
) -> Result<(GeneratorBank, Critic)> {
    if categories.is_empty() {
        return Err(Error::invalid("categories", "at least one category is required"));
    }
    if feature_dim == 0 {
        return Err(Error::invalid("feature_dim", "must be positive"));
    }
    let d = config.effective_style_dim(feature_dim);
    if d == 0 {
        return Err(Error::invalid("style_dim", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 1.0 / (feature_dim as f64).sqrt();
    let draw = |rng: &mut ChaCha8Rng| -> Result<Matrix> {
        match config.generator_init {
            GeneratorInit::Uniform => Ok(uniform_matrix(d, feature_dim, half, rng)),
            GeneratorInit::Orthonormal => random_orthonormal_rows(d, feature_dim, rng),
        }
    };

    let bank = if config.shared_generator {
        GeneratorBank::shared(categories, draw(&mut rng)?)?
    } else {
        let mut sorted: Vec<&String> = categories.iter().collect();
        sorted.sort();
        sorted.dedup();
        let mut mats = BTreeMap::new();
        for c in sorted {
            mats.insert(c.clone(), draw(&mut rng)?);
        }
        GeneratorBank::from_matrices(mats)?
    };

    let mut widths = vec![d];
    widths.extend(&config.critic_hidden);
    widths.push(1);
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer {
            weight: uniform_matrix(w[0], w[1], 1.0 / (w[0] as f64).sqrt(), &mut rng),
            bias: Matrix::zeros(1, w[1]),
        })
        .collect();
    let mut critic = Critic {
        layers,
        activation: Activation::LeakyRelu { slope: config.leaky_slope },
        clip_bound: config.clip_bound,
    };
    critic.clip()?;
    Ok((bank, critic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn item(cat: &str, f: &[f64]) -> ItemRecord {
        ItemRecord { id: "x".into(), category: cat.into(), features: f.to_vec() }
    }

    fn bank_with(cat: &str, g: Matrix) -> GeneratorBank {
        GeneratorBank::from_matrices(BTreeMap::from([(cat.to_string(), g)])).unwrap()
    }

    #[test]
    fn identity_and_zero_transforms() {
        let v = [0.5, -1.0, 2.0];
        let b = bank_with("a", Matrix::identity(3));
        assert_eq!(project(&item("a", &v), &b).unwrap(), v.to_vec());
        let z = bank_with("a", Matrix::zeros(2, 3));
        assert_eq!(project(&item("a", &v), &z).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn project_matches_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = uniform_matrix(4, 6, 1.0, &mut rng);
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = bank_with("a", g.clone());
        let got = project(&item("a", &v), &b).unwrap();
        for r in 0..4 {
            let mut s = 0.0;
            for c in 0..6 {
                s += g.get(r, c) * v[c];
            }
            assert!((got[r] - s).abs() <= 1e-12);
        }
        let batch = b.project_batch("a", &[&item("a", &v)]).unwrap();
        for (x, y) in batch.row(0).iter().zip(&got) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn project_errors() {
        let b = bank_with("a", Matrix::identity(2));
        assert!(matches!(project(&item("b", &[1.0, 2.0]), &b), Err(Error::UnknownCategory(_))));
        assert!(matches!(project(&item("a", &[1.0]), &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let c = Critic::zeros(&[3, 5, 4, 1], 0.01).unwrap();
        assert_eq!(critic_eval(&[1.0, -2.0, 3.0], &c).unwrap(), 0.0);
    }

    #[test]
    fn linear_critic_is_dot_product() {
        let mut c = Critic::zeros(&[3, 1], 1.0).unwrap();
        c.layers[0].weight = Matrix::column(&[0.5, -0.25, 1.0]);
        let s = [2.0, 4.0, -1.0];
        assert_eq!(critic_eval(&s, &c).unwrap(), 0.5 * 2.0 - 0.25 * 4.0 - 1.0);
        assert!(critic_eval(&[1.0, 2.0], &c).is_err());
    }

    #[test]
    fn two_hidden_layer_critic_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut c = Critic::zeros(&[4, 6, 5, 1], 10.0).unwrap();
        for l in &mut c.layers {
            l.weight = uniform_matrix(l.weight.rows(), l.weight.cols(), 1.0, &mut rng);
            l.bias = uniform_matrix(1, l.bias.cols(), 1.0, &mut rng);
        }
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let mut h = s.clone();
        for (li, l) in c.layers.iter().enumerate() {
            let mut next = vec![0.0; l.weight.cols()];
            for (j, nj) in next.iter_mut().enumerate() {
                let mut acc = l.bias.get(0, j);
                for (i, hi) in h.iter().enumerate() {
                    acc += hi * l.weight.get(i, j);
                }
                *nj = if li + 1 < c.layers.len() { leaky(acc) } else { acc };
            }
            h = next;
        }
        assert!((critic_eval(&s, &c).unwrap() - h[0]).abs() <= 1e-12);
    }

    fn cats() -> Vec<String> {
        vec!["b".into(), "a".into(), "c".into()]
    }

    #[test]
    fn init_is_deterministic_and_clipped() {
        let cfg = TrainConfig { style_dim: 8, critic_hidden: vec![16, 16], ..TrainConfig::default() };
        let (b1, c1) = init_model(&cfg, &cats(), 12, 4).unwrap();
        let (b2, c2) = init_model(&cfg, &cats(), 12, 4).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        let (b3, _) = init_model(&cfg, &cats(), 12, 5).unwrap();
        assert_ne!(b1, b3);
        assert!(c1.max_abs_weight() <= cfg.clip_bound);
        assert_eq!(b1.style_dim(), 8);
        for c in b1.categories() {
            let g = b1.matrix(c).unwrap();
            assert_eq!(g.shape(), (8, 12));
            assert!(g.max_abs() <= 1.0 / 12f64.sqrt());
        }
        assert!(init_model(&cfg, &[], 12, 4).is_err());
    }

    #[test]
    fn orthonormal_init_has_zero_penalty() {
        let cfg = TrainConfig {
            style_dim: 5,
            critic_hidden: vec![4],
            generator_init: GeneratorInit::Orthonormal,
            ..TrainConfig::default()
        };
        let (b, _) = init_model(&cfg, &cats(), 9, 1).unwrap();
        for c in b.categories() {
            let g = b.matrix(c).unwrap();
            let p = crate::losses::ortho_penalty(g).unwrap();
            assert!(p < 1e-20, "{p}");
        }
    }

    #[test]
    fn shared_mode_resolves_one_matrix() {
        let cfg = TrainConfig { style_dim: 3, critic_hidden: vec![4], shared_generator: true, ..TrainConfig::default() };
        let (b, _) = init_model(&cfg, &cats(), 5, 2).unwrap();
        assert!(b.is_shared());
        assert_eq!(b.slots(), 1);
        let f = [0.1, 0.2, -0.3, 0.4, 0.5];
        let pa = project(&item("a", &f), &b).unwrap();
        let pc = project(&item("c", &f), &b).unwrap();
        assert_eq!(pa, pc);
    }

    proptest! {
        #[test]
        fn projection_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 6),
            y in prop::collection::vec(-1.0f64..1.0, 6),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = bank_with("a", uniform_matrix(4, 6, 1.0, &mut rng));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = project(&item("a", &combo), &b).unwrap();
            let px = project(&item("a", &x), &b).unwrap();
            let py = project(&item("a", &y), &b).unwrap();
            for k in 0..4 {
                prop_assert!((lhs[k] - (alpha * px[k] + beta * py[k])).abs() <= 1e-10);
            }
        }

        #[test]
        fn clipped_critic_respects_lipschitz_bound(
            seed in 0u64..500,
            s1 in prop::collection::vec(-3.0f64..3.0, 6),
            s2 in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let cfg = TrainConfig { style_dim: 6, critic_hidden: vec![8, 8], clip_bound: 0.05, ..TrainConfig::default() };
            let (_, critic) = init_model(&cfg, &["a".to_string()], 6, seed).unwrap();
            let diff = (critic_eval(&s1, &critic).unwrap() - critic_eval(&s2, &critic).unwrap()).abs();
            let dist = crate::numcore::squared_distance(&s1, &s2).sqrt();
            // Frobenius norms of the actual weights bound each layer's operator norm.
            let actual: f64 = critic.layers.iter().map(|l| l.weight.frobenius()).product();
            prop_assert!(diff <= actual * dist + 1e-12);
            prop_assert!(actual <= critic.lipschitz_bound_from_clip() + 1e-12);
        }
    }
}
