use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// RMSProp hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, rho: 0.9, epsilon: 1e-8 }
    }
}

/// Squared-gradient accumulator for one parameter matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    acc: Matrix,
}

impl RmsPropState {
    pub fn new(config: RmsPropConfig, shape: (usize, usize)) -> Self {
        Self { config, acc: Matrix::zeros(shape.0, shape.1) }
    }

    pub fn accumulator(&self) -> &Matrix {
        &self.acc
    }

    /// One descent step on `param` in place: `acc ← ρ·acc + (1−ρ)·g²`,
    /// `param ← param − α·g/√(acc+ε)`.
    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.acc.shape() {
            return Err(Error::shape(
                "rmsprop_step",
                format!(
                    "param {:?}, grad {:?}, state {:?}",
                    param.shape(),
                    grad.shape(),
                    self.acc.shape()
                ),
            ));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite { context: "rmsprop gradient".into() });
        }
        let RmsPropConfig { learning_rate, rho, epsilon } = self.config;
        for ((p, a), &g) in param
            .as_mut_slice()
            .iter_mut()
            .zip(self.acc.as_mut_slice())
            .zip(grad.as_slice())
        {
            *a = rho * *a + (1.0 - rho) * g * g;
            if g != 0.0 {
                *p -= learning_rate * g / (*a + epsilon).sqrt();
            }
        }
        Ok(())
    }
}

/// Functional form of [`RmsPropState::step`]: returns the updated parameter.
pub fn rmsprop_step(state: &mut RmsPropState, param: &Matrix, grad: &Matrix) -> Result<Matrix> {
    let mut out = param.clone();
    state.step(&mut out, grad)?;
    Ok(out)
}

/// Clamps every entry into `[-bound, bound]`.
pub fn clip_weights(param: &Matrix, bound: f64) -> Result<Matrix> {
    let mut out = param.clone();
    clip_in_place(&mut out, bound)?;
    Ok(out)
}

pub fn clip_in_place(param: &mut Matrix, bound: f64) -> Result<()> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::invalid("clip_bound", format!("must be positive and finite, got {bound}")));
    }
    for v in param.as_mut_slice() {
        *v = v.clamp(-bound, bound);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_param_and_decays_accumulator() {
        let cfg = RmsPropConfig::default();
        let mut st = RmsPropState::new(cfg, (1, 2));
        let p = Matrix::from_rows(&[[0.3, -0.7]]).unwrap();
        let p1 = rmsprop_step(&mut st, &p, &Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        let before = st.accumulator().clone();
        let p2 = rmsprop_step(&mut st, &p1, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(p1, p2);
        for (a, b) in st.accumulator().as_slice().iter().zip(before.as_slice()) {
            assert_eq!(*a, 0.9 * b);
        }
    }

    #[test]
    fn first_step_from_zero_accumulator() {
        let mut st = RmsPropState::new(RmsPropConfig::default(), (1, 1));
        let p = rmsprop_step(&mut st, &Matrix::zeros(1, 1), &Matrix::filled(1, 1, 1.0)).unwrap();
        let expected = -0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_converges_to_fixed_point_step() {
        let cfg = RmsPropConfig::default();
        for &g in &[1e-3, 0.5, -4.0] {
            let mut st = RmsPropState::new(cfg, (1, 1));
            let mut p = Matrix::zeros(1, 1);
            let grad = Matrix::filled(1, 1, g);
            let mut last = 0.0;
            for _ in 0..500 {
                let before = p.get(0, 0);
                st.step(&mut p, &grad).unwrap();
                last = p.get(0, 0) - before;
            }
            let fixed = -cfg.learning_rate * f64::signum(g) / (1.0 + cfg.epsilon / (g * g)).sqrt();
            assert!((last - fixed).abs() < 1e-12, "g={g}: {last} vs {fixed}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = RmsPropState::new(RmsPropConfig::default(), (2, 2));
        assert!(rmsprop_step(&mut st, &Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn clip_examples() {
        let m = Matrix::from_rows(&[[0.005, -0.002]]).unwrap();
        assert_eq!(clip_weights(&m, 0.01).unwrap(), m);
        let big = Matrix::from_rows(&[[5.0]]).unwrap();
        assert_eq!(clip_weights(&big, 0.01).unwrap().get(0, 0), 0.01);
        assert!(clip_weights(&m, 0.0).is_err());
        assert!(clip_weights(&m, -1.0).is_err());
    }

    #[test]
    fn clip_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-0.05..0.05)).collect();
        let m = Matrix::new(8, 8, data.clone()).unwrap();
        let c = clip_weights(&m, 0.01).unwrap();
        for (i, &v) in data.iter().enumerate() {
            let oracle = if v > 0.01 { 0.01 } else if v < -0.01 { -0.01 } else { v };
            assert_eq!(c.as_slice()[i], oracle);
        }
        assert!(data.iter().any(|v| v.abs() > 0.01));
        assert_eq!(c.max_abs(), 0.01);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(data in prop::collection::vec(-10.0f64..10.0, 1..40), bound in 1e-3f64..5.0) {
            let m = Matrix::new(1, data.len(), data).unwrap();
            let once = clip_weights(&m, bound).unwrap();
            prop_assert_eq!(clip_weights(&once, bound).unwrap(), once);
        }

        #[test]
        fn update_bounded_and_accumulator_nonnegative(
            grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..20)
        ) {
            let cfg = RmsPropConfig::default();
            let mut st = RmsPropState::new(cfg, (1, 4));
            let mut p = Matrix::zeros(1, 4);
            for g in grads {
                let gm = Matrix::new(1, 4, g.clone()).unwrap();
                let before = p.clone();
                st.step(&mut p, &gm).unwrap();
                for k in 0..4 {
                    let delta = (p.get(0, k) - before.get(0, k)).abs();
                    prop_assert!(delta <= cfg.learning_rate * g[k].abs() / cfg.epsilon.sqrt() + 1e-300);
                    prop_assert!(st.accumulator().get(0, k) >= 0.0);
                }
            }
        }
    }
}
