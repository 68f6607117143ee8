use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{squared_distance, Matrix};

/// Mean-centred principal axes (orthonormal rows) with their variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x F`, one axis per row, variances non-increasing.
    pub axes: Matrix,
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.axes.rows()
    }

    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::shape("pca transform", format!("vector of {} vs {}", v.len(), self.mean.len())));
        }
        let centred: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.axes.matvec(&centred)
    }

    /// Maps projected coordinates back into feature space.
    pub fn reconstruct(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.dim() {
            return Err(Error::shape("pca reconstruct", format!("{} coords vs {} axes", p.len(), self.dim())));
        }
        let mut out = self.mean.clone();
        for (k, &c) in p.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.axes.row(k)) {
                *o += c * a;
            }
        }
        Ok(out)
    }
}

/// Top-`d` eigenbasis of the sample covariance (divisor `n`).
///
/// Each axis is signed so that its largest-magnitude entry is positive.
/// Directions with variance below `1e-12` of the largest are dropped with a
/// warning, so fewer than `d` axes may come back for rank-deficient input.
pub fn pca_fit<V: AsRef<[f64]>>(features: &[V], d: usize) -> Result<PcaModel> {
    let n = features.len();
    let dim = features.first().map_or(0, |v| v.as_ref().len());
    if d == 0 || d > dim {
        return Err(Error::invalid("pca dim", format!("need 1 <= d <= {dim}, got {d}")));
    }
    if n < d {
        return Err(Error::invalid("pca samples", format!("{n} samples for {d} components")));
    }
    let mut mean = vec![0.0; dim];
    for v in features {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::shape("pca_fit", "ragged feature vectors"));
        }
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centred = vec![0.0; dim];
    for v in features {
        centred.iter_mut().zip(v.as_ref()).zip(&mean).for_each(|((c, x), m)| *c = x - m);
        for i in 0..dim {
            let ci = centred[i];
            for j in i..dim {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut axes = Vec::with_capacity(d);
    let mut variances = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            break;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = axis.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
        variances.push(lambda);
    }
    if axes.len() < d {
        log::warn!("pca: input has rank {} < requested {d}; returning {} axes", axes.len(), axes.len());
    }
    let axes = if axes.is_empty() { Matrix::zeros(0, dim) } else { Matrix::from_rows(&axes)? };
    Ok(PcaModel { mean, axes, variances })
}

/// NN baseline: `σ(−‖p(x) − p(y)‖²)` in the PCA space.
pub fn nn_score(x: &[f64], y: &[f64], pca: &PcaModel) -> Result<f64> {
    let d = squared_distance(&pca.transform(x)?, &pca.transform(y)?);
    Ok(crate::eval::sigmoid_neg(d))
}
