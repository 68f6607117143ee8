//! Optimal transport between uniform point clouds: an exact solver (assignment
//! for equal sizes, min-cost flow otherwise) and log-domain Sinkhorn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{squared_distance, Matrix};

/// Largest point set accepted by [`exact_emd`].
pub const EXACT_MAX_POINTS: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ground {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `n x m` coupling.
    pub gamma: Matrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `Σ γ_ij C_ij`.
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornResult {
    pub cost: f64,
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
    /// L1 violation of the row marginals at the returned iterate.
    pub marginal_error: f64,
}

/// Pairwise ground costs between the rows of `xs` and `ys`.
pub fn cost_matrix(xs: &Matrix, ys: &Matrix, ground: Ground) -> Result<Matrix> {
    if xs.cols() != ys.cols() {
        return Err(Error::shape("cost_matrix", format!("point dims {} and {}", xs.cols(), ys.cols())));
    }
    let mut c = Matrix::zeros(xs.rows(), ys.rows());
    for i in 0..xs.rows() {
        for j in 0..ys.rows() {
            let d2 = squared_distance(xs.row(i), ys.row(j));
            c.set(i, j, if ground == Ground::Euclidean { d2.sqrt() } else { d2 });
        }
    }
    Ok(c)
}

fn check_sizes(n: usize, m: usize, cap: Option<usize>) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("points", "transport needs non-empty point sets"));
    }
    if let Some(cap) = cap {
        if n > cap || m > cap {
            return Err(Error::invalid("points", format!("exact solver accepts at most {cap} points per side, got {n} and {m}")));
        }
    }
    Ok(())
}

fn plan_cost(gamma: &Matrix, cost: &Matrix) -> f64 {
    gamma.as_slice().iter().zip(cost.as_slice()).map(|(g, c)| g * c).sum()
}

/// Exact optimal transport cost under the Euclidean ground distance.
pub fn exact_emd(xs: &Matrix, ys: &Matrix) -> Result<(f64, TransportPlan)> {
    check_sizes(xs.rows(), ys.rows(), Some(EXACT_MAX_POINTS))?;
    let plan = exact_emd_costs(&cost_matrix(xs, ys, Ground::Euclidean)?)?;
    Ok((plan.cost, plan))
}

/// Exact optimal transport between uniform marginals for an arbitrary cost matrix.
pub fn exact_emd_costs(cost: &Matrix) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    check_sizes(n, m, Some(EXACT_MAX_POINTS))?;
    if !cost.is_finite() {
        return Err(Error::NonFinite { context: "transport cost matrix".into() });
    }
    let a = vec![1.0 / n as f64; n];
    let b = vec![1.0 / m as f64; m];
    if n == m {
        let assign = hungarian(cost);
        let mut gamma = Matrix::zeros(n, n);
        let mut total = 0.0;
        for (i, &j) in assign.iter().enumerate() {
            gamma.set(i, j, 1.0 / n as f64);
            total += cost.get(i, j);
        }
        return Ok(TransportPlan { gamma, a, b, cost: total / n as f64 });
    }
    let flow = min_cost_flow(cost);
    let unit = 1.0 / (n * m) as f64;
    let gamma = Matrix::new(n, m, flow.iter().map(|&f| f as f64 * unit).collect())?;
    let c = plan_cost(&gamma, cost);
    Ok(TransportPlan { gamma, a, b, cost: c })
}

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row. Shortest augmenting paths with row/column potentials.
fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Integer transport with supplies `m` per row and demands `n` per column
/// (uniform marginals scaled by `n·m`), by successive shortest paths.
fn min_cost_flow(cost: &Matrix) -> Vec<u64> {
    let (n, m) = cost.shape();
    let mut flow = vec![0u64; n * m];
    let mut supply = vec![m as u64; n];
    let mut demand = vec![n as u64; m];
    // shifted costs are non-negative, so zero potentials are feasible to start
    let cmin = cost.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let c = |i: usize, j: usize| cost.get(i, j) - cmin;
    let mut pot = vec![0.0; n + m];
    let mut remaining = (n * m) as u64;
    while remaining > 0 {
        // Dijkstra from a virtual source attached to every row with spare supply
        let total = n + m;
        let mut dist = vec![f64::INFINITY; total];
        let mut prev = vec![usize::MAX; total];
        let mut done = vec![false; total];
        for i in 0..n {
            if supply[i] > 0 {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for k in 0..total {
                if !done[k] && dist[k] < bd {
                    bd = dist[k];
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let k = n + j;
                    let rc = (c(i, j) + pot[i] - pot[k]).max(0.0);
                    if bd + rc < dist[k] {
                        dist[k] = bd + rc;
                        prev[k] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if flow[i * m + j] > 0 {
                        let rc = (-c(i, j) + pot[best] - pot[i]).max(0.0);
                        if bd + rc < dist[i] {
                            dist[i] = bd + rc;
                            prev[i] = best;
                        }
                    }
                }
            }
        }
        // cheapest reachable column with unmet demand
        let sink = (0..m).filter(|&j| demand[j] > 0).min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]));
        let Some(js) = sink else { break };
        let end = n + js;
        // bottleneck
        let mut amount = demand[js];
        let mut k = end;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p >= n {
                // reverse edge column p → row k
                amount = amount.min(flow[k * m + (p - n)]);
            }
            k = p;
        }
        amount = amount.min(supply[k]);
        let start = k;
        let mut k = end;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p < n {
                flow[p * m + (k - n)] += amount;
            } else {
                flow[k * m + (p - n)] -= amount;
            }
            k = p;
        }
        supply[start] -= amount;
        demand[js] -= amount;
        remaining -= amount;
        for (p, d) in pot.iter_mut().zip(&dist) {
            if d.is_finite() {
                *p += d;
            }
        }
    }
    flow
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Entropic OT under the Euclidean ground distance; see [`sinkhorn_costs`].
pub fn sinkhorn(xs: &Matrix, ys: &Matrix, reg: f64, max_iter: usize, tol: f64) -> Result<SinkhornResult> {
    sinkhorn_costs(&cost_matrix(xs, ys, Ground::Euclidean)?, reg, max_iter, tol)
}

/// Log-domain Sinkhorn scaling between uniform marginals. The reported cost
/// is `⟨γ, C⟩` without the entropy term. When the row marginals are still
/// off by `tol` (L1) after `max_iter` sweeps the last iterate is returned
/// with `converged == false`.
pub fn sinkhorn_costs(cost: &Matrix, reg: f64, max_iter: usize, tol: f64) -> Result<SinkhornResult> {
    let (n, m) = cost.shape();
    check_sizes(n, m, None)?;
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::invalid("reg", format!("must be positive, got {reg}")));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite { context: "transport cost matrix".into() });
    }
    let (la, lb) = ((1.0 / n as f64).ln(), (1.0 / m as f64).ln());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            f[i] = reg * la - reg * log_sum_exp((0..m).map(|j| (g[j] - cost.get(i, j)) / reg));
        }
        for j in 0..m {
            g[j] = reg * lb - reg * log_sum_exp((0..n).map(|i| (f[i] - cost.get(i, j)) / reg));
        }
        err = (0..n)
            .map(|i| ((0..m).map(|j| ((f[i] + g[j] - cost.get(i, j)) / reg).exp()).sum::<f64>() - 1.0 / n as f64).abs())
            .sum();
        if err < tol {
            break;
        }
    }
    let mut gamma = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            gamma.set(i, j, ((f[i] + g[j] - cost.get(i, j)) / reg).exp());
        }
    }
    let c = plan_cost(&gamma, cost);
    let converged = err < tol;
    if !converged {
        log::debug!("sinkhorn stopped after {iterations} sweeps with marginal error {err:.3e}");
    }
    Ok(SinkhornResult {
        cost: c,
        plan: TransportPlan { gamma, a: vec![1.0 / n as f64; n], b: vec![1.0 / m as f64; m], cost: c },
        converged,
        iterations,
        marginal_error: err,
    })
}

/// Median entry of a cost matrix.
pub fn median_cost(cost: &Matrix) -> f64 {
    let mut v = cost.as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        0.0
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
