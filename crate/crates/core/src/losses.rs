//! Scalar objectives: critic objective, adversarial, anchor and orthogonality
//! terms, and the full generator objective. Each has a plain evaluator and a
//! tape recorder used for gradients.

use serde::{Deserialize, Serialize};

use crate::data::ItemRecord;
use crate::error::{Error, Result};
use crate::model::{feature_matrix, Critic, CriticVars, GeneratorBank};
use crate::numcore::{Matrix, Tape, Var};

/// Form of the `‖GGᵀ − E‖_F` penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoForm {
    /// `‖GGᵀ − E‖²_F`
    #[default]
    Squared,
    /// `‖GGᵀ − E‖_F`, with gradient 0 where the norm vanishes.
    Plain,
}

/// Whether the anchor sum is divided by the number of anchor pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorNorm {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta: f64,
    pub lambda: f64,
    pub ortho_form: OrthoForm,
    pub anchor_norm: AnchorNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { eta: 0.1, lambda: 0.01, ortho_form: OrthoForm::Squared, anchor_norm: AnchorNorm::Mean }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adversarial_term: f64,
    pub anchor_term: f64,
    pub ortho_term: f64,
    pub total: f64,
    pub wasserstein_estimate: f64,
}

fn mean_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64 - b.iter().sum::<f64>() / b.len() as f64
}

/// Mean critic output over `batch_i` minus the mean over `batch_j` (rows are style vectors).
pub fn critic_objective(batch_i: &Matrix, batch_j: &Matrix, critic: &Critic) -> Result<f64> {
    if batch_i.rows() == 0 || batch_j.rows() == 0 {
        return Err(Error::invalid("batch", "critic objective needs non-empty batches"));
    }
    Ok(mean_diff(&critic.forward(batch_i)?, &critic.forward(batch_j)?))
}

/// Sum over pairs of `‖G_{c(x)} v_x − G_{c(y)} v_y‖²`.
pub fn anchor_loss(pairs: &[(&ItemRecord, &ItemRecord)], bank: &GeneratorBank) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in pairs {
        let sx = bank.project_features(&x.category, &x.features)?;
        let sy = bank.project_features(&y.category, &y.features)?;
        total += crate::numcore::squared_distance(&sx, &sy);
    }
    Ok(total)
}

fn ortho_residual(g: &Matrix) -> Result<Matrix> {
    if g.rows() > g.cols() {
        return Err(Error::shape("ortho_penalty", format!("G is {}x{}; rows must not exceed columns", g.rows(), g.cols())));
    }
    g.matmul_t(g)?.sub(&Matrix::identity(g.rows()))
}

/// `‖GGᵀ − E‖²_F`.
pub fn ortho_penalty(g: &Matrix) -> Result<f64> {
    ortho_penalty_with(g, OrthoForm::Squared)
}

pub fn ortho_penalty_with(g: &Matrix, form: OrthoForm) -> Result<f64> {
    let r = ortho_residual(g)?.sum_squares();
    Ok(match form {
        OrthoForm::Squared => r,
        OrthoForm::Plain => r.sqrt(),
    })
}

/// Distribution-alignment term of the generator objective.
#[derive(Clone, Copy, Debug)]
pub enum Alignment<'a> {
    /// Critic mean difference.
    Critic(&'a Critic),
    /// `Σ γ_kl ‖s_k − s_l‖²` for a fixed transport plan between the two batches.
    Transport(&'a Matrix),
    /// No alignment term.
    Off,
}

/// Inputs of one generator objective evaluation, as raw feature rows.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorInputs<'a> {
    /// `n x F` items of category `c_i`.
    pub xi: &'a Matrix,
    /// `m x F` items of category `c_j`.
    pub xj: &'a Matrix,
    /// `k x F` anchor members from `c_i`, row-aligned with `anchor_y`.
    pub anchor_x: &'a Matrix,
    /// `k x F` anchor members from `c_j`.
    pub anchor_y: &'a Matrix,
}

/// Tape handles of each recorded term.
#[derive(Clone, Copy, Debug)]
pub struct TermVars {
    pub adversarial: Var,
    pub anchor: Var,
    pub ortho: Var,
    pub total: Var,
}

/// Records `mean D(s_i) − mean D(s_j)` for `n x d` style batches.
pub fn record_critic_objective(tape: &mut Tape, critic: &Critic, vars: &CriticVars, si: Var, sj: Var) -> Result<Var> {
    if tape.value(si).rows() == 0 || tape.value(sj).rows() == 0 {
        return Err(Error::invalid("batch", "critic objective needs non-empty batches"));
    }
    let di = critic.forward_tape(tape, vars, si)?;
    let dj = critic.forward_tape(tape, vars, sj)?;
    let mi = tape.mean(di)?;
    let mj = tape.mean(dj)?;
    tape.sub(mi, mj)
}

/// Records `Σ_k ‖a_k − b_k‖²` between row-aligned style matrices, divided by
/// the row count under [`AnchorNorm::Mean`]. Empty inputs give 0.
pub fn record_anchor(tape: &mut Tape, sa: Var, sb: Var, norm: AnchorNorm) -> Result<Var> {
    let k = tape.value(sa).rows();
    if k == 0 {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    let diff = tape.sub(sa, sb)?;
    let sq = tape.sum_squares(diff);
    Ok(match norm {
        AnchorNorm::Mean => tape.scale(sq, 1.0 / k as f64),
        AnchorNorm::Sum => sq,
    })
}

pub fn record_ortho(tape: &mut Tape, g: Var, form: OrthoForm) -> Result<Var> {
    let (d, f) = tape.value(g).shape();
    if d > f {
        return Err(Error::shape("ortho_penalty", format!("G is {d}x{f}; rows must not exceed columns")));
    }
    let ggt = tape.matmul_t(g, g)?;
    let e = tape.constant(Matrix::identity(d));
    let r = tape.sub(ggt, e)?;
    Ok(match form {
        OrthoForm::Squared => tape.sum_squares(r),
        OrthoForm::Plain => tape.l2_norm(r),
    })
}

/// Records `Σ γ_kl ‖a_k − b_l‖²` with `γ` held fixed.
pub fn record_transport_cost(tape: &mut Tape, sa: Var, sb: Var, plan: &Matrix) -> Result<Var> {
    let (n, m) = (tape.value(sa).rows(), tape.value(sb).rows());
    if plan.shape() != (n, m) {
        return Err(Error::shape("transport cost", format!("plan {:?} for batches {n} and {m}", plan.shape())));
    }
    let row_mass = Matrix::new(1, n, plan.row_sums())?;
    let col_mass = plan.column_sums();
    let rm = tape.constant(row_mass);
    let cm = tape.constant(col_mass);
    let sa2 = tape.mul(sa, sa)?;
    let sb2 = tape.mul(sb, sb)?;
    let ta = tape.matmul(rm, sa2)?;
    let ta = tape.sum(ta);
    let tb = tape.matmul(cm, sb2)?;
    let tb = tape.sum(tb);
    let cross = tape.matmul_t(sa, sb)?;
    let gamma = tape.constant(plan.clone());
    let cross = tape.mul(cross, gamma)?;
    let cross = tape.sum(cross);
    let cross = tape.scale(cross, -2.0);
    let t = tape.add(ta, tb)?;
    tape.add(t, cross)
}

/// Records the generator objective `align + η·anchor + λ·(ortho(G_i) + ortho(G_j))`.
/// `gi` and `gj` may be the same variable (shared generator).
pub fn record_generator_objective(
    tape: &mut Tape,
    gi: Var,
    gj: Var,
    inputs: &GeneratorInputs<'_>,
    alignment: Alignment<'_>,
    weights: &LossWeights,
) -> Result<TermVars> {
    let xi = tape.constant(inputs.xi.clone());
    let xj = tape.constant(inputs.xj.clone());
    let si = tape.matmul_t(xi, gi)?;
    let sj = tape.matmul_t(xj, gj)?;
    let adversarial = match alignment {
        Alignment::Critic(critic) => {
            let cv = critic.attach(tape, false);
            record_critic_objective(tape, critic, &cv, si, sj)?
        }
        Alignment::Transport(plan) => record_transport_cost(tape, si, sj, plan)?,
        Alignment::Off => tape.constant(Matrix::zeros(1, 1)),
    };
    if inputs.anchor_x.shape() != inputs.anchor_y.shape() {
        return Err(Error::shape("anchor batch", "anchor members are not row-aligned"));
    }
    let anchor = if inputs.anchor_x.rows() == 0 {
        tape.constant(Matrix::zeros(1, 1))
    } else {
        let ax = tape.constant(inputs.anchor_x.clone());
        let ay = tape.constant(inputs.anchor_y.clone());
        let sa = tape.matmul_t(ax, gi)?;
        let sb = tape.matmul_t(ay, gj)?;
        record_anchor(tape, sa, sb, weights.anchor_norm)?
    };
    let oi = record_ortho(tape, gi, weights.ortho_form)?;
    let oj = record_ortho(tape, gj, weights.ortho_form)?;
    let ortho = tape.add(oi, oj)?;
    let wa = tape.scale(anchor, weights.eta);
    let wo = tape.scale(ortho, weights.lambda);
    let total = tape.add(adversarial, wa)?;
    let total = tape.add(total, wo)?;
    Ok(TermVars { adversarial, anchor, ortho, total })
}

/// Evaluates the full generator objective for items of categories `c_i`
/// (`batch_i`) and `c_j` (`batch_j`) with anchor pairs `(x ∈ c_i, y ∈ c_j)`.
pub fn generator_objective(
    batch_i: &[&ItemRecord],
    batch_j: &[&ItemRecord],
    pairs: &[(&ItemRecord, &ItemRecord)],
    bank: &GeneratorBank,
    critic: &Critic,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let (ci, cj) = match (batch_i.first(), batch_j.first()) {
        (Some(a), Some(b)) => (a.category.as_str(), b.category.as_str()),
        _ => return Err(Error::invalid("batch", "generator objective needs non-empty batches")),
    };
    let f = bank.feature_dim();
    let xs: Vec<&ItemRecord> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<&ItemRecord> = pairs.iter().map(|p| p.1).collect();
    if let Some(bad) = batch_i.iter().chain(&xs).find(|it| it.category != ci) {
        return Err(Error::invalid("batch_i", format!("item {} is not in category {ci}", bad.id)));
    }
    if let Some(bad) = batch_j.iter().chain(&ys).find(|it| it.category != cj) {
        return Err(Error::invalid("batch_j", format!("item {} is not in category {cj}", bad.id)));
    }
    let (xi, xj) = (feature_matrix(batch_i, f)?, feature_matrix(batch_j, f)?);
    let (ax, ay) = (feature_matrix(&xs, f)?, feature_matrix(&ys, f)?);
    let inputs = GeneratorInputs { xi: &xi, xj: &xj, anchor_x: &ax, anchor_y: &ay };
    breakdown_for(bank.matrix(ci)?, bank.matrix(cj)?, bank.slot(ci)? == bank.slot(cj)?, &inputs, critic, Alignment::Critic(critic), weights)
}

/// Evaluates every term (no gradients) for explicit generator matrices.
pub fn breakdown_for(
    g_i: &Matrix,
    g_j: &Matrix,
    shared: bool,
    inputs: &GeneratorInputs<'_>,
    critic: &Critic,
    alignment: Alignment<'_>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let gi = tape.constant(g_i.clone());
    let gj = if shared { gi } else { tape.constant(g_j.clone()) };
    let t = record_generator_objective(&mut tape, gi, gj, inputs, alignment, weights)?;
    let adversarial_term = tape.scalar(t.adversarial);
    let wasserstein_estimate = match alignment {
        Alignment::Critic(c) if std::ptr::eq(c, critic) => adversarial_term,
        _ => critic_objective(&inputs.xi.matmul_t(g_i)?, &inputs.xj.matmul_t(g_j)?, critic)?,
    };
    Ok(LossBreakdown {
        adversarial_term,
        anchor_term: tape.scalar(t.anchor),
        ortho_term: tape.scalar(t.ortho),
        total: tape.scalar(t.total),
        wasserstein_estimate,
    })
}
