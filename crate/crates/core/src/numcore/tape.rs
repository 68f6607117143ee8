//! Recorded-operation tape for reverse-mode gradients over matrices.
//!
//! Every value on the tape is a [`Matrix`]; scalars are `1 x 1` matrices.
//! Leaves are either parameters (gradients wanted) or constants. Calling
//! [`Tape::backward`] on a scalar node replays the tape in reverse and
//! returns the gradient of that scalar with respect to every parameter leaf.

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Adds a `1 x c` row to every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Sqrt(Var),
    Softplus(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// The value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Broadcast-adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{}x{} plus row {}x{}", am.rows(), am.cols(), bm.rows(), bm.cols()),
            ));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(bm.as_slice()) {
                *v += b;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(a);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let value = Matrix::filled(1, 1, m.sum() / m.len() as f64);
        let ng = self.needs(a);
        Ok(self.push(value, Op::Mean(a), ng))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum_squares());
        let ng = self.needs(a);
        self.push(value, Op::SumSquares(a), ng)
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        let ng = self.needs(a);
        self.push(value, Op::Sqrt(a), ng)
    }

    /// Elementwise `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(value, Op::Softplus(a), ng)
    }

    /// Euclidean/Frobenius norm of all entries.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq = self.sum_squares(a);
        self.sqrt(sq)
    }

    /// Reverse pass from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::shape("backward", "output must be a 1x1 scalar"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.matmul_t(self.value(b))?);
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, self.value(a).t_matmul(&g)?);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.matmul(self.value(b))?);
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.t_matmul(self.value(a))?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.hadamard(self.value(b))?);
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.hadamard(self.value(a))?);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(bias) {
                        accumulate(&mut grads, bias, g.column_sums());
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, a, g.scale(s)),
                Op::LeakyRelu(a, slope) => {
                    let local = g.zip_with(self.value(a), "leaky_relu", |gv, x| {
                        if x > 0.0 {
                            gv
                        } else {
                            slope * gv
                        }
                    })?;
                    accumulate(&mut grads, a, local);
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.transpose()),
                Op::Sum(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut grads, a, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(a).shape();
                    let v = g.as_slice()[0] / (r * c) as f64;
                    accumulate(&mut grads, a, Matrix::filled(r, c, v));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.as_slice()[0];
                    accumulate(&mut grads, a, self.value(a).scale(s));
                }
                Op::Sqrt(a) => {
                    let local = g.zip_with(&node.value, "sqrt", |gv, y| {
                        if y > 0.0 {
                            0.5 * gv / y
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, a, local);
                }
                Op::Softplus(a) => {
                    let local = g.zip_with(self.value(a), "softplus", |gv, x| gv * logistic(x))?;
                    accumulate(&mut grads, a, local);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e⁻ˣ)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
