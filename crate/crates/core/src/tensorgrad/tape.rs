//! Reverse-mode tape over small dense matrices.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.
//! Binary elementwise ops broadcast an operand along any dimension of size 1.

use super::matrix::Matrix;
use crate::error::{CcdError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Softplus(Var),
    /// Gradient 1 on the closed interval, 0 outside.
    Clip(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Columns(Var, usize, usize),
    RepeatRows(Var),
    Hcat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; nodes that do not influence the loss get exact zeros.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.adjoints[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(m: &Matrix, i: usize, j: usize) -> f64 {
    let r = if m.rows() == 1 { 0 } else { i };
    let c = if m.cols() == 1 { 0 } else { j };
    m[(r, c)]
}

fn broadcast_zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape());
    let mut out = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            out[(i, j)] = f(bidx(a, i, j), bidx(b, i, j));
        }
    }
    out
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let r = if shape.0 == 1 { 0 } else { i };
            let c = if shape.1 == 1 { 0 } else { j };
            out[(r, c)] += g[(i, j)];
        }
    }
    out
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Parameters and constants are both leaves; the
    /// caller decides which adjoints to read back.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.leaf(Matrix::scalar(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x / y);
        self.push(Op::Div(a, b), v)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), f64::min);
        self.push(Op::Min(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clip bounds reversed");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clip(a, lo, hi), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Row-wise sum: `r x c` to `r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let v = Matrix::from_vec(m.rows(), 1, data);
        self.push(Op::SumCols(a), v)
    }

    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols(), "column slice out of range");
        let mut out = Matrix::zeros(m.rows(), len);
        for i in 0..m.rows() {
            out.row_mut(i).copy_from_slice(&m.row(i)[start..start + len]);
        }
        self.push(Op::Columns(a, start, len), out)
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), 1, "repeat_rows expects a row vector");
        let mut data = Vec::with_capacity(n * m.cols());
        for _ in 0..n {
            data.extend_from_slice(m.row(0));
        }
        let v = Matrix::from_vec(n, m.cols(), data);
        self.push(Op::RepeatRows(a), v)
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&mats);
        self.push(Op::Hcat(parts.to_vec()), v)
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(CcdError::Numeric(format!(
                "backward requires a scalar loss, got shape {shape:?}"
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut adj, *a, g.matmul_bt(bv));
                    acc(&mut adj, *b, av.matmul_at(&g));
                }
                Op::Add(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    acc(&mut adj, *b, reduce_to(g.clone(), sb));
                    acc(&mut adj, *a, reduce_to(g, sa));
                }
                Op::Sub(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    acc(&mut adj, *b, reduce_to(g.map(|x| -x), sb));
                    acc(&mut adj, *a, reduce_to(g, sa));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = broadcast_zip(&g, bv, |x, y| x * y);
                    let gb = broadcast_zip(&g, av, |x, y| x * y);
                    acc(&mut adj, *a, reduce_to(ga, av.shape()));
                    acc(&mut adj, *b, reduce_to(gb, bv.shape()));
                }
                Op::Div(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = broadcast_zip(&g, bv, |x, y| x / y);
                    // d(a/b)/db = -out / b
                    let q = broadcast_zip(out, bv, |o, y| -o / y);
                    let gb = g.zip_map(&q, |x, y| x * y);
                    acc(&mut adj, *a, reduce_to(ga, av.shape()));
                    acc(&mut adj, *b, reduce_to(gb, bv.shape()));
                }
                Op::Min(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (r, c) = g.shape();
                    let mut ga = Matrix::zeros(r, c);
                    let mut gb = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            if bidx(av, i, j) <= bidx(bv, i, j) {
                                ga[(i, j)] = g[(i, j)];
                            } else {
                                gb[(i, j)] = g[(i, j)];
                            }
                        }
                    }
                    acc(&mut adj, *a, reduce_to(ga, av.shape()));
                    acc(&mut adj, *b, reduce_to(gb, bv.shape()));
                }
                Op::Neg(a) => acc(&mut adj, *a, g.map(|x| -x)),
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut adj, *a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Tanh(a) => acc(&mut adj, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))),
                Op::Exp(a) => acc(&mut adj, *a, g.zip_map(out, |x, e| x * e)),
                Op::Log(a) => acc(&mut adj, *a, g.zip_map(self.value(*a), |x, y| x / y)),
                Op::Square(a) => {
                    acc(&mut adj, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y))
                }
                Op::Abs(a) => acc(
                    &mut adj,
                    *a,
                    g.zip_map(self.value(*a), |x, y| {
                        if y > 0.0 {
                            x
                        } else if y < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    }),
                ),
                Op::Softplus(a) => {
                    acc(&mut adj, *a, g.zip_map(self.value(*a), |x, y| x * sigmoid(y)))
                }
                Op::Clip(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        &mut adj,
                        *a,
                        g.zip_map(self.value(*a), |x, y| if y >= lo && y <= hi { x } else { 0.0 }),
                    )
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, Matrix::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g[(i, 0)];
                        ga.row_mut(i).iter_mut().for_each(|x| *x = gi);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Columns(a, start, len) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + *len].copy_from_slice(g.row(i));
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::RepeatRows(a) => {
                    let shape = self.value(*a).shape();
                    acc(&mut adj, *a, reduce_to(g, shape));
                }
                Op::Hcat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let mut gp = Matrix::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut adj, *p, gp);
                    }
                }
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 1.0);
    }

    #[test]
    fn unused_nodes_have_zero_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(2.0));
        let unused = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let _dead = t.exp(unused);
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused), Matrix::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn clip_gradient_is_one_inside_zero_outside() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[0.5, 1.0, 1.5, -3.0]));
        let c = t.clip(x, 0.8, 1.2);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(3, 2));
        let b = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let c = t.add(a, b);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(b).data(), &[3.0, 3.0]);
        assert_eq!(t.scalar(s), 9.0);
    }

    #[test]
    fn min_routes_ties_to_first() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(1.0));
        let b = t.leaf(Matrix::scalar(1.0));
        let m = t.min(a, b);
        let g = t.backward(m).unwrap();
        assert_eq!((g.wrt(a).item(), g.wrt(b).item()), (1.0, 0.0));
    }
}
