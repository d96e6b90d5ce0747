//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse. Shape errors in graph construction are
//! programming errors and panic; user-facing entry points validate shapes
//! before building a graph.

use std::collections::HashMap;

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Softplus,
    Tanh,
    Silu,
    Sigmoid,
    Exp,
    Log,
    Square,
    Abs,
    Sqrt,
    /// `ln(1 - Phi(x))`, the log survival function of a standard normal.
    NormalLogSf,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    Sum(Var),
    SumCols(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    CumsumCols(Var),
    GatherCols(Var, Vec<usize>),
    BroadcastRows(Var),
    StopGradient,
    StraightThrough(Var),
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `ln(1 - Phi(x))` for the standard normal, accurate far into both tails.
pub fn normal_log_sf(x: f64) -> f64 {
    if x < 20.0 {
        (0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic series; the first omitted term is below 1e-10 here
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - LN_SQRT_2PI - x.ln() + series.ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Softplus => softplus(x),
            Self::Tanh => x.tanh(),
            Self::Silu => x * sigmoid(x),
            Self::Sigmoid => sigmoid(x),
            Self::Exp => x.exp(),
            Self::Log => x.ln(),
            Self::Square => x * x,
            Self::Abs => x.abs(),
            Self::Sqrt => x.sqrt(),
            Self::NormalLogSf => normal_log_sf(x),
        }
    }

    /// Derivative from the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Softplus => sigmoid(x),
            Self::Tanh => 1.0 - y * y,
            Self::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Self::Sigmoid => y * (1.0 - y),
            Self::Exp => y,
            Self::Log => 1.0 / x,
            Self::Square => 2.0 * x,
            Self::Abs => x.signum() * f64::from(x != 0.0),
            Self::Sqrt => 0.5 / y,
            Self::NormalLogSf => -(-0.5 * x * x - LN_SQRT_2PI - y).exp(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints of every node reachable from the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Adds the adjoints of parameter leaves into the store's accumulators.
    pub fn accumulate(&self, graph: &Graph, store: &mut ParamStore) {
        for (&id, &v) in &graph.params {
            if let Some(g) = self.get(v) {
                store.get_mut(id).add_grad(&g.data);
            }
        }
    }
}

fn same_shape(a: &Matrix, b: &Matrix, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// A leaf whose adjoint is computed but never applied anywhere.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: f64) -> Var {
        self.push(Matrix::full(rows, cols, value), Op::StopGradient)
    }

    /// The leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).to_matrix(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.rows, "matmul: inner dimensions");
        let out = va.matmul(vb);
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert!(vb.rows == 1 && vb.cols == va.cols, "add_row: bias shape");
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    /// Multiplies every row of `a` elementwise by the `1 x c` row `s`.
    pub fn mul_row(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        assert!(vs.rows == 1 && vs.cols == va.cols, "mul_row: row shape");
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, s) in out.row_mut(r).iter_mut().zip(&vs.data) {
                *o *= s;
            }
        }
        self.push(out, Op::MulRow(a, s))
    }

    /// Scales row `r` of `a` by entry `r` of the `n x 1` column `s`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        assert!(vs.cols == 1 && vs.rows == va.rows, "mul_col: column shape");
        let mut out = va.clone();
        for r in 0..out.rows {
            let k = vs.data[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        self.push(out, Op::MulCol(a, s))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "div");
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(out, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let out = self.value(a).map(|x| f.apply(x));
        self.push(out, Op::Unary(a, f))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::full(1, 1, s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = (0..va.rows).map(|r| va.row(r).iter().sum()).collect();
        let out = Matrix {
            rows: va.rows,
            cols: 1,
            data,
        };
        self.push(out, Op::SumCols(a))
    }

    /// Per-column sums: `n x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(1, va.cols);
        for r in 0..va.rows {
            for (o, v) in out.data.iter_mut().zip(va.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        assert!(
            parts.iter().all(|&p| self.value(p).rows == rows),
            "concat_cols: row counts"
        );
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols, "slice_cols: range");
        let mut out = Matrix::zeros(va.rows, end - start);
        for r in 0..va.rows {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Running sum along each row.
    pub fn cumsum_cols(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for c in 1..row.len() {
                row[c] += row[c - 1];
            }
        }
        self.push(out, Op::CumsumCols(a))
    }

    /// Picks column `idx[r]` from row `r`: `n x c -> n x 1`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(idx.len(), va.rows, "gather_cols: one index per row");
        let data = idx.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect();
        let out = Matrix {
            rows: va.rows,
            cols: 1,
            data,
        };
        self.push(out, Op::GatherCols(a, idx.to_vec()))
    }

    /// Repeats the `1 x c` row `a` into `n` rows.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows, 1, "broadcast_rows: needs a single row");
        let mut out = Matrix::zeros(n, va.cols);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&va.data);
        }
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient)
    }

    /// Forward value `value`, backward identity into `probs`: the
    /// straight-through estimator `value - stop_gradient(probs) + probs`
    /// without the round-off of the literal expression.
    pub fn straight_through(&mut self, probs: Var, value: Matrix) -> Var {
        same_shape(self.value(probs), &value, "straight_through");
        self.push(value, Op::StraightThrough(probs))
    }

    /// Reverse sweep from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::full(1, 1, 1.0));
        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::StopGradient => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, s) => {
                    let (va, vs) = (self.value(*a), self.value(*s));
                    let mut gs = Matrix::zeros(1, g.cols);
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gs.data[c] += g.get(r, c) * va.get(r, c);
                            ga.data[r * g.cols + c] *= vs.data[c];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, gs);
                }
                Op::MulCol(a, s) => {
                    let (va, vs) = (self.value(*a), self.value(*s));
                    let mut gs = Matrix::zeros(g.rows, 1);
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        let k = vs.data[r];
                        gs.data[r] = g.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum();
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, gs);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    let ga = g.zip_map(vb, |x, y| x / y);
                    // d(a/b)/db = -(a/b)/b
                    let gb = g.zip_map(&out.zip_map(vb, |q, y| -q / y), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|v| k * v)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Unary(a, f) => {
                    let va = self.value(*a);
                    let mut ga = g;
                    for ((gv, &x), &y) in ga.data.iter_mut().zip(&va.data).zip(&out.data) {
                        *gv *= f.derivative(x, y);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g;
                    for r in 0..out.rows {
                        let y = out.row(r);
                        let dot: f64 = ga.row(r).iter().zip(y).map(|(x, y)| x * y).sum();
                        for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::full(r, c, g.scalar()));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i).iter_mut().for_each(|v| *v = g.data[i]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let r = self.value(*a).rows;
                    let mut ga = Matrix::zeros(r, g.cols);
                    for i in 0..r {
                        ga.row_mut(i).copy_from_slice(&g.data);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    let mut ga = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in ga.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        acc(&mut grads, p, gp);
                        c0 += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CumsumCols(a) => {
                    let mut ga = g;
                    for r in 0..ga.rows {
                        let row = ga.row_mut(r);
                        for c in (0..row.len().saturating_sub(1)).rev() {
                            row[c] += row[c + 1];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherCols(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (i, &j) in idx.iter().enumerate() {
                        ga.data[i * c + j] = g.data[i];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::StraightThrough(p) => acc(&mut grads, *p, g),
            }
        }
        Gradients { grads }
    }
}
