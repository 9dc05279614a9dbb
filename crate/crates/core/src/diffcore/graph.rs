//! Tape-style reverse-mode graph over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` simply walks it in reverse.

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
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
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    XLnY(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    RepeatCols(Var),
    RepeatRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::XLnY(..) => "xlny",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::RepeatCols(_) => "repeat_cols",
            Op::RepeatRows(_) => "repeat_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// Numerically stable softmax of one slice.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or a zero tensor of `like`'s shape when `v` got none.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| like.map(|_| 0.0))
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// An input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Constant, value, false)
    }

    /// Copies `v`'s current value into a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(op.name(), "non-finite output"));
        }
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::XLnY(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::RepeatCols(a)
            | Op::RepeatRows(a) => self.requires_grad(*a),
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(op.name(), va, vb)?;
        let out = va.zip_map(vb, f)?;
        self.push(op, out)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `x · ln(y)` elementwise, with `0 · ln(y) = 0` for any `y ≥ 0`.
    pub fn xlny(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(x, y, Op::XLnY(x, y), |a, b| if a == 0.0 { 0.0 } else { a * b.ln() })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut data = Vec::with_capacity(v.numel());
        for row in v.row_iter() {
            data.extend(softmax_slice(row));
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Softmax(a), out)
    }

    /// `ln(softmax(x))` over the last axis, computed as `x - max - ln Σ exp(x - max)`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut data = Vec::with_capacity(v.numel());
        for row in v.row_iter() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - m - lse));
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::LogSoftmax(a), out)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::config(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = Tensor::new(vec![m, n], matmul_raw(va.data(), vb.data(), m, k, n))?;
        self.push(Op::MatMul(a, b), out)
    }

    /// Sum of all elements, left to right.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum();
        let n = v.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    /// Sums over the last axis, keeping it with size 1: `[n, k] -> [n, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let data: Vec<f64> = v.row_iter().map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = 1;
        let out = Tensor::new(shape, data)?;
        self.push(Op::SumLast(a), out)
    }

    /// Tiles a trailing size-1 axis `cols` times: `[n, 1] -> [n, cols]`.
    pub fn repeat_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if v.last_dim() != 1 || cols == 0 {
            return Err(Error::config(format!(
                "repeat_cols: need trailing axis of size 1, got {:?}",
                v.shape()
            )));
        }
        let data: Vec<f64> = v
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, cols))
            .collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = cols;
        let out = Tensor::new(shape, data)?;
        self.push(Op::RepeatCols(a), out)
    }

    /// Stacks a `[1, k]` row `rows` times: `[1, k] -> [rows, k]`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 2 || v.shape()[0] != 1 || rows == 0 {
            return Err(Error::config(format!(
                "repeat_rows: need shape [1, k], got {:?}",
                v.shape()
            )));
        }
        let k = v.shape()[1];
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, k], data)?;
        self.push(Op::RepeatRows(a), out)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        if !root.all_finite() {
            return Err(Error::numeric("backward", "non-finite loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.value(v).data();
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(a), val(b));
                self.accumulate(grads, a, g.iter().zip(xb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, b, g.iter().zip(xa).map(|(g, x)| g * x).collect());
            }
            Op::Div(a, b) => {
                let (xa, xb) = (val(a), val(b));
                self.accumulate(grads, a, g.iter().zip(xb).map(|(g, y)| g / y).collect());
                self.accumulate(
                    grads,
                    b,
                    g.iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect(),
                );
            }
            Op::XLnY(x, y) => {
                let (xs, ys) = (val(x), val(y));
                self.accumulate(
                    grads,
                    x,
                    g.iter()
                        .zip(xs.iter().zip(ys))
                        .map(|(g, (&a, &b))| if a == 0.0 { 0.0 } else { g * b.ln() })
                        .collect(),
                );
                self.accumulate(
                    grads,
                    y,
                    g.iter()
                        .zip(xs.iter().zip(ys))
                        .map(|(g, (&a, &b))| if a == 0.0 { 0.0 } else { g * a / b })
                        .collect(),
                );
            }
            Op::Scale(a, s) => self.accumulate(grads, a, g.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) => self.accumulate(grads, a, g.to_vec()),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(a) {
                    self.accumulate(grads, a, matmul_nt(g, val(b), m, n, k));
                }
                if self.requires_grad(b) {
                    self.accumulate(grads, b, matmul_tn(val(a), g, m, k, n));
                }
            }
            Op::Relu(a) => self.accumulate(
                grads,
                a,
                g.iter()
                    .zip(val(a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Softplus(a) => self.accumulate(
                grads,
                a,
                g.iter().zip(val(a)).map(|(g, &x)| g * sigmoid(x)).collect(),
            ),
            Op::Exp(a) => self.accumulate(
                grads,
                a,
                g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect(),
            ),
            Op::Ln(a) => {
                self.accumulate(grads, a, g.iter().zip(val(a)).map(|(g, x)| g / x).collect())
            }
            Op::Square(a) => self.accumulate(
                grads,
                a,
                g.iter().zip(val(a)).map(|(g, x)| 2.0 * g * x).collect(),
            ),
            Op::Softmax(a) => {
                let k = node.value.last_dim();
                let mut out = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(k).zip(node.value.data().chunks(k)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    out.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                self.accumulate(grads, a, out);
            }
            Op::LogSoftmax(a) => {
                let k = node.value.last_dim();
                let mut out = Vec::with_capacity(g.len());
                for (gr, lr) in g.chunks(k).zip(node.value.data().chunks(k)) {
                    let total: f64 = gr.iter().sum();
                    out.extend(gr.iter().zip(lr).map(|(g, l)| g - l.exp() * total));
                }
                self.accumulate(grads, a, out);
            }
            Op::Sum(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0] / n as f64; n]);
            }
            Op::SumLast(a) => {
                let k = self.value(a).last_dim();
                let out = g.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
                self.accumulate(grads, a, out);
            }
            Op::RepeatCols(a) => {
                let k = node.value.last_dim();
                let out = g.chunks(k).map(|r| r.iter().sum()).collect();
                self.accumulate(grads, a, out);
            }
            Op::RepeatRows(a) => {
                let k = node.value.last_dim();
                let mut out = vec![0.0; k];
                for r in g.chunks(k) {
                    for (o, x) in out.iter_mut().zip(r) {
                        *o += x;
                    }
                }
                self.accumulate(grads, a, out);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i = g.constant(Tensor::identity(3).unwrap());
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(0.0) - 0.693147).abs() < 1e-6);
        assert_eq!(softplus(800.0), 800.0);
        for i in -300..=300 {
            let x = i as f64 / 10.0;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() <= 1e-12, "x={x}");
            assert!(softplus(x) >= x.max(0.0));
            assert!(softplus(x + 0.05) > softplus(x));
        }
    }

    #[test]
    fn softmax_two() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[2.0, 0.0]));
        let s = g.softmax(x).unwrap();
        let v = g.value(s).data();
        assert!((v[0] - 0.880797).abs() < 1e-6);
        assert!((v[1] - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1.0; 6]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(3.0));
        let p = g.mul(x, y).unwrap();
        let gr = g.backward(p).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[3.0]);
        assert_eq!(gr.get(y).unwrap().data(), &[2.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let s = g.softplus(x).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[0.5]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]));
        let b = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(Error::Config(_))));
        let m = g.leaf(t(&[1, 2], &[1.0, 2.0]));
        assert!(matches!(g.matmul(m, m), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_output_names_op() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1], &[0.0]));
        match g.ln(a) {
            Err(Error::Numeric { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("expected numeric error, got {other:?}"),
        }
        let b = g.leaf(t(&[1], &[1000.0]));
        assert!(matches!(g.exp(b), Err(Error::Numeric { .. })));
    }

    #[test]
    fn fan_out_sums_contributions() {
        // loss = sum(x*x) + sum(3x): consumer-wise gradients 2x and 3.
        let x0 = t(&[3], &[1.0, -1.0, 2.5]);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let sq = g.square(x).unwrap();
        let s1 = g.sum(sq).unwrap();
        let sc = g.scale(x, 3.0).unwrap();
        let s2 = g.sum(sc).unwrap();
        let l = g.add(s1, s2).unwrap();
        let both = g.backward(l).unwrap().get(x).unwrap().clone();

        let single = |use_sq: bool| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let y = if use_sq { g.square(x).unwrap() } else { g.scale(x, 3.0).unwrap() };
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap().get(x).unwrap().clone()
        };
        let (a, b) = (single(true), single(false));
        for i in 0..3 {
            assert_eq!(both.data()[i], a.data()[i] + b.data()[i]);
        }
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let d = g.detach(x);
        let p = g.mul(x, d).unwrap();
        let s = g.sum(p).unwrap();
        let gr = g.backward(s).unwrap();
        // d/dx of x*stop(x) = stop(x)
        assert_eq!(gr.get(x).unwrap().data(), &[1.0, 2.0]);
        assert!(gr.get(d).is_none());
    }

    #[test]
    fn xlny_zero_convention() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[0.0, 0.5]));
        let y = g.leaf(t(&[2], &[0.0, 0.25]));
        let z = g.xlny(x, y).unwrap();
        assert_eq!(g.value(z).data()[0], 0.0);
        let s = g.sum(z).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(y).unwrap().data()[0], 0.0);
        assert!((gr.get(y).unwrap().data()[1] - 2.0).abs() < 1e-15);
    }
}
