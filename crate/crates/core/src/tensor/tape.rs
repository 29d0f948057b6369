//! Define-by-run reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so every node's inputs have smaller
//! indices than the node itself. Walking the node list backward from the loss
//! is therefore a reverse topological order, and a node's adjoint is complete
//! by the time it is visited.

use super::{Activation, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Activation(Var, Activation),
    Softmax(Var),
    Ln(Var),
    LogSigmoid(Var),
    Affine { x: Var, scale: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    StackRows(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for a single forward pass.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Broadcast-adds vector `row` to every row of matrix `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let value = self.value(m).add_row(self.value(row))?;
        let rg = self.any_grad(&[m, row]);
        Ok(self.push(value, Op::AddRow(m, row), rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).activation(kind);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Activation(x, kind), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).softmax()?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Natural log. Inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if let Some(bad) = src.data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Contract {
                op: "ln",
                msg: format!("non-positive input {bad}"),
            });
        }
        let value = src.map(f64::ln);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Ln(x), rg))
    }

    /// `ln σ(x)`, evaluated without forming `σ(x)` so it stays finite and
    /// keeps a nonzero gradient for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            if v >= 0.0 {
                -(-v).exp().ln_1p()
            } else {
                v - v.exp().ln_1p()
            }
        });
        let rg = self.any_grad(&[x]);
        self.push(value, Op::LogSigmoid(x), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Sum of all elements as a scalar (shape `[]`).
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Sums a list of equally shaped nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| TensorError::Contract {
            op: "add_all",
            msg: "empty operand list".into(),
        })?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = rows.iter().map(|v| self.value(*v)).collect();
        let value = Tensor::stack_rows(&refs)?;
        let rg = self.any_grad(rows);
        Ok(self.push(value, Op::StackRows(rows.to_vec()), rg))
    }

    /// Replays adjoints from the scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            // intermediates are consumed; only leaf adjoints are kept
            if matches!(node.op, Op::Leaf) || idx == loss.0 {
                grads[idx] = Some(g);
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if needs(b) {
                    self.accumulate(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?);
                }
                if needs(b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if bv.shape().len() == 1 {
                    // y = A x: dA = g xᵀ, dx = Aᵀ g
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    if needs(a) {
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let gi = g.data()[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (d, x) in da[i * k..(i + 1) * k].iter_mut().zip(bv.data()) {
                                *d = gi * x;
                            }
                        }
                        self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                    }
                    if needs(b) {
                        let mut dx = vec![0.0; k];
                        for i in 0..m {
                            let gi = g.data()[i];
                            for (d, w) in dx.iter_mut().zip(&av.data()[i * k..(i + 1) * k]) {
                                *d += gi * w;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::vector(dx));
                    }
                } else {
                    if needs(a) {
                        self.accumulate(grads, *a, g.matmul(&bv.transpose()?)?);
                    }
                    if needs(b) {
                        self.accumulate(grads, *b, av.transpose()?.matmul(g)?);
                    }
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                if needs(row) {
                    let cols = g.shape()[1];
                    let mut dr = vec![0.0; cols];
                    for chunk in g.data().chunks(cols) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::vector(dr));
                }
            }
            Op::Activation(x, kind) => {
                let y = &node.value;
                let dx = Tensor::from_fn(y.shape(), |i| g.data()[i] * kind.derivative_from_output(y.data()[i]));
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let dx = Tensor::from_fn(y.shape(), |i| y.data()[i] * (g.data()[i] - dot));
                self.accumulate(grads, *x, dx);
            }
            Op::Ln(x) => {
                let xv = self.value(*x);
                let dx = Tensor::from_fn(xv.shape(), |i| g.data()[i] / xv.data()[i]);
                self.accumulate(grads, *x, dx);
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x);
                let dx = Tensor::from_fn(xv.shape(), |i| g.data()[i] * crate::tensor::sigmoid(-xv.data()[i]));
                self.accumulate(grads, *x, dx);
            }
            Op::Affine { x, scale } => self.accumulate(grads, *x, g.scale(*scale)),
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let dx = Tensor::from_fn(xv.shape(), |i| {
                    let v = xv.data()[i];
                    if v < *lo || v > *hi {
                        0.0
                    } else {
                        g.data()[i]
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.item()));
            }
            Op::StackRows(rows) => {
                let width = g.shape()[1];
                for (i, r) in rows.iter().enumerate() {
                    if needs(r) {
                        self.accumulate(grads, *r, Tensor::vector(g.data()[i * width..(i + 1) * width].to_vec()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adjoints of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v`; zeros when `v` does not influence
    /// the loss. Adjoints of intermediate nodes are not retained.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_gradient, relative_error, SeededRng};

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::full(&[2, 2], 5.0));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(sigmoid(W x) * (W x)); W used through one node twice
        let mut rng = SeededRng::new(5);
        let w0 = rng.gaussian(&[3, 4]);
        let x0 = rng.gaussian(&[4]);
        let f = |w: &Tensor| {
            let mut tape = Tape::new();
            let w = tape.param(w.clone());
            let x = tape.constant(x0.clone());
            let wx = tape.matmul(w, x).unwrap();
            let s = tape.sigmoid(wx);
            let p = tape.mul(s, wx).unwrap();
            let l = tape.sum(p);
            (tape.value(l).item(), tape.backward(l).unwrap().wrt(w))
        };
        let (_, analytic) = f(&w0);
        let numeric = finite_difference_gradient(|w| f(w).0, &w0, 1e-5);
        assert!(relative_error(&analytic, &numeric) < 1e-7);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = SeededRng::new(17);
        let m0 = rng.gaussian(&[3, 4]);
        let v0 = rng.gaussian(&[4]);
        let build = |m: &Tensor, v: &Tensor| -> (f64, Tensor, Tensor) {
            let mut tape = Tape::new();
            let m = tape.param(m.clone());
            let v = tape.param(v.clone());
            let mt = tape.transpose(m).unwrap();
            let mtm = tape.matmul(mt, m).unwrap(); // [4,4]
            let r = tape.add_row(mtm, v).unwrap();
            let th = tape.tanh(r);
            let mv = tape.matmul(th, v).unwrap(); // [4]
            let sm = tape.softmax(mv).unwrap();
            let sg = tape.sigmoid(v);
            let cl = tape.clamp(sg, 0.2, 0.8);
            let lg = tape.ln(cl).unwrap();
            let ls = tape.log_sigmoid(v);
            let lg = tape.add(lg, ls).unwrap();
            let d = tape.sub(sm, lg).unwrap();
            let stacked = tape.stack_rows(&[d, v]).unwrap();
            let prod = tape.mul(stacked, stacked).unwrap();
            let s = tape.sum(prod);
            let out = tape.affine(s, 0.5, 3.0);
            let g = tape.backward(out).unwrap();
            (tape.value(out).item(), g.wrt(m), g.wrt(v))
        };
        let (_, gm, gv) = build(&m0, &v0);
        let nm = finite_difference_gradient(|m| build(m, &v0).0, &m0, 1e-5);
        let nv = finite_difference_gradient(|v| build(&m0, v).0, &v0, 1e-5);
        assert!(relative_error(&gm, &nm) < 1e-6, "{gm:?} vs {nm:?}");
        assert!(relative_error(&gv, &nv) < 1e-6, "{gv:?} vs {nv:?}");
    }

    #[test]
    fn log_sigmoid_is_stable_at_extremes() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-800.0, 0.0, 800.0]));
        let y = tape.log_sigmoid(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], -800.0);
        assert!((v[1] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap().wrt(x);
        assert_eq!(g.data(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = tape.param(Tensor::vector(vec![3.0, 4.0]));
        let prod = tape.mul(c, p).unwrap();
        let l = tape.sum(prod);
        assert!(!tape.requires_grad(c));
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(c), Tensor::zeros(&[2]));
        assert_eq!(g.wrt(p).data(), &[1.0, 2.0]);
    }
}
