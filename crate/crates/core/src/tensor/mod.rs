//! Dense `f64` tensors, a define-by-run reverse-mode tape, finite-difference
//! gradients, Adam, and a seeded Gaussian sampler.
//!
//! Everything in the model is built from the handful of kernels here. Tensors
//! are plain row-major buffers; the [`Tape`] records each kernel call so that
//! gradients can be replayed backward from a scalar loss.

mod adam;
mod gradcheck;
mod rng;
mod tape;

pub use adam::{AdamConfig, AdamState, Moments};
pub use gradcheck::{finite_difference_gradient, group_gradient_error, relative_error};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape, Var};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Pointwise squashing functions used by the recurrent cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the forward output `y`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected sigmoid or tanh)")),
        }
    }
}

/// Logistic function, split on sign so neither branch exponentiates a large
/// positive number.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Shape {
                op: "new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        self.map(|v| kind.apply(v))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.activation(Activation::Tanh)
    }

    /// Softmax over all elements, shifted by the maximum for stability.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.data.is_empty() {
            return Err(TensorError::Shape {
                op: "softmax",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let max = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.data.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: exps.into_iter().map(|e| e / total).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = self.data[i * cols + j];
            }
        }
        Ok(Tensor {
            shape: vec![cols, rows],
            data: out,
        })
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(TensorError::Contract {
                op,
                msg: format!("expected a matrix, got shape {:?}", self.shape),
            }),
        }
    }

    /// Matrix product. `other` may be a matrix `[k, n]` or a vector `[k]`,
    /// in which case the result is the vector `[m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        let (m, k) = self.as_matrix("matmul").map_err(|_| mismatch())?;
        match *other.shape.as_slice() {
            [k2] if k2 == k => {
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &self.data[i * k..(i + 1) * k];
                    *o = row.iter().zip(&other.data).map(|(a, b)| a * b).sum();
                }
                Ok(Tensor::vector(out))
            }
            [k2, n] if k2 == k => {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a = self.data[i * k + p];
                        if a == 0.0 {
                            continue;
                        }
                        let brow = &other.data[p * n..(p + 1) * n];
                        for (o, b) in orow.iter_mut().zip(brow) {
                            *o += a * b;
                        }
                    }
                }
                Ok(Tensor {
                    shape: vec![m, n],
                    data: out,
                })
            }
            _ => Err(mismatch()),
        }
    }

    /// Adds the vector `row` to every row of this matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.as_matrix("add_row")?;
        if row.shape != [cols] {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for r in 0..rows {
            for (d, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(&row.data) {
                *d += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Stacks equally shaped vectors as the rows of a matrix.
    pub fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
        let first = rows.first().ok_or_else(|| TensorError::Contract {
            op: "stack_rows",
            msg: "no rows to stack".into(),
        })?;
        let width = first.len();
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            if r.shape != [width] {
                return Err(TensorError::Shape {
                    op: "stack_rows",
                    lhs: first.shape.clone(),
                    rhs: r.shape.clone(),
                });
            }
            data.extend_from_slice(&r.data);
        }
        Ok(Tensor {
            shape: vec![rows.len(), width],
            data,
        })
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let (rows, cols) = self.as_matrix("row")?;
        if i >= rows {
            return Err(TensorError::Contract {
                op: "row",
                msg: format!("row {i} out of range for {rows} rows"),
            });
        }
        Ok(Tensor::vector(self.data[i * cols..(i + 1) * cols].to_vec()))
    }

    /// Column `j` of a matrix as a vector.
    pub fn column(&self, j: usize) -> Result<Tensor> {
        let (rows, cols) = self.as_matrix("column")?;
        if j >= cols {
            return Err(TensorError::Contract {
                op: "column",
                msg: format!("column {j} out of range for {cols} columns"),
            });
        }
        Ok(Tensor::vector((0..rows).map(|i| self.data[i * cols + j]).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let a = Tensor::matrix(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
        let two = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let three = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        assert_eq!(two.matmul(&three).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = rng.gaussian(&[5, 4]);
        let b = rng.gaussian(&[4, 3]);
        let got = a.matmul(&b).unwrap();
        assert_eq!(got.shape(), &[5, 3]);
        for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(TensorError::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert!((sigmoid(100.0) - 1.0).abs() < 1e-15);
        for x in [-700.0, -100.0, 100.0, 700.0] {
            let y = sigmoid(x);
            assert!(y.is_finite() && (0.0..=1.0).contains(&y));
            assert!(Activation::Tanh.apply(x).is_finite());
        }
    }

    #[test]
    fn softmax_cases() {
        let u = Tensor::vector(vec![2.5; 3]).softmax().unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(Tensor::vector(vec![-4.0]).softmax().unwrap().data(), &[1.0]);
        let x = Tensor::vector(vec![0.3, -1.2, 4.0, 0.0]);
        let shifted = x.map(|v| v + 17.5).softmax().unwrap();
        assert!(x.softmax().unwrap().max_abs_diff(&shifted) < 1e-12);
        assert!(Tensor::vector(vec![]).softmax().is_err());
    }

    #[test]
    fn stack_and_transpose() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        let m = Tensor::stack_rows(&[&a, &b]).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.transpose().unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m.column(1).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(m.row(1).unwrap(), b);
    }
}
