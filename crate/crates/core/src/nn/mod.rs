//! Layers with hand-derived gradients.
//!
//! Everything works on mini-batches: a dense input is a `B × n` matrix and a
//! sequence is one `B × q` matrix per time step. Forward passes return a cache
//! that the matching backward pass consumes; a cache remembers a fingerprint
//! of the parameters it was produced with and is rejected once they change.

mod dense;
mod dropout;
mod gradcheck;
mod lstm;
mod stack;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Vector};

pub use dense::{dense_backward, dense_forward, DenseCache, DenseParams};
pub use dropout::{dropout, DropoutMode};
pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_FLOOR};
pub use lstm::{lstm_backward, lstm_forward, Gate, LstmCache, LstmParams, LstmState, SeqGrad};
pub use stack::{FeatureCache, FeatureExtractor, Head, HeadCache};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("cache does not belong to these parameters ({0})")]
    StaleCache(&'static str),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub(crate) fn check_shape(op: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<(), NnError> {
    if expected != got {
        return Err(NnError::Shape { op, expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y`. ReLU uses 0 at 0.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Element-wise ReLU of a matrix.
pub fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of ReLU given its output: passes `grad` where `y > 0`.
pub fn relu_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    let mut g = grad.clone();
    for (gv, &yv) in g.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if yv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Gradient-reversal layer, forward pass: the identity.
pub fn grl_forward(x: &Matrix) -> Matrix {
    x.clone()
}

/// Gradient-reversal layer, backward pass: `-alpha * grad`.
pub fn grl_backward(grad: &[f64], alpha: f64) -> Vec<f64> {
    grad.iter().map(|g| -alpha * g).collect()
}

/// Matrix form of [`grl_backward`].
pub fn grl_backward_matrix(grad: &Matrix, alpha: f64) -> Matrix {
    grad.scaled(-alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

/// Read-only view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
    pub data: &'a [f64],
}

/// A block of trainable tensors. Gradient blocks reuse the parameter type, so
/// `tensors` and `tensors_mut` must list tensors in the same order.
pub trait Parameters {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors("").iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors("").iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    fn scale_all(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors("").iter().flat_map(|t| t.data.iter()).map(|v| v * v).sum()
    }

    /// A copy with every tensor zeroed, used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

pub(crate) fn matrix_view<'a>(prefix: &str, name: &str, m: &'a Matrix) -> TensorView<'a> {
    TensorView {
        name: format!("{prefix}{name}"),
        rows: m.rows(),
        cols: m.cols(),
        kind: TensorKind::Weight,
        data: m.as_slice(),
    }
}

pub(crate) fn bias_view<'a>(prefix: &str, name: &str, v: &'a Vector) -> TensorView<'a> {
    TensorView {
        name: format!("{prefix}{name}"),
        rows: 1,
        cols: v.len(),
        kind: TensorKind::Bias,
        data: v.as_slice(),
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

/// FNV-1a over the bit patterns of every parameter.
pub(crate) fn fingerprint<'a>(slices: impl IntoIterator<Item = &'a [f64]>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in slices {
        for v in s {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Column sums of a `B × n` matrix.
pub(crate) fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grl_scales_and_negates() {
        assert_eq!(grl_backward(&[1.0, -2.0], 0.8), vec![-0.8, 1.6]);
        assert!(grl_backward(&[3.0, 4.0], 0.0).iter().all(|&v| v == 0.0));
        let g = [0.1, -7.25, 1e-300];
        let out = grl_backward(&g, 1.0);
        for (a, b) in out.iter().zip(&g) {
            assert_eq!(a.to_bits(), (-b).to_bits());
        }
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(grl_forward(&x), x);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative_from_output(0.0), 0.0);
        let y = relu(&Matrix::from_rows(&[[-1.0, 0.0, 2.0]]));
        assert_eq!(y.as_slice(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&y, &Matrix::from_rows(&[[5.0, 5.0, 5.0]]));
        assert_eq!(g.as_slice(), &[0.0, 0.0, 5.0]);
    }

    proptest::proptest! {
        #[test]
        fn grl_is_exact_negated_scaling(g in proptest::collection::vec(-1e6f64..1e6, 0..20), alpha in 0.0f64..5.0) {
            let out = grl_backward(&g, alpha);
            for (o, v) in out.iter().zip(&g) {
                proptest::prop_assert_eq!(*o, -alpha * v);
            }
        }
    }
}
