use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bias_view, check_shape, column_sums, fingerprint, glorot_uniform, matrix_view, Activation, NnError, Parameters, TensorView};
use crate::linalg::{gemm_into, Matrix, Vector};

/// Fully connected layer `y = act(x Wᵀ + b)` over a `B × in` batch; `w` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vector,
    pub activation: Activation,
}

impl DenseParams {
    pub fn new(w: Matrix, b: Vector, activation: Activation) -> Result<Self, NnError> {
        check_shape("dense bias", (w.rows(), 1), (b.len(), 1))?;
        Ok(Self { w, b, activation })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: Vector::zeros(output),
            activation,
        }
    }

    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            w: glorot_uniform(output, input, input, output, rng),
            b: Vector::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    fn fingerprint(&self) -> u64 {
        fingerprint([self.w.as_slice(), self.b.as_slice()])
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseCache), NnError> {
        check_shape("dense input", (x.rows(), self.input_dim()), x.shape())?;
        check_shape("dense bias", (self.output_dim(), 1), (self.b.len(), 1))?;
        let mut z = Matrix::zeros(x.rows(), self.output_dim());
        for row in 0..x.rows() {
            z.row_mut(row).copy_from_slice(self.b.as_slice());
        }
        gemm_into(x, false, &self.w, true, &mut z, 1.0);
        let mut y = z.clone();
        if self.activation != Activation::Linear {
            y.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        let cache = DenseCache {
            fingerprint: self.fingerprint(),
            x: x.clone(),
            z,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    /// Gradients given `∂L/∂y`.
    pub fn backward(&self, cache: &DenseCache, grad_y: &Matrix) -> Result<(DenseParams, Matrix), NnError> {
        check_shape("dense output gradient", cache.y.shape(), grad_y.shape())?;
        let mut dz = grad_y.clone();
        if self.activation != Activation::Linear {
            for (d, &y) in dz.as_mut_slice().iter_mut().zip(cache.y.as_slice()) {
                *d *= self.activation.derivative_from_output(y);
            }
        }
        self.backward_pre(cache, &dz)
    }

    /// Gradients given `∂L/∂z` for the pre-activation `z`, bypassing the
    /// activation derivative (used where a loss is fused with the output
    /// nonlinearity).
    pub fn backward_pre(&self, cache: &DenseCache, grad_z: &Matrix) -> Result<(DenseParams, Matrix), NnError> {
        if cache.fingerprint != self.fingerprint() || cache.x.cols() != self.input_dim() {
            return Err(NnError::StaleCache("dense"));
        }
        check_shape("dense pre-activation gradient", cache.z.shape(), grad_z.shape())?;
        let mut dw = Matrix::zeros(self.output_dim(), self.input_dim());
        gemm_into(grad_z, true, &cache.x, false, &mut dw, 0.0);
        let mut dx = Matrix::zeros(cache.x.rows(), self.input_dim());
        gemm_into(grad_z, false, &self.w, false, &mut dx, 0.0);
        let grads = DenseParams {
            w: dw,
            b: Vector::from(column_sums(grad_z)),
            activation: self.activation,
        };
        Ok((grads, dx))
    }
}

impl Parameters for DenseParams {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        vec![matrix_view(prefix, "w", &self.w), bias_view(prefix, "b", &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    fingerprint: u64,
    x: Matrix,
    z: Matrix,
    y: Matrix,
}

impl DenseCache {
    pub fn output(&self) -> &Matrix {
        &self.y
    }

    pub fn pre_activation(&self) -> &Matrix {
        &self.z
    }
}

/// Single-sample forward pass.
pub fn dense_forward(p: &DenseParams, x: &[f64]) -> Result<(Vec<f64>, DenseCache), NnError> {
    let (y, cache) = p.forward(&Matrix::from_vec(1, x.len(), x.to_vec()))?;
    Ok((y.into_vec(), cache))
}

/// Single-sample backward pass.
pub fn dense_backward(p: &DenseParams, cache: &DenseCache, grad_y: &[f64]) -> Result<(DenseParams, Vec<f64>), NnError> {
    let (g, dx) = p.backward(cache, &Matrix::from_vec(1, grad_y.len(), grad_y.to_vec()))?;
    Ok((g, dx.into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(n: usize, activation: Activation) -> DenseParams {
        DenseParams::new(Matrix::identity(n), Vector::zeros(n), activation).unwrap()
    }

    #[test]
    fn identity_examples() {
        let (y, _) = dense_forward(&identity_layer(3, Activation::Linear), &[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
        let (y, _) = dense_forward(&identity_layer(2, Activation::Relu), &[-1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 2.0]);
        let (y, _) = dense_forward(&identity_layer(1, Activation::Sigmoid), &[0.0]).unwrap();
        assert_eq!(y, vec![0.5]);
    }

    #[test]
    fn linear_identity_passes_gradient_through() {
        let p = identity_layer(3, Activation::Linear);
        let (_, cache) = dense_forward(&p, &[0.3, 0.1, -0.4]).unwrap();
        let (_, dx) = dense_backward(&p, &cache, &[1.0, 2.0, -3.0]).unwrap();
        assert_eq!(dx, vec![1.0, 2.0, -3.0]);
    }

    #[test]
    fn relu_at_zero_blocks_gradient() {
        let p = identity_layer(2, Activation::Relu);
        let (_, cache) = dense_forward(&p, &[0.0, 1.0]).unwrap();
        let (g, dx) = dense_backward(&p, &cache, &[5.0, 5.0]).unwrap();
        assert_eq!(dx, vec![0.0, 5.0]);
        assert_eq!(g.b.as_slice(), &[0.0, 5.0]);
    }

    #[test]
    fn shape_and_cache_errors() {
        let p = DenseParams::zeros(3, 2, Activation::Relu);
        assert!(dense_forward(&p, &[1.0, 2.0]).is_err());
        assert!(DenseParams::new(Matrix::zeros(2, 3), Vector::zeros(3), Activation::Linear).is_err());
        let (_, cache) = dense_forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        let mut q = p.clone();
        q.b.as_mut_slice()[0] = 1.0;
        assert!(matches!(dense_backward(&q, &cache, &[1.0, 1.0]), Err(NnError::StaleCache(_))));
        assert!(dense_backward(&p, &cache, &[1.0]).is_err());
    }

    #[test]
    fn linear_squared_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DenseParams::init(4, 3, Activation::Linear, &mut rng);
        let x = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let err = grad_check(&p.flatten(), 1e-5, |theta| {
            let mut pp = p.clone();
            pp.load_flat(theta);
            let (y, cache) = pp.forward(&x).unwrap();
            let loss = 0.5 * y.as_slice().iter().map(|v| v * v).sum::<f64>();
            let (g, _) = pp.backward(&cache, &y).unwrap();
            (loss, g.flatten())
        });
        assert!(err < 1e-8, "{err}");
    }

    fn check_activation(activation: Activation, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = DenseParams::init(6, 5, activation, &mut rng);
        let x = Matrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let up = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let mut theta = p.flatten();
        theta.extend_from_slice(x.as_slice());
        let np = p.num_params();
        grad_check(&theta, 1e-5, |all| {
            let mut pp = p.clone();
            pp.load_flat(&all[..np]);
            let xx = Matrix::from_vec(4, 6, all[np..].to_vec());
            let (y, cache) = pp.forward(&xx).unwrap();
            let loss = y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum();
            let (g, dx) = pp.backward(&cache, &up).unwrap();
            let mut flat = g.flatten();
            flat.extend(dx.into_vec());
            (loss, flat)
        })
    }

    #[test]
    fn activations_match_finite_differences() {
        for act in [Activation::Linear, Activation::Sigmoid, Activation::Relu] {
            let err = check_activation(act, 17);
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }
}
