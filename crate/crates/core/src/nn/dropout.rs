use rand::Rng;

use super::NnError;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the mask it was multiplied by;
/// mask entries are 0 or `1 / (1 - rate)`. The backward pass multiplies the
/// upstream gradient by the same mask. Eval mode and `rate == 0` draw nothing
/// from `rng`.
pub fn dropout(x: &Matrix, rate: f64, mode: DropoutMode, rng: &mut impl Rng) -> Result<(Matrix, Matrix), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        let mut mask = Matrix::zeros(x.rows(), x.cols());
        mask.fill(1.0);
        return Ok((x.clone(), mask));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
    let mut y = x.clone();
    for (v, m) in y.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *v *= m;
    }
    Ok((y, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, mask) = dropout(&x, 0.0, DropoutMode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.as_slice().iter().all(|&m| m == 1.0));
        let (y, _) = dropout(&x, 0.9, DropoutMode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_bad_rates() {
        let x = Matrix::zeros(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout(&x, 1.0, DropoutMode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, DropoutMode::Eval, &mut rng).is_err());
    }

    #[test]
    fn expectation_is_preserved() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5, 4.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 100_000;
        let mut sum = [0.0; 4];
        for _ in 0..trials {
            let (y, _) = dropout(&x, 0.5, DropoutMode::Train, &mut rng).unwrap();
            for (s, v) in sum.iter_mut().zip(y.as_slice()) {
                *s += v;
            }
        }
        for (s, v) in sum.iter().zip(x.as_slice()) {
            let mean = s / trials as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "{mean} vs {v}");
        }
    }

    #[test]
    fn masks_reproducible_under_seed() {
        let x = Matrix::from_fn(8, 8, |i, j| (i * 8 + j) as f64);
        let a = dropout(&x, 0.3, DropoutMode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout(&x, 0.3, DropoutMode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.1.as_slice().iter().all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-15));
    }
}
