//! Rectified linear unit: `max(0, x)` elementwise.

use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let data = x
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().clone(), data).expect("shapes verified")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape;
    use rand::{RngExt, SeedableRng};

    #[test]
    fn clamps_negatives() {
        let x = Tensor::from_vec(shape![3], vec![-2.0, 0.0, 7.0]).unwrap();
        assert_eq!(relu_forward(&x).as_slice(), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn dead_region_kills_gradient() {
        let x: Tensor = Tensor::filled(shape![2, 2], -1.0);
        let g: Tensor = Tensor::filled(shape![2, 2], 5.0);
        assert!(relu_forward(&x).as_slice().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&x, &g).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_init_zeroes_about_half() {
        // Symmetric uniform weights: about half land negative.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x = Tensor::from_vec(shape![n], data).unwrap();
        let zeros = relu_forward(&x).as_slice().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "zero fraction {frac}");
    }
}
