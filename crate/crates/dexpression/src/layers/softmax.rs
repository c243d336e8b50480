//! Softmax output mapping and argmax class selection.

use crate::tensor::Scalar;

/// Numerically stable softmax: the max is subtracted before exponentiation.
pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    assert!(!x.is_empty(), "softmax input must be non-empty");
    let max = x.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(sum_i exp(x_i))`, max-subtracted.
pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let sum = x.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

/// Smallest index attaining the maximum value.
pub fn argmax_class<T: Scalar>(x: &[T]) -> usize {
    assert!(!x.is_empty(), "argmax input must be non-empty");
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};

    #[test]
    fn symmetric_pair() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let out = softmax(&[1000.0f32, 0.0]);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(out[0] > 0.999);
        assert!(out[1] < 1e-3);
    }

    #[test]
    fn shift_invariance_is_bitwise() {
        // Dyadic inputs and shift: every sum is exact in f32, so the
        // max-subtracted differences are bit-identical.
        let x = [0.25f32, -1.25, 2.5, 0.0];
        let shifted: Vec<f32> = x.iter().map(|v| v + 17.5).collect();
        assert_eq!(softmax(&x), softmax(&shifted));
    }

    #[test]
    fn sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f32> = (0..9).map(|_| rng.random_range(-10.0..10.0)).collect();
            let s: f32 = softmax(&x).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_class(&[0.1f32, 0.7, 0.2]), 1);
        assert_eq!(argmax_class(&[0.5f32, 0.5]), 0);
    }

    #[test]
    fn argmax_commutes_with_softmax() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(argmax_class(&softmax(&x)), argmax_class(&x));
        }
    }
}
