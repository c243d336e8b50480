//! Finite-difference gradient checking, run in 64-bit mode.

use crate::layers::conv::{conv_backward, conv_forward, ConvParams};
use crate::layers::fc::{fc_backward, fc_forward, FcParams};
use crate::layers::lrn::{lrn_backward, lrn_forward, LrnParams};
use crate::layers::pool::{maxpool_backward, maxpool_forward, PoolParams};
use crate::layers::relu::{relu_backward, relu_forward};
use crate::tensor::{Shape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of one gradient check. Failures are reported, not thrown.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub max_rel_err: f64,
    pub worst_coordinate: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (max rel err {:.3e} at {}, tolerance {:.0e})",
            self.layer,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.worst_coordinate,
            self.tolerance
        )
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs())).max(1e-8)
}

/// Folds per-coordinate comparisons into a report.
pub struct ErrorTracker {
    layer: String,
    max_rel_err: f64,
    worst: String,
}

impl ErrorTracker {
    pub fn new(layer: impl Into<String>) -> Self {
        ErrorTracker { layer: layer.into(), max_rel_err: 0.0, worst: "-".into() }
    }

    pub fn record(&mut self, coordinate: impl Into<String>, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = coordinate.into();
        }
    }

    pub fn finish(self, tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            passed: self.max_rel_err <= tolerance,
            layer: self.layer,
            max_rel_err: self.max_rel_err,
            worst_coordinate: self.worst,
            tolerance,
        }
    }
}

/// Central difference of a scalar-valued function at coordinate `idx` of `x`.
pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &mut Vec<f64>,
    idx: usize,
    eps: f64,
) -> f64 {
    let orig = x[idx];
    x[idx] = orig + eps;
    let plus = f(x);
    x[idx] = orig - eps;
    let minus = f(x);
    x[idx] = orig;
    (plus - minus) / (2.0 * eps)
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let data = (0..shape.num_elements()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Checks conv gradients (input, weights, bias) on a random 3x3-kernel case.
pub fn check_conv(seed: u64, eps: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[2, 6, 6], -1.0, 1.0);
    let weights = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let bias: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    let p = ConvParams::new(2, 3, (3, 3), 1, 1, weights, bias).unwrap();
    let proj = projection(&mut rng, p.out_shape(x.shape()).unwrap().num_elements());

    let grad_out =
        Tensor::from_vec(p.out_shape(x.shape()).unwrap(), proj.clone()).unwrap();
    let grads = conv_backward(&x, &p, &grad_out).unwrap();

    let mut tracker = ErrorTracker::new("conv");

    let mut xs = x.as_slice().to_vec();
    let x_shape = x.shape().clone();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(x_shape.clone(), v.to_vec()).unwrap();
            dot(conv_forward(&xt, &p).unwrap().as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        tracker.record(format!("input[{i}]"), grads.grad_input.as_slice()[i], num);
    }

    let mut ws = p.weights.as_slice().to_vec();
    let w_shape = p.weights.shape().clone();
    for i in 0..ws.len() {
        let mut f = |v: &[f64]| {
            let mut pp = p.clone();
            pp.weights = Tensor::from_vec(w_shape.clone(), v.to_vec()).unwrap();
            dot(conv_forward(&x, &pp).unwrap().as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut ws, i, eps);
        tracker.record(format!("weights[{i}]"), grads.grad_weights.as_slice()[i], num);
    }

    let mut bs = p.bias.clone();
    for i in 0..bs.len() {
        let mut f = |v: &[f64]| {
            let mut pp = p.clone();
            pp.bias = v.to_vec();
            dot(conv_forward(&x, &pp).unwrap().as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut bs, i, eps);
        tracker.record(format!("bias[{i}]"), grads.grad_bias[i], num);
    }

    tracker.finish(tolerance)
}

/// Checks FC gradients on a random dense case.
pub fn check_fc(seed: u64, eps: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, l) = (10, 6);
    let x = random_tensor(&mut rng, &[k], -1.0, 1.0);
    let weights = random_tensor(&mut rng, &[l, k], -0.5, 0.5);
    let bias: Vec<f64> = (0..l).map(|_| rng.random_range(-0.5..0.5)).collect();
    let p = FcParams::new(k, l, weights, bias).unwrap();
    let proj = projection(&mut rng, l);

    let grads = fc_backward(&x, &p, &proj).unwrap();
    let mut tracker = ErrorTracker::new("fc");

    let mut xs = x.as_slice().to_vec();
    let x_shape = x.shape().clone();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(x_shape.clone(), v.to_vec()).unwrap();
            dot(&fc_forward(&xt, &p).unwrap(), &proj)
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        tracker.record(format!("input[{i}]"), grads.grad_input.as_slice()[i], num);
    }
    let mut ws = p.weights.as_slice().to_vec();
    let w_shape = p.weights.shape().clone();
    for i in 0..ws.len() {
        let mut f = |v: &[f64]| {
            let mut pp = p.clone();
            pp.weights = Tensor::from_vec(w_shape.clone(), v.to_vec()).unwrap();
            dot(&fc_forward(&x, &pp).unwrap(), &proj)
        };
        let num = central_difference(&mut f, &mut ws, i, eps);
        tracker.record(format!("weights[{i}]"), grads.grad_weights.as_slice()[i], num);
    }
    let mut bs = p.bias.clone();
    for i in 0..bs.len() {
        let mut f = |v: &[f64]| {
            let mut pp = p.clone();
            pp.bias = v.to_vec();
            dot(&fc_forward(&x, &pp).unwrap(), &proj)
        };
        let num = central_difference(&mut f, &mut bs, i, eps);
        tracker.record(format!("bias[{i}]"), grads.grad_bias[i], num);
    }
    tracker.finish(tolerance)
}

/// Checks LRN input gradients on a random `[4,2,2]` case.
pub fn check_lrn(seed: u64, eps: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[4, 2, 2], -1.0, 1.0);
    let p = LrnParams { local_size: 3, alpha: 0.5, beta: 0.75, k: 1.0 };
    let proj = projection(&mut rng, x.len());
    let grad_out = Tensor::from_vec(x.shape().clone(), proj.clone()).unwrap();
    let grads = lrn_backward(&x, &p, &grad_out).unwrap();

    let mut tracker = ErrorTracker::new("lrn");
    let mut xs = x.as_slice().to_vec();
    let x_shape = x.shape().clone();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(x_shape.clone(), v.to_vec()).unwrap();
            dot(lrn_forward(&xt, &p).unwrap().as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        tracker.record(format!("input[{i}]"), grads.as_slice()[i], num);
    }
    tracker.finish(tolerance)
}

/// Checks max-pool input gradients away from ties (random continuous values).
pub fn check_maxpool(seed: u64, eps: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distinct values spaced well beyond 2*eps, shuffled: the window argmax
    // cannot flip inside the finite-difference probe.
    let mut vals: Vec<f64> = (0..36).map(|i| (i as f64 - 18.0) * 0.05).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng);
    let x = Tensor::from_vec(Shape::new(vec![1, 6, 6]).unwrap(), vals).unwrap();
    let p = PoolParams::new(3, 1, 0).unwrap();
    let (out, map) = maxpool_forward(&x, &p).unwrap();
    let proj = projection(&mut rng, out.len());
    let grad_out = Tensor::from_vec(out.shape().clone(), proj.clone()).unwrap();
    let grads = maxpool_backward(&map, &grad_out).unwrap();

    let mut tracker = ErrorTracker::new("maxpool");
    let mut xs = x.as_slice().to_vec();
    let x_shape = x.shape().clone();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(x_shape.clone(), v.to_vec()).unwrap();
            dot(maxpool_forward(&xt, &p).unwrap().0.as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        tracker.record(format!("input[{i}]"), grads.as_slice()[i], num);
    }
    tracker.finish(tolerance)
}

/// Checks ReLU gradients probed away from the kink (`|x| > 0.1`).
pub fn check_relu(seed: u64, eps: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..64)
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_range(0..2) == 0 { mag } else { -mag }
        })
        .collect();
    let x = Tensor::from_vec(Shape::new(vec![64]).unwrap(), data).unwrap();
    let proj = projection(&mut rng, x.len());
    let grad_out = Tensor::from_vec(x.shape().clone(), proj.clone()).unwrap();
    let grads = relu_backward(&x, &grad_out);

    let mut tracker = ErrorTracker::new("relu");
    let mut xs = x.as_slice().to_vec();
    let x_shape = x.shape().clone();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(x_shape.clone(), v.to_vec()).unwrap();
            dot(relu_forward(&xt).as_slice(), &proj)
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        tracker.record(format!("input[{i}]"), grads.as_slice()[i], num);
    }
    tracker.finish(tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fc_is_exact_to_rounding() {
        let report = check_fc(1, DEFAULT_EPSILON, DEFAULT_TOLERANCE);
        assert!(report.passed, "{report}");
        // Linear map: central differences are exact up to rounding.
        assert!(report.max_rel_err < 1e-8, "{report}");
    }

    #[test]
    fn conv_below_tolerance() {
        let report = check_conv(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn lrn_below_tolerance() {
        let report = check_lrn(3, DEFAULT_EPSILON, DEFAULT_TOLERANCE);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn maxpool_below_tolerance_away_from_ties() {
        let report = check_maxpool(4, DEFAULT_EPSILON, DEFAULT_TOLERANCE);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn relu_below_tolerance_away_from_kink() {
        let report = check_relu(5, DEFAULT_EPSILON, DEFAULT_TOLERANCE);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn injected_sign_bug_is_reported_with_coordinate() {
        // Broken backward: sign-flipped analytic gradient must fail loudly.
        let mut tracker = ErrorTracker::new("fixture");
        let mut x = vec![0.7, -0.3];
        for i in 0..x.len() {
            let mut f = |v: &[f64]| 2.0 * v[0] + 3.0 * v[1];
            let num = central_difference(&mut f, &mut x, i, DEFAULT_EPSILON);
            let broken_analytic = -[2.0, 3.0][i];
            tracker.record(format!("input[{i}]"), broken_analytic, num);
        }
        let report = tracker.finish(DEFAULT_TOLERANCE);
        assert!(!report.passed);
        assert!(report.worst_coordinate.starts_with("input["));
    }
}
