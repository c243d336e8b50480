//! Across-channel local response normalization.
//!
//! `out[c,u,v] = x[c,u,v] / (k + (alpha/n) * sum_{c' in win(c)} x[c',u,v]^2)^beta`
//! with the channel window of size `local_size` centered at `c` and clipped at
//! the channel boundaries.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrnParams {
    /// Odd channel-window count.
    pub local_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams { local_size: 5, alpha: 1e-4, beta: 0.75, k: 1.0 }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.local_size == 0 || self.local_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "LRN local_size must be odd and >= 1, got {}",
                self.local_size
            )));
        }
        if self.beta <= 0.0 || self.k <= 0.0 {
            return Err(Error::InvalidConfig("LRN requires beta > 0 and k > 0".into()));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> (usize, usize) {
        let half = (self.local_size - 1) / 2;
        let lo = c.saturating_sub(half);
        let hi = (c + half).min(channels - 1);
        (lo, hi)
    }
}

pub fn lrn_forward<T: Scalar>(x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    p.validate()?;
    let (c, h, w) = x.chw()?;
    let plane = h * w;
    let data = x.as_slice();
    let alpha_n = T::from_f64_lossy(p.alpha / p.local_size as f64);
    let k = T::from_f64_lossy(p.k);
    let beta = T::from_f64_lossy(p.beta);

    let mut out = vec![T::zero(); data.len()];
    for ch in 0..c {
        let (lo, hi) = p.window(ch, c);
        for s in 0..plane {
            let mut sq = T::zero();
            for cw in lo..=hi {
                let v = data[cw * plane + s];
                sq = sq + v * v;
            }
            let denom = (k + alpha_n * sq).powf(beta);
            out[ch * plane + s] = data[ch * plane + s] / denom;
        }
    }
    Tensor::from_vec(x.shape().clone(), out)
}

/// Analytic gradient. With `S_c = k + (alpha/n) * sum_win x^2`:
/// `grad_x[e] = g[e] * S_e^-beta
///            - (2*alpha*beta/n) * x[e] * sum_{c: e in win(c)} g[c]*x[c]*S_c^(-beta-1)`
pub fn lrn_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &LrnParams,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    p.validate()?;
    if grad_out.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape().dims().to_vec(),
            got: grad_out.shape().dims().to_vec(),
        });
    }
    let (c, h, w) = x.chw()?;
    let plane = h * w;
    let data = x.as_slice();
    let g = grad_out.as_slice();
    let alpha_n = T::from_f64_lossy(p.alpha / p.local_size as f64);
    let k = T::from_f64_lossy(p.k);
    let beta = T::from_f64_lossy(p.beta);
    let two = T::from_f64_lossy(2.0);

    // Precompute S_c^-beta and g*x*S_c^(-beta-1) per (channel, site).
    let mut pow_neg_beta = vec![T::zero(); data.len()];
    let mut weighted = vec![T::zero(); data.len()];
    for ch in 0..c {
        let (lo, hi) = p.window(ch, c);
        for s in 0..plane {
            let mut sq = T::zero();
            for cw in lo..=hi {
                let v = data[cw * plane + s];
                sq = sq + v * v;
            }
            let scale = k + alpha_n * sq;
            let pnb = scale.powf(-beta);
            let idx = ch * plane + s;
            pow_neg_beta[idx] = pnb;
            weighted[idx] = g[idx] * data[idx] * pnb / scale;
        }
    }

    let mut grad = vec![T::zero(); data.len()];
    for e in 0..c {
        // e is inside win(c) exactly when c is inside win(e).
        let (lo, hi) = p.window(e, c);
        for s in 0..plane {
            let idx = e * plane + s;
            let mut acc = T::zero();
            for cw in lo..=hi {
                acc = acc + weighted[cw * plane + s];
            }
            grad[idx] = g[idx] * pow_neg_beta[idx] - two * alpha_n * beta * data[idx] * acc;
        }
    }
    Tensor::from_vec(x.shape().clone(), grad)
}
