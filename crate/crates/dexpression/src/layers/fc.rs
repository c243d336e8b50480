//! Fully connected layer `out = W*x + bias` with identity activation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct FcParams<T: Scalar = f32> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out_dim, in_dim]`
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        if weights.shape().dims() != [out_dim, in_dim] {
            return Err(Error::ShapeMismatch {
                expected: vec![out_dim, in_dim],
                got: weights.shape().dims().to_vec(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch { expected: out_dim, got: bias.len() });
        }
        Ok(FcParams { in_dim, out_dim, weights, bias })
    }

    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        FcParams {
            in_dim,
            out_dim,
            weights: Tensor::zeros(Shape::new(vec![out_dim, in_dim]).unwrap()),
            bias: vec![T::zero(); out_dim],
        }
    }
}

/// Input is flattened; its element count must equal `in_dim`.
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, p: &FcParams<T>) -> Result<Vec<T>> {
    if x.len() != p.in_dim {
        return Err(Error::DimensionMismatch { expected: p.in_dim, got: x.len() });
    }
    let w = p.weights.as_slice();
    let xs = x.as_slice();
    let out = (0..p.out_dim)
        .map(|row| {
            let r = &w[row * p.in_dim..(row + 1) * p.in_dim];
            r.iter()
                .zip(xs)
                .fold(p.bias[row], |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect();
    Ok(out)
}

pub struct FcGrads<T: Scalar = f32> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Vec<T>,
}

/// `grad_x = W^T*g`, `grad_W = g (outer) x`, `grad_bias = g`.
pub fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &FcParams<T>,
    grad_out: &[T],
) -> Result<FcGrads<T>> {
    if x.len() != p.in_dim {
        return Err(Error::DimensionMismatch { expected: p.in_dim, got: x.len() });
    }
    if grad_out.len() != p.out_dim {
        return Err(Error::DimensionMismatch { expected: p.out_dim, got: grad_out.len() });
    }
    let w = p.weights.as_slice();
    let xs = x.as_slice();

    let mut grad_x = vec![T::zero(); p.in_dim];
    let mut grad_w = vec![T::zero(); p.out_dim * p.in_dim];
    for row in 0..p.out_dim {
        let g = grad_out[row];
        let wr = &w[row * p.in_dim..(row + 1) * p.in_dim];
        let gwr = &mut grad_w[row * p.in_dim..(row + 1) * p.in_dim];
        for i in 0..p.in_dim {
            grad_x[i] = grad_x[i] + wr[i] * g;
            gwr[i] = g * xs[i];
        }
    }
    Ok(FcGrads {
        grad_input: Tensor::from_vec(x.shape().clone(), grad_x)?,
        grad_weights: Tensor::from_vec(p.weights.shape().clone(), grad_w)?,
        grad_bias: grad_out.to_vec(),
    })
}
