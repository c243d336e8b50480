//! 2-D convolution (cross-correlation) with zero padding, via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct ConvParams<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel extents (n, m) = (height, width).
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels, in_channels, n, m]`
    pub weights: Tensor<T>,
    /// `[out_channels]`
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        weights: Tensor<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let expected = [out_channels, in_channels, kernel.0, kernel.1];
        if weights.shape().dims() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                got: weights.shape().dims().to_vec(),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::DimensionMismatch { expected: out_channels, got: bias.len() });
        }
        if stride == 0 {
            return Err(Error::InvalidShape("stride must be positive".into()));
        }
        Ok(ConvParams { in_channels, out_channels, kernel, stride, padding, weights, bias })
    }

    pub fn zeroed(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Self {
        let weights = Tensor::zeros(
            Shape::new(vec![out_channels, in_channels, kernel.0, kernel.1]).unwrap(),
        );
        ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias: vec![T::zero(); out_channels],
        }
    }

    /// `floor((extent + 2*padding - kernel) / stride) + 1`
    pub fn out_extent(&self, extent: usize, kernel: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if kernel > padded {
            return Err(Error::DegenerateOutput { kernel, padded });
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn out_shape(&self, input: &Shape) -> Result<Shape> {
        let dims = input.dims();
        let (c, h, w) = match dims {
            &[c, h, w] => (c, h, w),
            _ => return Err(Error::InvalidShape(format!("conv expects rank-3, got {dims:?}"))),
        };
        if c != self.in_channels {
            return Err(Error::ChannelMismatch { expected: self.in_channels, got: c });
        }
        let oh = self.out_extent(h, self.kernel.0)?;
        let ow = self.out_extent(w, self.kernel.1)?;
        Shape::new(vec![self.out_channels, oh, ow])
    }
}

/// Unrolls padded input patches into a `[C*kh*kw, oh*ow]` matrix.
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); c * kh * kw * oh * ow];
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for u in 0..oh {
                    let src_i = (u * stride + ki) as isize - pad as isize;
                    if src_i < 0 || src_i >= h as isize {
                        continue;
                    }
                    let src_row = &plane[src_i as usize * w..(src_i as usize + 1) * w];
                    let out_row = &mut dst[u * ow..(u + 1) * ow];
                    for (v, slot) in out_row.iter_mut().enumerate() {
                        let src_j = (v * stride + kj) as isize - pad as isize;
                        if src_j >= 0 && src_j < w as isize {
                            *slot = src_row[src_j as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatters a `[C*kh*kw, oh*ow]` gradient matrix back onto the input layout.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut x = vec![T::zero(); c * h * w];
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for u in 0..oh {
                    let dst_i = (u * stride + ki) as isize - pad as isize;
                    if dst_i < 0 || dst_i >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[dst_i as usize * w..(dst_i as usize + 1) * w];
                    for v in 0..ow {
                        let dst_j = (v * stride + kj) as isize - pad as isize;
                        if dst_j >= 0 && dst_j < w as isize {
                            dst_row[dst_j as usize] = dst_row[dst_j as usize] + src[u * ow + v];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// `out[o,u,v] = bias[o] + sum_c sum_i sum_j weights[o,c,i,j] * x_pad[c, u*s+i, v*s+j]`
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let out_shape = p.out_shape(x.shape())?;
    let (c, h, w) = x.chw()?;
    let (kh, kw) = p.kernel;
    let (oh, ow) = (out_shape.dims()[1], out_shape.dims()[2]);

    let cols = im2col(x.as_slice(), c, h, w, kh, kw, p.stride, p.padding, oh, ow);
    let kdim = c * kh * kw;
    let span = oh * ow;

    let mut out = vec![T::zero(); p.out_channels * span];
    for (o, chunk) in out.chunks_mut(span).enumerate() {
        chunk.fill(p.bias[o]);
    }
    T::gemm(
        p.out_channels,
        kdim,
        span,
        T::one(),
        p.weights.as_slice(),
        kdim as isize,
        1,
        &cols,
        span as isize,
        1,
        T::one(),
        &mut out,
        span as isize,
        1,
    );
    Tensor::from_vec(out_shape, out)
}

pub struct ConvGrads<T: Scalar = f32> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Vec<T>,
}

/// Analytic gradients of [`conv_forward`] with respect to input, weights, bias.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = p.out_shape(x.shape())?;
    if grad_out.shape() != &out_shape {
        return Err(Error::ShapeMismatch {
            expected: out_shape.dims().to_vec(),
            got: grad_out.shape().dims().to_vec(),
        });
    }
    let (c, h, w) = x.chw()?;
    let (kh, kw) = p.kernel;
    let (oh, ow) = (out_shape.dims()[1], out_shape.dims()[2]);
    let kdim = c * kh * kw;
    let span = oh * ow;

    let grad_bias: Vec<T> = grad_out
        .as_slice()
        .chunks(span)
        .map(|chunk| chunk.iter().fold(T::zero(), |acc, &g| acc + g))
        .collect();

    let cols = im2col(x.as_slice(), c, h, w, kh, kw, p.stride, p.padding, oh, ow);

    // grad_w[o, r] = sum_s grad_out[o, s] * cols[r, s]
    let mut grad_w = vec![T::zero(); p.out_channels * kdim];
    T::gemm(
        p.out_channels,
        span,
        kdim,
        T::one(),
        grad_out.as_slice(),
        span as isize,
        1,
        &cols,
        1,
        span as isize,
        T::zero(),
        &mut grad_w,
        kdim as isize,
        1,
    );

    // grad_cols[r, s] = sum_o weights[o, r] * grad_out[o, s]
    let mut grad_cols = vec![T::zero(); kdim * span];
    T::gemm(
        kdim,
        p.out_channels,
        span,
        T::one(),
        p.weights.as_slice(),
        1,
        kdim as isize,
        grad_out.as_slice(),
        span as isize,
        1,
        T::zero(),
        &mut grad_cols,
        span as isize,
        1,
    );
    let grad_input = col2im(&grad_cols, c, h, w, kh, kw, p.stride, p.padding, oh, ow);

    Ok(ConvGrads {
        grad_input: Tensor::from_vec(x.shape().clone(), grad_input)?,
        grad_weights: Tensor::from_vec(p.weights.shape().clone(), grad_w)?,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape;

    fn unit_1x1() -> ConvParams<f32> {
        ConvParams::new(
            1,
            1,
            (1, 1),
            1,
            0,
            Tensor::from_vec(shape![1, 1, 1, 1], vec![1.0]).unwrap(),
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn table_i_conv1_shape() {
        let p = ConvParams::<f32>::zeroed(1, 64, (7, 7), 2, 3);
        let out = p.out_shape(&shape![1, 224, 224]).unwrap();
        assert_eq!(out.dims(), &[64, 112, 112]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_vec(shape![1, 2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let out = conv_forward(&x, &unit_1x1()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn two_by_two_all_ones_kernel() {
        // Independent oracle: four-term summation per output cell.
        let x =
            Tensor::from_vec(shape![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let p = ConvParams::new(
            1,
            1,
            (2, 2),
            1,
            0,
            Tensor::filled(shape![1, 1, 2, 2], 1.0),
            vec![0.0],
        )
        .unwrap();
        let out = conv_forward(&x, &p).unwrap();
        assert_eq!(out.shape().dims(), &[1, 2, 2]);
        assert_eq!(out.as_slice(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = ConvParams::<f32>::zeroed(3, 4, (3, 3), 1, 1);
        let x: Tensor = Tensor::zeros(shape![2, 8, 8]);
        assert!(matches!(conv_forward(&x, &p), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        let p = ConvParams::<f32>::zeroed(1, 1, (5, 5), 1, 0);
        let x: Tensor = Tensor::zeros(shape![1, 3, 3]);
        assert!(matches!(conv_forward(&x, &p), Err(Error::DegenerateOutput { .. })));
    }

    #[test]
    fn backward_zero_case() {
        let p = ConvParams::<f32>::zeroed(1, 2, (2, 2), 1, 0);
        let x: Tensor = Tensor::zeros(shape![1, 4, 4]);
        let grad_out: Tensor = Tensor::filled(shape![2, 3, 3], 1.0);
        let grads = conv_backward(&x, &p, &grad_out).unwrap();
        assert!(grads.grad_weights.as_slice().iter().all(|&g| g == 0.0));
        assert_eq!(grads.grad_bias, vec![9.0, 9.0]);
    }

    #[test]
    fn backward_through_identity() {
        let grad_out = Tensor::from_vec(shape![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x: Tensor = Tensor::zeros(shape![1, 2, 2]);
        let grads = conv_backward(&x, &unit_1x1(), &grad_out).unwrap();
        assert_eq!(grads.grad_input, grad_out);
    }

    #[test]
    fn backward_shape_mismatch_rejected() {
        let p = ConvParams::<f32>::zeroed(1, 1, (2, 2), 1, 0);
        let x: Tensor = Tensor::zeros(shape![1, 4, 4]);
        let bad: Tensor = Tensor::zeros(shape![1, 2, 2]);
        assert!(conv_backward(&x, &p, &bad).is_err());
    }
}
