//! Max pooling with ceiling-rounded output extents.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolParams {
    /// Square window extent.
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolParams {
    pub fn new(window: usize, stride: usize, padding: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidShape("pool window and stride must be positive".into()));
        }
        Ok(PoolParams { window, stride, padding })
    }

    /// Ceiling rounding (112 -> 56 under 3x3/stride 2 requires it). A window
    /// larger than the padded input clips to the valid region (extent 1); the
    /// last window is dropped if it would start past the input.
    pub fn out_extent(&self, extent: usize) -> Result<usize> {
        let padded = (extent + 2 * self.padding) as isize;
        let w = self.window as isize;
        let s = self.stride as isize;
        let mut out = div_ceil_signed(padded - w, s) + 1;
        if out < 1 {
            return Err(Error::DegenerateOutput { kernel: self.window, padded: padded as usize });
        }
        if (out - 1) * s >= (extent + self.padding) as isize {
            out -= 1;
        }
        if out < 1 {
            return Err(Error::DegenerateOutput { kernel: self.window, padded: padded as usize });
        }
        Ok(out as usize)
    }

    pub fn out_shape(&self, input: &Shape) -> Result<Shape> {
        let (c, h, w) = match input.dims() {
            &[c, h, w] => (c, h, w),
            dims => return Err(Error::InvalidShape(format!("pool expects rank-3, got {dims:?}"))),
        };
        Shape::new(vec![c, self.out_extent(h)?, self.out_extent(w)?])
    }
}

// Ceiling division for a possibly-negative numerator, positive divisor.
fn div_ceil_signed(a: isize, b: isize) -> isize {
    if a >= 0 { (a + b - 1) / b } else { a / b }
}

/// Flat source index of each output cell's maximum, for the backward pass.
#[derive(Debug, Clone)]
pub struct ArgmaxMap {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub indices: Vec<usize>,
}

/// Each output cell is the max over its window; padding cells are never
/// candidates. First-encountered maximum wins on ties (row-major scan).
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &PoolParams,
) -> Result<(Tensor<T>, ArgmaxMap)> {
    let out_shape = p.out_shape(x.shape())?;
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (out_shape.dims()[1], out_shape.dims()[2]);

    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    let data = x.as_slice();
    for ch in 0..c {
        let base = ch * h * w;
        for u in 0..oh {
            let i0 = (u * p.stride) as isize - p.padding as isize;
            for v in 0..ow {
                let j0 = (v * p.stride) as isize - p.padding as isize;
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for di in 0..p.window {
                    let i = i0 + di as isize;
                    if i < 0 || i >= h as isize {
                        continue;
                    }
                    for dj in 0..p.window {
                        let j = j0 + dj as isize;
                        if j < 0 || j >= w as isize {
                            continue;
                        }
                        let idx = base + i as usize * w + j as usize;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                debug_assert!(best_idx != usize::MAX, "window contained no valid cell");
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    let map = ArgmaxMap {
        input_shape: x.shape().clone(),
        output_shape: out_shape.clone(),
        indices,
    };
    Ok((Tensor::from_vec(out_shape, out)?, map))
}

/// Scatters `grad_out` onto the recorded argmax positions, accumulating on
/// overlap.
pub fn maxpool_backward<T: Scalar>(map: &ArgmaxMap, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != &map.output_shape {
        return Err(Error::ShapeMismatch {
            expected: map.output_shape.dims().to_vec(),
            got: grad_out.shape().dims().to_vec(),
        });
    }
    let mut grad = vec![T::zero(); map.input_shape.num_elements()];
    for (&src, &g) in map.indices.iter().zip(grad_out.as_slice()) {
        grad[src] = grad[src] + g;
    }
    Tensor::from_vec(map.input_shape.clone(), grad)
}
