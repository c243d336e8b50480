//! Dense n-dimensional arrays with shape bookkeeping.
//!
//! Row-major layout throughout, channel-major within an image (`[C, H, W]`).
//! Tensors are plain values: no operation mutates its inputs.

use crate::error::{Error, Result};
use std::io::{Read, Write};

/// Element type for tensors. `f32` everywhere except the finite-difference
/// gradient checker, which runs in `f64` for headroom.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// General matrix multiply: `c = alpha * a @ b + beta * c` with explicit
    /// row/column strides, dimensions `a: m x k`, `b: k x n`, `c: m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

/// Ordered list of positive extents, e.g. `[C, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::InvalidShape("shape must have at least one extent".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidShape(format!("zero extent in {dims:?} ({d})")));
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[macro_export]
macro_rules! shape {
    ($($d:expr),+ $(,)?) => {
        $crate::tensor::Shape::new(vec![$($d),+]).expect("valid shape literal")
    };
}

/// Dense tensor: a [`Shape`] plus a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.num_elements();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        let n = shape.num_elements();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.num_elements() {
            return Err(Error::DimensionMismatch {
                expected: shape.num_elements(),
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Applies `f` to every element, preserving shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reinterprets the flat buffer under a new compatible shape.
    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel/height/width extents of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.dims() {
            &[c, h, w] => Ok((c, h, w)),
            dims => Err(Error::InvalidShape(format!("expected rank-3 [C,H,W], got {dims:?}"))),
        }
    }

    /// Stacks the channels of `a` before the channels of `b`.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ca, ha, wa) = a.chw()?;
        let (cb, hb, wb) = b.chw()?;
        if ha != hb || wa != wb {
            return Err(Error::SpatialMismatch { h_a: ha, w_a: wa, h_b: hb, w_b: wb });
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor { shape: Shape::new(vec![ca + cb, ha, wa])?, data })
    }

    /// Extracts channels `[start, end)` of a rank-3 tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let (c, h, w) = self.chw()?;
        if start >= end || end > c {
            return Err(Error::InvalidShape(format!(
                "channel slice {start}..{end} out of range for {c} channels"
            )));
        }
        let plane = h * w;
        let data = self.data[start * plane..end * plane].to_vec();
        Ok(Tensor { shape: Shape::new(vec![end - start, h, w])?, data })
    }
}

impl Tensor<f32> {
    /// Writes rank and dims as `u32` little-endian, then the flat buffer as
    /// little-endian `f32`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.shape.rank() as u32).to_le_bytes())?;
        for &d in self.shape.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Tensor<f32>> {
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::CorruptCheckpoint(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r)? as usize);
        }
        let shape = Shape::new(dims)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad tensor dims: {e}")))?;
        let n = shape.num_elements();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::CorruptCheckpoint("truncated tensor data".into()))?;
            data.push(f32::from_le_bytes(buf));
        }
        Tensor::from_vec(shape, data)
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CorruptCheckpoint("truncated header field".into()))?;
    Ok(u32::from_le_bytes(buf))
}
