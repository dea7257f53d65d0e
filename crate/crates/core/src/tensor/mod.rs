//! Dense NCHW tensors and the kernels the RefineNet blocks are built from.
//!
//! Every kernel has two implementations: the optimized one exported here and
//! a direct loop version in [`naive`]. The two must agree within 1e-4; the
//! naive path exists so that agreement can be checked.

mod error;
pub mod io;
mod kernels;
pub mod naive;
mod op;
mod vjp;

pub use error::TensorError;
pub use kernels::{add, affine, conv2d, maxpool2d, relu, upsample_bilinear};
pub use op::{ConvParams, ConvSpec, Op, PoolParams};
pub use vjp::{vjp, Grads};

use std::fmt;

pub type Result<T> = std::result::Result<T, TensorError>;

/// Extents of a rank-4 tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Immutable dense f32 tensor, row-major in (N, C, H, W) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every cell.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A vector stored as a (1, 1, 1, len) tensor, the left-padded rank-4
    /// form of a rank-1 extent.
    pub fn vector(values: Vec<f32>) -> Self {
        let shape = Shape::new(1, 1, 1, values.len());
        Tensor { shape, data: values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// Contiguous slice holding plane `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Output extent of a sliding window: `floor((len + 2*pad - k) / stride) + 1`.
///
/// Returns `None` when the window does not fit even once.
pub fn window_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// A fixed-size rayon pool. Kernels partition work into tasks of a fixed
/// size, so results do not depend on how many workers run them.
pub struct Workers {
    pool: rayon::ThreadPool,
}

impl Workers {
    pub fn new(count: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count.max(1))
            .build()
            .expect("failed to build worker pool");
        Workers { pool }
    }

    pub fn count(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

/// Worker count from `LWREFINE_WORKERS`, else the host's available parallelism.
pub fn default_worker_count() -> usize {
    std::env::var("LWREFINE_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_length_checked() {
        let err = Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 8, actual: 7, .. }));
    }

    #[test]
    fn zero_extents_allowed() {
        let t = Tensor::zeros([0, 3, 4, 4]);
        assert!(t.is_empty());
    }

    #[test]
    fn window_formula() {
        assert_eq!(window_out(512, 7, 2, 3), Some(256));
        assert_eq!(window_out(256, 3, 2, 1), Some(128));
        assert_eq!(window_out(2, 5, 1, 0), None);
        assert_eq!(window_out(625, 7, 2, 3), Some(313));
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_fn([2, 3, 4, 5], |n, c, y, x| (((n * 3 + c) * 4 + y) * 5 + x) as f32);
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }
}
