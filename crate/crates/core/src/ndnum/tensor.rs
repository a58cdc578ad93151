//! Dense row-major tensors and the numeric kernels shared by the graph
//! executor and the direct (graph-free) network forward passes.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating-point element type. Training runs in `f32`; gradient checks
/// re-evaluate graphs in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Real")
    }

    fn to_f64_lossless(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("shapes {lhs:?} and {rhs:?} are incompatible")]
    Incompatible { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("slice {start}..{end} out of range on axis {axis} of shape {shape:?}")]
    Slice {
        axis: usize,
        start: usize,
        end: usize,
        shape: Vec<usize>,
    },
}

/// A dense tensor. `shape == []` denotes a scalar.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type Tensor64 = Tensor<f64>;

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{:?}, ... {} values]", self.shape, &self.data[..8], self.data.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        if numel(&shape) != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows × cols]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<T> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::LengthMismatch {
                shape: vec![rows.len(), cols],
                len: data.len(),
            });
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    fn expect_rank2(&self) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::Rank {
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other` for `[m × k] · [k × n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.expect_rank2()?;
        let (k2, n) = other.expect_rank2()?;
        if k != k2 {
            return Err(TensorError::Incompatible {
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for (i, out_row) in out.chunks_exact_mut(n).enumerate() {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &av) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` for `[m × n] · [k × n]ᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, n) = self.expect_rank2()?;
        let (k, n2) = other.expect_rank2()?;
        if n != n2 {
            return Err(TensorError::Incompatible {
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = Vec::with_capacity(m * k);
        for i in 0..m {
            let a_row = &self.data[i * n..(i + 1) * n];
            for p in 0..k {
                let b_row = &other.data[p * n..(p + 1) * n];
                let dot = a_row
                    .iter()
                    .zip(b_row)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                out.push(dot);
            }
        }
        Ok(Self {
            shape: vec![m, k],
            data: out,
        })
    }

    /// `selfᵀ · other` for `[m × k]ᵀ · [m × n]`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.expect_rank2()?;
        let (m2, n) = other.expect_rank2()?;
        if m != m2 {
            return Err(TensorError::Incompatible {
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); k * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let g_row = &other.data[i * n..(i + 1) * n];
            for (p, &av) in a_row.iter().enumerate() {
                let out_row = &mut out[p * n..(p + 1) * n];
                for (o, &gv) in out_row.iter_mut().zip(g_row) {
                    *o = *o + av * gv;
                }
            }
        }
        Ok(Self {
            shape: vec![k, n],
            data: out,
        })
    }

    /// Elementwise binary map with numpy-style broadcasting.
    pub fn zip_broadcast(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape == other.shape {
            return Ok(Self {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let n = numel(&out_shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..n {
            data.push(f(self.data[ia], other.data[ib]));
            for d in (0..out_shape.len()).rev() {
                idx[d] += 1;
                ia += sa[d];
                ib += sb[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                ia -= sa[d] * out_shape[d];
                ib -= sb[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Sums a broadcast result back down to `target` (the reverse of
    /// broadcasting `target` up to `self.shape()`).
    pub fn sum_to_shape(&self, target: &[usize]) -> Result<Self, TensorError> {
        if self.shape == target {
            return Ok(self.clone());
        }
        let expanded = broadcast_shape(target, &self.shape)?;
        if expanded != self.shape {
            return Err(TensorError::Incompatible {
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let st = broadcast_strides(target, &self.shape);
        let mut out = vec![T::zero(); numel(target)];
        let mut idx = vec![0usize; self.shape.len()];
        let mut it = 0usize;
        for &v in &self.data {
            out[it] = out[it] + v;
            for d in (0..self.shape.len()).rev() {
                idx[d] += 1;
                it += st[d];
                if idx[d] < self.shape[d] {
                    break;
                }
                it -= st[d] * self.shape[d];
                idx[d] = 0;
            }
        }
        Ok(Self {
            shape: target.to_vec(),
            data: out,
        })
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Self, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::Axis {
                axis,
                shape: self.shape.clone(),
            });
        }
        let mut target = self.shape.clone();
        target[axis] = 1;
        self.sum_to_shape(&target)
    }

    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Self, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::Axis {
                axis,
                shape: self.shape.clone(),
            });
        }
        if start >= end || end > self.shape[axis] {
            return Err(TensorError::Slice {
                axis,
                start,
                end,
                shape: self.shape.clone(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Ok(Self { shape, data })
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self, TensorError> {
        let first = parts.first().ok_or(TensorError::ZeroExtent(Vec::new()))?;
        if axis >= first.shape.len() {
            return Err(TensorError::Axis {
                axis,
                shape: first.shape.clone(),
            });
        }
        for p in parts {
            let compatible = p.shape.len() == first.shape.len()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::Incompatible {
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self { shape, data })
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Incompatible {
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (right-aligned), zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d + offset] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Scalar kernels shared by graph nodes and direct forward passes.
pub(crate) mod kernels {
    use super::Real;

    pub fn softplus<T: Real>(x: T) -> T {
        x.max(T::zero()) + (-x.abs()).exp().ln_1p()
    }

    pub fn sigmoid<T: Real>(x: T) -> T {
        if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        }
    }

    pub fn relu<T: Real>(x: T) -> T {
        if x > T::zero() {
            x
        } else {
            T::zero()
        }
    }

    pub fn leaky_relu<T: Real>(x: T, slope: T) -> T {
        if x > T::zero() {
            x
        } else {
            slope * x
        }
    }
}
