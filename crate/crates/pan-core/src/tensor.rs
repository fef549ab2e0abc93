//! Dense row-major multi-dimensional array.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Contiguous row-major tensor. `product(dims) == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self, CoreError> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(CoreError::invalid(format_args!(
                "tensor data length {} does not match dims {:?} (expect {})",
                data.len(),
                dims,
                expect
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Gaussian fill with the given standard deviation.
    pub fn randn(dims: &[usize], std: f64, rng: &mut Rng) -> Self {
        let mut t = Tensor::zeros(dims);
        for v in t.data.iter_mut() {
            *v = T::from_f64(rng.normal() * std);
        }
        t
    }

    /// Uniform fill in [-limit, limit].
    pub fn rand_uniform(dims: &[usize], limit: f64, rng: &mut Rng) -> Self {
        let mut t = Tensor::zeros(dims);
        for v in t.data.iter_mut() {
            *v = T::from_f64(rng.uniform_in(-limit, limit));
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on tensor with dims {:?}", self.dims);
        self.data[0]
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    /// Flat offset of a multi-index (bounds checked in debug builds).
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for d in (0..self.dims.len()).rev() {
            debug_assert!(index[d] < self.dims[d]);
            off += index[d] * stride;
            stride *= self.dims[d];
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data, new dims; element count must match.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Self, CoreError> {
        let expect: usize = dims.iter().product();
        if expect != self.numel() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                left: self.dims.clone(),
                right: dims.to_vec(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Materialized axis permutation.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, CoreError> {
        let n = self.dims.len();
        let mut seen = vec![false; n];
        let valid = perm.len() == n
            && perm.iter().all(|&p| {
                if p >= n || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(CoreError::invalid(format_args!(
                "invalid permutation {perm:?} for rank {n}"
            )));
        }
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let in_strides = self.strides();
        let mut out = Tensor::zeros(&out_dims);
        let numel = self.numel();
        if numel == 0 {
            return Ok(out);
        }
        // walk output rows in order, tracking the source offset incrementally
        // (odometer over the permuted source strides; no div/mod per element)
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut idx = vec![0usize; n];
        let mut src = 0usize;
        let last_extent = out_dims[n - 1];
        let last_stride = src_strides[n - 1];
        let src_data = &self.data;
        let mut flat = 0usize;
        loop {
            let row = &mut out.data[flat..flat + last_extent];
            if last_stride == 1 {
                row.copy_from_slice(&src_data[src..src + last_extent]);
            } else {
                let mut s = src;
                for o in row.iter_mut() {
                    *o = src_data[s];
                    s += last_stride;
                }
            }
            flat += last_extent;
            if flat >= numel {
                break;
            }
            let mut d = n - 2; // flat < numel implies n >= 2 and a dim to bump
            loop {
                idx[d] += 1;
                src += src_strides[d];
                if idx[d] < out_dims[d] {
                    break;
                }
                src -= idx[d] * src_strides[d];
                idx[d] = 0;
                d -= 1;
            }
        }
        Ok(out)
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<(), CoreError> {
        for &v in &self.data {
            if !v.is_finite() {
                return Err(CoreError::NonFinite {
                    context: alloc::format!("{context} (dims {:?})", self.dims),
                });
            }
        }
        Ok(())
    }

    /// Largest absolute element difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to_f64())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cast into another scalar type via f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * dims[d + 1];
    }
    s
}
