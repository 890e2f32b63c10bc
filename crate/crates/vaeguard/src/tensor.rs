//! Dense NCHW tensors over f64.
//!
//! Small by design: contiguous storage, explicit indexing helpers, and the
//! handful of elementwise ops the networks and attacks need. Anything fancier
//! lives next to its only caller.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "data length mismatch");
        Tensor { n, c, h, w, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.n, other.c, other.h, other.w)
    }

    pub fn full_like(other: &Tensor, value: f64) -> Self {
        let mut t = Tensor::zeros_like(other);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous (h*w) plane of one sample/channel.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Contiguous (c*h*w) block of one sample.
    pub fn sample(&self, n: usize) -> &[f64] {
        let chw = self.c * self.h * self.w;
        &self.data[n * chw..(n + 1) * chw]
    }

    /// New tensor holding a single sample of this batch.
    pub fn slice_sample(&self, n: usize) -> Tensor {
        Tensor::from_vec(1, self.c, self.h, self.w, self.sample(n).to_vec())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn require_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in self.data.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    /// Elementwise a - b into a new tensor.
    pub fn sub(&self, other: &Tensor) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of squared elementwise differences. Shapes must already agree.
    pub fn mse(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a - b;
            acc += d * d;
        }
        acc / self.data.len() as f64
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Concatenate along the batch dimension.
    pub fn cat_batch(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let (c, h, w) = (parts[0].c, parts[0].h, parts[0].w);
        let n: usize = parts.iter().map(|p| p.n).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in parts {
            debug_assert_eq!((p.c, p.h, p.w), (c, h, w));
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(n, c, h, w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let mut t = Tensor::zeros(2, 3, 4, 5);
        *t.at_mut(1, 2, 3, 4) = 7.5;
        assert_eq!(t.at(1, 2, 3, 4), 7.5);
        assert_eq!(t.data[t.len() - 1], 7.5);
    }

    #[test]
    fn mse_hand_computed() {
        let a = Tensor::from_vec(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let b = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 1.0, 0.0, 3.0]);
        // diffs: 1, 0, -2, 0 -> squares 1, 0, 4, 0 -> mean 1.25
        assert_eq!(a.mse(&b), 1.25);
    }

    #[test]
    fn shape_mismatch_reported() {
        let a = Tensor::zeros(1, 1, 2, 2);
        let b = Tensor::zeros(1, 1, 2, 3);
        let err = a.require_same_shape(&b, "test").unwrap_err();
        assert!(err.to_string().contains("test"));
    }

    #[test]
    fn cat_batch_stacks() {
        let a = Tensor::from_vec(1, 1, 1, 2, vec![1.0, 2.0]);
        let b = Tensor::from_vec(2, 1, 1, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::cat_batch(&[a, b]);
        assert_eq!(c.n, 3);
        assert_eq!(c.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
