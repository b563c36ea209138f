use alloc::vec::Vec;

use super::Real;
use crate::error::{Error, Result};

/// Dense rank-4 array `(batch, filters, height, width)` in C order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: alloc::vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if size != data.len() {
            return Err(Error::Shape(alloc::format!(
                "{:?} needs {} values, got {}",
                shape,
                size,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for h in 0..shape[2] {
                    for w in 0..shape[3] {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, f, h, w] = self.shape;
        ((idx[0] * f + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Contiguous innermost row at `(n, f, h)`.
    #[inline]
    pub fn row(&self, n: usize, f: usize, h: usize) -> &[T] {
        let o = self.offset([n, f, h, 0]);
        &self.data[o..o + self.shape[3]]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, f: usize, h: usize) -> &mut [T] {
        let o = self.offset([n, f, h, 0]);
        let w = self.shape[3];
        &mut self.data[o..o + w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, expected: [usize; 4], what: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::Shape(alloc::format!(
                "{what}: expected {:?}, got {:?}",
                expected,
                self.shape
            )));
        }
        Ok(())
    }
}
