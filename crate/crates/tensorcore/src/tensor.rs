//! Dense row-major tensors with shared immutable storage.

use std::sync::Arc;

use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};

/// An n-dimensional array of scalars. Storage is contiguous row-major and
/// immutable once built; clones share the same buffer.
#[derive(Clone, Debug)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            );
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![E::ZERO; numel]),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; numel]),
        }
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::ONE)
    }

    /// A scalar is a one-element tensor of shape `[1]`.
    pub fn scalar(value: E) -> Self {
        Self::full([1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> E {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn at(&self, index: &[usize]) -> E {
        debug_assert_eq!(index.len(), self.shape.len());
        let strides = self.strides();
        let flat: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// Same buffer under a new shape (no copy).
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return shape_err(
                "reshaped",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            );
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        let data: Vec<E> = self.data.iter().map(|&x| f(x)).collect();
        Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        let data: Vec<E> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    pub fn scale(&self, c: E) -> Self {
        self.map(|x| x * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// In-place add used by gradient accumulation; copies only when the
    /// buffer is shared.
    pub(crate) fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(
                "accumulate",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        let dst = Arc::make_mut(&mut self.data);
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += *s;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor::<f64>::from_vec(
            self.shape.clone(),
            self.data.iter().map(|x| x.to_f64()).collect(),
        )
        .expect("same shape")
    }

    pub fn from_f64_tensor(src: &Tensor<f64>) -> Self {
        Self::from_vec(
            src.shape().to_vec(),
            src.data().iter().map(|&x| E::from_f64(x)).collect(),
        )
        .expect("same shape")
    }

    /// Max |a - b| over all elements.
    pub fn max_abs_diff(&self, other: &Self) -> Result<E> {
        if self.shape != other.shape {
            return shape_err(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        let mut worst = E::ZERO;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            worst = worst.maximum((a - b).abs());
        }
        Ok(worst)
    }

    pub fn mean(&self) -> f64 {
        if self.numel() == 0 {
            return 0.0;
        }
        let mut acc = 0.0f64;
        for &x in self.data.iter() {
            acc += x.to_f64();
        }
        acc / self.numel() as f64
    }
}

impl<E: Element> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_length_must_agree() {
        assert!(Tensor::<f32>::from_vec([2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec([2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::<f32>::from_vec([2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped([3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.at(&[2, 1]), 5.0);
    }

    #[test]
    fn finiteness_detects_nan_and_inf() {
        let ok = Tensor::<f32>::from_vec([3], vec![1.0, -2.0, 0.5]).unwrap();
        assert!(ok.all_finite());
        let bad = Tensor::<f32>::from_vec([2], vec![1.0, f32::NAN]).unwrap();
        assert!(!bad.all_finite());
        let inf = Tensor::<f32>::from_vec([2], vec![1.0, f32::INFINITY]).unwrap();
        assert!(!inf.all_finite());
    }
}
