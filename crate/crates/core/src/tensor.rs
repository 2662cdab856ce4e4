//! Dense row-major tensor.

use crate::error::{CoreError, Result};
use crate::Scalar;

/// N-dimensional array with row-major layout.
///
/// `requires_grad` marks tensors whose gradient should be retained when the
/// tensor is registered as an autodiff leaf; it has no effect on plain math.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
            requires_grad: false,
        }
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
            requires_grad: false,
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(CoreError::shape(format!(
                "data length {} does not match dims {:?} (= {})",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data, requires_grad: false })
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of rows of a rank-2 tensor.
    #[inline]
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[0]
    }

    /// Number of columns of a rank-2 tensor.
    #[inline]
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[1]
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.dims[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.dims[1] + c] = v;
    }

    /// Row slice of a rank-2 tensor.
    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.dims[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Reinterprets the buffer with new dims of equal total length.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != self.data.len() {
            return Err(CoreError::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data.clone(), requires_grad: false })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(CoreError::shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            requires_grad: false,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul_elem(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            T::zero()
        } else {
            self.sum() / T::from_usize(self.data.len()).unwrap()
        }
    }

    pub fn min_value(&self) -> T {
        self.data.iter().fold(T::infinity(), |acc, &x| acc.min(x))
    }

    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |acc, &x| acc.max(x))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lossy element-type conversion (`f32` ↔ `f64`).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::from(x).unwrap()).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn rank2_indexing_row_major() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.at2(0, 2), 2.0);
        assert_eq!(t.at2(1, 0), 3.0);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_errors() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[4]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(t.reshape(&[3]).is_err());
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.25, 2.0]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[0.5, -1.25, 2.0]);
    }
}
