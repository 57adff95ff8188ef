//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Dense n-dimensional array stored row-major.
///
/// The data length always equals the product of the shape extents, and every
/// extent is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("tensor shape must have at least one extent".into()));
    }
    if let Some(i) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "tensor extent {i} is zero in shape {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::shape(
                "tensor",
                "data length",
                format!("shape {shape:?} needs {len} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    /// Tensor with i.i.d. uniform entries in `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut SplitMix64) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        let data = (0..len).map(|_| T::of(rng.uniform(lo, hi))).collect();
        Ok(Self { shape, data })
    }

    /// Tensor with i.i.d. standard normal entries, drawn in row-major order.
    pub fn gaussian(shape: impl Into<Vec<usize>>, rng: &mut SplitMix64) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        let data = (0..len).map(|_| T::of(rng.gaussian())).collect();
        Ok(Self { shape, data })
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(Error::shape(
                "reshape",
                "element count",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                "operand shape",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// Euclidean norm over all elements, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.cast()).collect(),
        }
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Slice `i` along the leading axis, e.g. one image from an N×C×H×W batch.
    pub fn outer(&self, i: usize) -> Result<Self> {
        if self.shape.len() < 2 || i >= self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "outer index {i} out of range for shape {:?}",
                self.shape
            )));
        }
        let stride = self.data.len() / self.shape[0];
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * stride..(i + 1) * stride].to_vec(),
        })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }
}
