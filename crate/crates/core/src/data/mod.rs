//! Datasets and the minibatch trainer.

pub mod idx;
pub mod shapes;
pub mod train;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, read_idx_images, read_idx_labels};
pub use shapes::{gen_shapes, generate_shapes, ShapeInstance, SHAPE_CLASSES};
pub use train::{argmax, cross_entropy, evaluate, predict_classes, train, TrainConfig, TrainHistory};

/// Labelled images, N×C×H×W with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = match *images.shape() {
            [n, _, _, _] => n,
            ref s => return Err(Error::shape("dataset", "images", format!("expected N×C×H×W, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::shape(
                "dataset",
                "label count",
                format!("{n} images, {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
        }
        if images.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-image extents `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Image `i` as C×H×W.
    pub fn image(&self, i: usize) -> Result<Tensor<T>> {
        self.images.outer(i)
    }

    /// Images at `indices` stacked into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("image index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}
