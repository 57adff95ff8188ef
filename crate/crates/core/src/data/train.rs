//! Minibatch SGD on softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_cross_entropy, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Network, SignMode};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Latent weights of binary layers are clamped to `[-clip, clip]`.
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_clip() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if self.batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds dataset size {n}",
                self.batch_size
            )));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::InvalidArgument(format!("clip bound {} must be positive", self.clip)));
        }
        Ok(())
    }
}

/// Per-epoch training-set accuracy and mean loss, measured after each epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Trains `net` in place.
///
/// Each epoch visits the data in an order shuffled from the substream
/// `(cfg.seed, epoch)`. Updates go to the latent weights; binary layers are
/// clamped to `[-clip, clip]` after every step.
pub fn train<T: Scalar>(net: &mut Network<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate(data.len())?;
    if data.image_shape() != net.def().input_shape {
        return Err(Error::shape(
            "train",
            "image shape",
            format!("dataset {:?}, network {:?}", data.image_shape(), net.def().input_shape),
        ));
    }
    if data.classes() > net.def().classes {
        return Err(Error::shape(
            "train",
            "class count",
            format!("dataset has {} classes, network {}", data.classes(), net.def().classes),
        ));
    }
    let lr = T::of(cfg.learning_rate);
    let clip = T::of(cfg.clip);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        SplitMix64::substream(cfg.seed, epoch as u64).shuffle(&mut order);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch(idx)?;
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let rec = net.record(&mut tape, input, true, SignMode::Sign)?;
            let logits = *rec.layers.last().expect("validated networks have layers");
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            if !tape.value(loss).all_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            let mut grads = tape.backward(loss)?;
            for (i, leaves) in rec.params.iter().enumerate() {
                let Some((w_id, b_id)) = *leaves else { continue };
                let binary = net.def().is_binary_layer(i);
                let gw = grads.take(w_id).expect("weight leaf is reachable");
                let gb = grads.take(b_id).expect("bias leaf is reachable");
                if !gw.all_finite() || !gb.all_finite() {
                    return Err(Error::Divergence { epoch, batch });
                }
                let p = net.params_mut(i).expect("parameterized layer");
                for (w, g) in p.weight.data_mut().iter_mut().zip(gw.data()) {
                    *w -= lr * *g;
                    if binary {
                        *w = w.max(-clip).min(clip);
                    }
                }
                for (b, g) in p.bias.data_mut().iter_mut().zip(gb.data()) {
                    *b -= lr * *g;
                }
            }
        }
        let (acc, loss) = evaluate_with_loss(net, data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        history.accuracy.push(acc);
        history.loss.push(loss);
    }
    Ok(history)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 256;

/// Predicted class of every image.
pub fn predict_classes<T: Scalar>(net: &Network<T>, images: &Tensor<T>) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let classes = net.def().classes;
    let per = images.len() / n;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let mut shape = images.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, images.data()[start * per..end * per].to_vec())?;
        let logits = net.predict(&chunk)?;
        out.extend(logits.data().chunks_exact(classes).map(argmax));
    }
    Ok(out)
}

/// Fraction of images whose arg-max logit equals the label.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<f64> {
    let pred = predict_classes(net, data.images())?;
    let correct = pred.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

fn evaluate_with_loss<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<(f64, f64)> {
    let classes = net.def().classes;
    let n = data.len();
    let mut correct = 0;
    let mut loss_sum = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let (x, labels) = data.batch(&idx)?;
        let logits = net.predict(&x)?;
        let (_, loss) = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss.as_f64() * idx.len() as f64;
        correct += logits
            .data()
            .chunks_exact(classes)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

/// Mean of `-log softmax(logits)[label]`, stabilized by subtracting each row's max.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    softmax_cross_entropy(logits, labels).map(|(_, l)| l)
}
