//! Data loading, pair training and model files shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use binsight::data::{argmax, evaluate, gen_shapes, load_idx, train, TrainHistory};
use binsight::net::{decode_model, encode_model, NetworkDef};
use binsight::{Dataset32, Network32, Tensor32};

use crate::config::{DatasetConfig, ExperimentConfig, NetKind};
use crate::error::CliError;

/// Training and test data plus the full-precision layout they imply.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub train: Dataset32,
    pub test: Dataset32,
    pub def: NetworkDef,
}

fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset32, CliError> {
    for p in [images, labels] {
        if !p.is_file() {
            return Err(CliError::MissingInput(p.to_path_buf()));
        }
    }
    load_idx(images, labels).map_err(|e| match e {
        binsight::Error::Io(io) => CliError::from_io(images, io),
        other => CliError::Config(format!("{}: {other}", images.display())),
    })
}

impl Experiment {
    pub fn load(cfg: ExperimentConfig) -> Result<Self, CliError> {
        let (train, test) = match &cfg.dataset {
            DatasetConfig::Shapes {
                size,
                train_per_class,
                test_per_class,
                seed,
            } => (
                gen_shapes(*seed, *train_per_class, *size)?,
                gen_shapes(seed.wrapping_add(1), *test_per_class, *size)?,
            ),
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx_pair(train_images, train_labels)?,
                load_idx_pair(test_images, test_labels)?,
            ),
        };
        if train.image_shape() != test.image_shape() {
            return Err(CliError::Shape(format!(
                "training images {:?}, test images {:?}",
                train.image_shape(),
                test.image_shape()
            )));
        }
        let classes = train.classes().max(test.classes());
        let def = cfg.network_def(train.image_shape(), classes)?;
        cfg.train.train_config(NetKind::Fp, 0).validate(train.len())?;
        cfg.train.train_config(NetKind::Bnn, 0).validate(train.len())?;
        if cfg.saliency.image >= test.len() {
            return Err(CliError::Config(format!(
                "image index {} outside the {}-image test set",
                cfg.saliency.image,
                test.len()
            )));
        }
        Ok(Self { cfg, train, test, def })
    }

    pub fn def_for(&self, kind: NetKind) -> NetworkDef {
        match kind {
            NetKind::Fp => self.def.clone(),
            NetKind::Bnn => self.def.binarized(),
        }
    }

    /// Trains one network of the pair for `seed` (initialization and
    /// shuffling both use `seed`).
    pub fn train_one(&self, kind: NetKind, seed: u64) -> Result<TrainedNet, CliError> {
        let mut net = Network32::build(self.def_for(kind), seed)?;
        let cfg = self.cfg.train.train_config(kind, seed);
        let history = train(&mut net, &self.train, &cfg).map_err(|e| match e {
            binsight::Error::Divergence { epoch, batch } => CliError::Divergence {
                seed,
                network: kind.name(),
                epoch,
                batch,
            },
            other => other.into(),
        })?;
        let test_accuracy = evaluate(&net, &self.test)?;
        Ok(TrainedNet {
            kind,
            seed,
            net,
            history,
            test_accuracy,
        })
    }

    pub fn test_image(&self, index: usize) -> Result<(Tensor32, usize), CliError> {
        Ok((self.test.image(index)?, self.test.labels()[index]))
    }
}

pub struct TrainedNet {
    pub kind: NetKind,
    pub seed: u64,
    pub net: Network32,
    pub history: TrainHistory,
    pub test_accuracy: f64,
}

pub fn model_path(dir: &Path, seed: u64, kind: NetKind) -> PathBuf {
    dir.join(format!("seed{seed}-{}.model", kind.name()))
}

pub fn read_model_file(path: &Path) -> Result<Network32, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    decode_model(&bytes).map_err(|e| CliError::CorruptModel {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_model_file(path: &Path, net: &Network32) -> Result<(), CliError> {
    let bytes = encode_model(net)?;
    fs::write(path, bytes).map_err(|e| CliError::from_io(path, e))
}

/// Loads both networks of a seed's pair and checks they fit the data.
pub fn load_pair(dir: &Path, seed: u64, image_shape: [usize; 3]) -> Result<Vec<(NetKind, Network32)>, CliError> {
    NetKind::BOTH
        .iter()
        .map(|&kind| {
            let path = model_path(dir, seed, kind);
            let net = read_model_file(&path)?;
            check_input(&net, image_shape, &path)?;
            Ok((kind, net))
        })
        .collect()
}

pub fn check_input(net: &Network32, image_shape: [usize; 3], path: &Path) -> Result<(), CliError> {
    if net.def().input_shape != image_shape {
        return Err(CliError::Shape(format!(
            "{} expects input {:?}, images are {image_shape:?}",
            path.display(),
            net.def().input_shape
        )));
    }
    Ok(())
}

/// Predicted class of a single C×H×W image.
pub fn predict_one(net: &Network32, image: &Tensor32) -> Result<usize, CliError> {
    let logits = net.predict(image)?;
    Ok(argmax(logits.data()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::from_io(path, e))
}
