//! Experiment configuration files.
//!
//! UTF-8 JSON with `"version": 1`. Unknown keys anywhere are errors. Relative
//! paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use binsight::analysis::{validate_levels, DEFAULT_NOISE_LEVELS};
use binsight::data::TrainConfig;
use binsight::net::NetworkDef;
use binsight::saliency::{GradCamVariant, MapMethod, SmoothGradParams, DEFAULT_SAMPLES};
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_NETWORK: &str = "shapes-default";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub network: NetworkChoice,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub saliency: SaliencySection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A named layout or an inline definition.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum NetworkChoice {
    Named(String),
    Inline(NetworkDef),
}

impl Default for NetworkChoice {
    fn default() -> Self {
        NetworkChoice::Named(DEFAULT_NETWORK.into())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Shapes {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        /// Training set seed; the test set uses `seed + 1`.
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_size() -> usize {
    16
}

fn default_train_per_class() -> usize {
    500
}

fn default_test_per_class() -> usize {
    50
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Shapes {
            size: default_size(),
            train_per_class: default_train_per_class(),
            test_per_class: default_test_per_class(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Learning rate for the binarized twin.
    #[serde(default = "default_bnn_lr")]
    pub bnn_learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_lr() -> f64 {
    0.05
}

fn default_bnn_lr() -> f64 {
    0.01
}

fn default_epochs() -> usize {
    30
}

fn default_batch() -> usize {
    16
}

fn default_clip() -> f64 {
    1.0
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            bnn_learning_rate: default_bnn_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            clip: default_clip(),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, kind: NetKind, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: match kind {
                NetKind::Fp => self.learning_rate,
                NetKind::Bnn => self.bnn_learning_rate,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            clip: self.clip,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Gradient,
    Smoothgrad,
    Gradcam,
}

impl MethodName {
    pub const ALL: [MethodName; 3] = [MethodName::Gradient, MethodName::Smoothgrad, MethodName::Gradcam];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gradient" => Some(MethodName::Gradient),
            "smoothgrad" => Some(MethodName::Smoothgrad),
            "gradcam" => Some(MethodName::Gradcam),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencySection {
    #[serde(default = "default_method")]
    pub method: MethodName,
    /// SmoothGrad noise level for single maps.
    #[serde(default = "default_noise_pct")]
    pub noise_pct: f64,
    #[serde(default = "default_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub gradcam_variant: GradCamVariant,
    /// Test-set index of the image to explain.
    #[serde(default)]
    pub image: usize,
    #[serde(default = "default_true")]
    pub overlay: bool,
}

fn default_method() -> MethodName {
    MethodName::Gradient
}

fn default_noise_pct() -> f64 {
    0.2
}

fn default_levels() -> Vec<f64> {
    DEFAULT_NOISE_LEVELS.to_vec()
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_true() -> bool {
    true
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self {
            method: default_method(),
            noise_pct: default_noise_pct(),
            noise_levels: default_levels(),
            n_samples: default_samples(),
            gradcam_variant: GradCamVariant::default(),
            image: 0,
            overlay: true,
        }
    }
}

impl SaliencySection {
    /// Concrete method parameters; SmoothGrad noise is drawn from `seed`.
    pub fn map_method(&self, name: MethodName, seed: u64) -> MapMethod {
        match name {
            MethodName::Gradient => MapMethod::Gradient,
            MethodName::Smoothgrad => MapMethod::SmoothGrad(SmoothGradParams {
                noise_pct: self.noise_pct,
                n_samples: self.n_samples,
                seed,
            }),
            MethodName::Gradcam => MapMethod::GradCam {
                variant: self.gradcam_variant,
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_delta")]
    pub delta_scale: f64,
}

fn default_delta() -> f64 {
    0.1
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            delta_scale: default_delta(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetKind {
    Fp,
    Bnn,
}

impl NetKind {
    pub const BOTH: [NetKind; 2] = [NetKind::Fp, NetKind::Bnn];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Fp => "fp",
            NetKind::Bnn => "bnn",
        }
    }

    pub fn of_def(def: &NetworkDef) -> NetKind {
        if def.parameterized_layers().iter().any(|&i| def.is_binary_layer(i)) {
            NetKind::Bnn
        } else {
            NetKind::Fp
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &mut self.dataset
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                fix(p);
            }
        }
    }

    /// Full-precision layout for this experiment (input shape taken from
    /// the dataset for named layouts).
    pub fn network_def(&self, input_shape: [usize; 3], classes: usize) -> Result<NetworkDef, CliError> {
        let def = match &self.network {
            NetworkChoice::Named(name) if name == DEFAULT_NETWORK => {
                let [c, h, w] = input_shape;
                if c != 1 || h != w || h % 4 != 0 {
                    return Err(CliError::Shape(format!(
                        "{DEFAULT_NETWORK} needs 1×S×S images with S divisible by 4, dataset has {input_shape:?}"
                    )));
                }
                NetworkDef::shapes_default(h, classes)
            }
            NetworkChoice::Named(name) => return Err(invalid(format!("unknown network {name:?}"))),
            NetworkChoice::Inline(def) => def.clone(),
        };
        def.validate()?;
        if def.input_shape != input_shape {
            return Err(CliError::Shape(format!(
                "network expects input {:?}, dataset has {input_shape:?}",
                def.input_shape
            )));
        }
        if def.classes < classes {
            return Err(CliError::Shape(format!(
                "network has {} classes, dataset {classes}",
                def.classes
            )));
        }
        Ok(def)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds list is empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(invalid("seeds list has duplicates"));
        }
        match &self.network {
            NetworkChoice::Named(name) if name != DEFAULT_NETWORK => {
                return Err(invalid(format!("unknown network {name:?}")));
            }
            NetworkChoice::Named(_) => {}
            NetworkChoice::Inline(def) => def.validate()?,
        }
        match &self.dataset {
            DatasetConfig::Shapes {
                size,
                train_per_class,
                test_per_class,
                ..
            } => {
                if *size < 12 {
                    return Err(invalid(format!("shapes size {size} below 12")));
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(invalid("shapes sample counts must be positive"));
                }
                let n_train = 3 * train_per_class;
                for lr in [self.train.learning_rate, self.train.bnn_learning_rate] {
                    TrainConfig {
                        learning_rate: lr,
                        ..self.train.train_config(NetKind::Fp, 0)
                    }
                    .validate(n_train)?;
                }
                if self.saliency.image >= 3 * test_per_class {
                    return Err(invalid(format!(
                        "image index {} outside the {}-image test set",
                        self.saliency.image,
                        3 * test_per_class
                    )));
                }
                let shape = [1, *size, *size];
                if let NetworkChoice::Inline(def) = &self.network {
                    if def.input_shape != shape {
                        return Err(CliError::Shape(format!(
                            "network expects input {:?}, dataset has {shape:?}",
                            def.input_shape
                        )));
                    }
                } else if size % 4 != 0 {
                    return Err(invalid(format!("{DEFAULT_NETWORK} needs a size divisible by 4, got {size}")));
                }
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.is_file() {
                        return Err(CliError::MissingInput(p.clone()));
                    }
                }
                for lr in [self.train.learning_rate, self.train.bnn_learning_rate] {
                    if !(lr >= 0.0 && lr.is_finite()) {
                        return Err(invalid(format!("learning rate {lr} must be finite and >= 0")));
                    }
                }
                if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.clip > 0.0) {
                    return Err(invalid("epochs, batch size and clip must be positive"));
                }
            }
        }
        validate_levels(&self.saliency.noise_levels)?;
        if let MapMethod::SmoothGrad(p) = self.saliency.map_method(MethodName::Smoothgrad, 0) {
            p.validate()?;
        }
        if !(self.probe.delta_scale > 0.0 && self.probe.delta_scale.is_finite()) {
            return Err(invalid(format!("delta_scale {} must be positive", self.probe.delta_scale)));
        }
        Ok(())
    }
}
