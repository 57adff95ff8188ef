use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{conv_extent, pool_extent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Full,
    Binary,
}

/// One layer of a sequential network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        #[serde(default)]
        precision: Precision,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default)]
        precision: Precision,
    },
    Relu {},
    /// Sign activation: binarizes its input to ±1.
    Signact {},
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten {},
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    pub fn requested_precision(&self) -> Option<Precision> {
        match self {
            LayerSpec::Conv { precision, .. } | LayerSpec::Dense { precision, .. } => Some(*precision),
            _ => None,
        }
    }

    /// Weight shape and fan-in of a parameterized layer.
    pub fn weight_shape(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
            )),
            LayerSpec::Dense { inputs, outputs, .. } => Some((vec![inputs, outputs], inputs)),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { out_channels, .. } => Some(out_channels),
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu {} => "relu",
            LayerSpec::Signact {} => "signact",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten {} => "flatten",
        }
    }
}

/// Per-example activation shape flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl ActShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial { channels, height, width } => vec![channels, height, width],
            ActShape::Flat(f) => vec![f],
        }
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn default_true() -> bool {
    true
}

/// Sequential network layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDef {
    /// Per-example input extents `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Keep the first and last parameterized layers at full precision.
    #[serde(default = "default_true")]
    pub full_precision_ends: bool,
}

impl NetworkDef {
    /// Validates the layer chain and returns the output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<ActShape>> {
        let bad = |layer: usize, reason: String| Error::InvalidDef { layer, reason };
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(bad(0, format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        if self.classes == 0 {
            return Err(bad(0, "class count must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(bad(0, "network has no layers".into()));
        }
        let mut cur = ActShape::Spatial {
            channels: c,
            height: h,
            width: w,
        };
        let mut seen_conv = false;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        ..
                    },
                    ActShape::Spatial { channels, height, width },
                ) => {
                    if in_channels != channels {
                        return Err(bad(i, format!("conv expects {in_channels} input channels, got {channels}")));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(i, "conv out_channels, kernel and stride must be positive".into()));
                    }
                    let oh = conv_extent(height, kernel, stride, padding)
                        .ok_or_else(|| bad(i, format!("conv geometry does not divide height {height}")))?;
                    let ow = conv_extent(width, kernel, stride, padding)
                        .ok_or_else(|| bad(i, format!("conv geometry does not divide width {width}")))?;
                    seen_conv = true;
                    ActShape::Spatial {
                        channels: out_channels,
                        height: oh,
                        width: ow,
                    }
                }
                (LayerSpec::Conv { .. }, ActShape::Flat(_)) => {
                    return Err(bad(i, "conv layer after flatten".into()));
                }
                (LayerSpec::Dense { inputs, outputs, .. }, ActShape::Flat(f)) => {
                    if !seen_conv {
                        return Err(bad(i, "a conv layer must precede the first dense layer".into()));
                    }
                    if inputs != f {
                        return Err(bad(i, format!("dense expects {inputs} inputs, got {f}")));
                    }
                    if outputs == 0 {
                        return Err(bad(i, "dense outputs must be positive".into()));
                    }
                    ActShape::Flat(outputs)
                }
                (LayerSpec::Dense { .. }, ActShape::Spatial { .. }) => {
                    return Err(bad(i, "dense layer needs a flatten before it".into()));
                }
                (LayerSpec::Maxpool { window, stride }, ActShape::Spatial { channels, height, width }) => {
                    let oh = pool_extent(height, window, stride)
                        .ok_or_else(|| bad(i, format!("pool window {window} does not fit height {height}")))?;
                    let ow = pool_extent(width, window, stride)
                        .ok_or_else(|| bad(i, format!("pool window {window} does not fit width {width}")))?;
                    ActShape::Spatial {
                        channels,
                        height: oh,
                        width: ow,
                    }
                }
                (LayerSpec::Maxpool { .. }, ActShape::Flat(_)) => {
                    return Err(bad(i, "maxpool layer after flatten".into()));
                }
                (LayerSpec::Flatten {}, s) => ActShape::Flat(s.len()),
                (LayerSpec::Relu {} | LayerSpec::Signact {}, s) => s,
            };
            shapes.push(cur);
        }
        match cur {
            ActShape::Flat(f) if f == self.classes => {}
            other => {
                return Err(bad(
                    self.layers.len() - 1,
                    format!("final output {:?} does not match {} classes", other.dims(), self.classes),
                ))
            }
        }
        if !seen_conv {
            return Err(bad(0, "network needs at least one conv layer".into()));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    pub fn parameterized_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    /// Precision actually used by layer `index`, after the end-layer policy.
    pub fn effective_precision(&self, index: usize) -> Option<Precision> {
        let requested = self.layers.get(index)?.requested_precision()?;
        if self.full_precision_ends {
            let params = self.parameterized_layers();
            if params.first() == Some(&index) || params.last() == Some(&index) {
                return Some(Precision::Full);
            }
        }
        Some(requested)
    }

    pub fn is_binary_layer(&self, index: usize) -> bool {
        self.effective_precision(index) == Some(Precision::Binary)
    }

    /// Index of the last conv layer.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    /// Layer whose output GradCAM reads: the last conv layer, or the
    /// activation directly following it.
    pub fn feature_layer(&self) -> Option<usize> {
        let conv = self.last_conv()?;
        match self.layers.get(conv + 1) {
            Some(LayerSpec::Relu {} | LayerSpec::Signact {}) => Some(conv + 1),
            _ => Some(conv),
        }
    }

    /// The binarized twin of this layout: every conv/dense layer requests
    /// binary precision, and a ReLU whose output feeds a layer that ends up
    /// binary (through any pooling or flattening) becomes a sign activation.
    /// Layers feeding full-precision layers keep their ReLU.
    pub fn binarized(&self) -> NetworkDef {
        let layers = self
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    precision: Precision::Binary,
                },
                LayerSpec::Dense { inputs, outputs, .. } => LayerSpec::Dense {
                    inputs,
                    outputs,
                    precision: Precision::Binary,
                },
                other => other,
            })
            .collect();
        let mut twin = NetworkDef {
            layers,
            ..self.clone()
        };
        for j in twin.parameterized_layers() {
            if !twin.is_binary_layer(j) {
                continue;
            }
            let mut i = j;
            while i > 0 {
                i -= 1;
                match twin.layers[i] {
                    LayerSpec::Maxpool { .. } | LayerSpec::Flatten {} => continue,
                    LayerSpec::Relu {} => twin.layers[i] = LayerSpec::Signact {},
                    _ => {}
                }
                break;
            }
        }
        twin
    }

    /// Two-conv layout used for the shapes dataset.
    ///
    /// `conv(1→8, 3×3) → relu → maxpool 2 → conv(8→16, 3×3) → relu → maxpool 2 → flatten → dense(→classes)`
    pub fn shapes_default(size: usize, classes: usize) -> NetworkDef {
        let after = size / 2 / 2;
        NetworkDef {
            input_shape: [1, size, size],
            classes,
            layers: vec![
                LayerSpec::Conv {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    precision: Precision::Full,
                },
                LayerSpec::Relu {},
                LayerSpec::Maxpool { window: 2, stride: 2 },
                LayerSpec::Conv {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    precision: Precision::Full,
                },
                LayerSpec::Relu {},
                LayerSpec::Maxpool { window: 2, stride: 2 },
                LayerSpec::Flatten {},
                LayerSpec::Dense {
                    inputs: 16 * after * after,
                    outputs: classes,
                    precision: Precision::Full,
                },
            ],
            full_precision_ends: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_def_is_valid() {
        let def = NetworkDef::shapes_default(16, 3);
        let shapes = def.layer_shapes().unwrap();
        assert_eq!(shapes.len(), def.layers.len());
        assert_eq!(shapes[3].dims(), vec![16, 8, 8]);
        assert_eq!(*shapes.last().unwrap(), ActShape::Flat(3));
        assert_eq!(def.feature_layer(), Some(4));
        def.binarized().validate().unwrap();
    }

    #[test]
    fn twin_binarizes_inputs_of_binary_layers() {
        let bnn = NetworkDef::shapes_default(16, 3).binarized();
        let kinds: Vec<_> = bnn.layers.iter().map(|l| l.kind_name()).collect();
        assert_eq!(
            kinds,
            ["conv", "signact", "maxpool", "conv", "relu", "maxpool", "flatten", "dense"]
        );
        assert!(bnn.is_binary_layer(3));
        assert!(!bnn.is_binary_layer(0) && !bnn.is_binary_layer(7));

        let all = NetworkDef {
            full_precision_ends: false,
            ..NetworkDef::shapes_default(16, 3)
        }
        .binarized();
        assert!(matches!(all.layers[4], LayerSpec::Signact {}));
    }

    #[test]
    fn invalid_defs_name_the_layer() {
        let mut def = NetworkDef::shapes_default(16, 3);
        def.layers[3] = LayerSpec::Conv {
            in_channels: 4,
            out_channels: 16,
            kernel: 3,
            stride: 1,
            padding: 1,
            precision: Precision::Full,
        };
        match def.validate() {
            Err(Error::InvalidDef { layer, .. }) => assert_eq!(layer, 3),
            other => panic!("{other:?}"),
        }

        let no_conv = NetworkDef {
            input_shape: [1, 4, 4],
            classes: 2,
            layers: vec![LayerSpec::Flatten {}, LayerSpec::Dense { inputs: 16, outputs: 2, precision: Precision::Full }],
            full_precision_ends: true,
        };
        match no_conv.validate() {
            Err(Error::InvalidDef { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("{other:?}"),
        }

        let mut wrong_classes = NetworkDef::shapes_default(16, 3);
        wrong_classes.classes = 4;
        assert!(wrong_classes.validate().is_err());
    }

    #[test]
    fn end_layers_forced_full() {
        let bnn = NetworkDef::shapes_default(16, 3).binarized();
        assert_eq!(bnn.effective_precision(0), Some(Precision::Full));
        assert_eq!(bnn.effective_precision(3), Some(Precision::Binary));
        assert_eq!(bnn.effective_precision(7), Some(Precision::Full));
        assert_eq!(bnn.effective_precision(1), None);

        let all_binary = NetworkDef {
            full_precision_ends: false,
            ..bnn
        };
        assert_eq!(all_binary.effective_precision(0), Some(Precision::Binary));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let def = NetworkDef::shapes_default(16, 3).binarized();
        let json = serde_json::to_string(&def).unwrap();
        let back: NetworkDef = serde_json::from_str(&json).unwrap();
        assert_eq!(back, def);
        let bad = r#"{"input_shape":[1,4,4],"classes":2,"layers":[{"kind":"relu","extra":1}]}"#;
        assert!(serde_json::from_str::<NetworkDef>(bad).is_err());
    }
}
