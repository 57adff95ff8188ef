use crate::autodiff::{Adjoints, GradientSet, NodeId, Tape};
use crate::error::{Error, Result};
use crate::net::def::{LayerSpec, NetworkDef};
use crate::ops;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// A sequential network with latent real-valued parameters.
///
/// Binary layers keep real weights and binarize them with `sign` on every
/// forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    def: NetworkDef,
    params: Vec<Option<LayerParams<T>>>,
    seed: u64,
}

/// How sign nodes are placed on the tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignMode {
    /// `sign` with the straight-through pseudo-gradient.
    #[default]
    Sign,
    /// `hardtanh(x) + c` where the constant `c = sign(x) - hardtanh(x)` is not
    /// differentiated. Same forward values as `Sign`; its true gradient is the
    /// hard-tanh derivative.
    HardTanhSurrogate,
}

/// Node handles of a network recorded on a tape.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub layers: Vec<NodeId>,
    /// `(weight, bias)` leaves of each parameterized layer.
    pub params: Vec<Option<(NodeId, NodeId)>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-uniform weights and zero biases.
    ///
    /// Layer `i` draws from the substream `(seed, i)`; binary layers clamp the
    /// initialization bound to 1.
    pub fn build(def: NetworkDef, seed: u64) -> Result<Self> {
        def.validate()?;
        let mut net = Network {
            params: vec![None; def.layers.len()],
            def,
            seed,
        };
        for i in net.def.parameterized_layers() {
            net.init_layer(i, seed)?;
        }
        Ok(net)
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(def: NetworkDef, params: Vec<Option<LayerParams<T>>>, seed: u64) -> Result<Self> {
        def.validate()?;
        if params.len() != def.layers.len() {
            return Err(Error::InvalidDef {
                layer: params.len().min(def.layers.len()),
                reason: format!("{} parameter slots for {} layers", params.len(), def.layers.len()),
            });
        }
        for (i, (layer, p)) in def.layers.iter().zip(&params).enumerate() {
            let bad = |reason: String| Error::InvalidDef { layer: i, reason };
            match (layer.weight_shape(), layer.bias_len(), p) {
                (Some((ws, _)), Some(bl), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() {
                        return Err(bad(format!("weight shape {:?}, expected {ws:?}", p.weight.shape())));
                    }
                    if p.bias.shape() != [bl] {
                        return Err(bad(format!("bias shape {:?}, expected [{bl}]", p.bias.shape())));
                    }
                    if !p.weight.all_finite() || !p.bias.all_finite() {
                        return Err(bad("non-finite parameter".into()));
                    }
                }
                (None, None, None) => {}
                (Some(_), _, None) => return Err(bad("missing parameters".into())),
                _ => return Err(bad(format!("{} layer takes no parameters", layer.kind_name()))),
            }
        }
        Ok(Network { def, params, seed })
    }

    /// Re-draws layer `index` from the substream `(seed, index)`.
    pub fn init_layer(&mut self, index: usize, seed: u64) -> Result<()> {
        let layer = self
            .def
            .layers
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {index}")))?;
        let (shape, fan_in) = layer
            .weight_shape()
            .ok_or_else(|| Error::InvalidArgument(format!("layer {index} has no parameters")))?;
        let bias_len = layer.bias_len().unwrap_or(0);
        let mut bound = (6.0 / fan_in as f64).sqrt();
        if self.def.is_binary_layer(index) {
            bound = bound.min(1.0);
        }
        let mut rng = SplitMix64::substream(seed, index as u64);
        self.params[index] = Some(LayerParams {
            weight: Tensor::uniform(shape, -bound, bound, &mut rng)?,
            bias: Tensor::zeros(vec![bias_len])?,
        });
        Ok(())
    }

    pub fn def(&self) -> &NetworkDef {
        &self.def
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self, index: usize) -> Option<&LayerParams<T>> {
        self.params.get(index).and_then(Option::as_ref)
    }

    pub fn params_mut(&mut self, index: usize) -> Option<&mut LayerParams<T>> {
        self.params.get_mut(index).and_then(Option::as_mut)
    }

    pub fn all_params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            def: self.def.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
            seed: self.seed,
        }
    }

    /// Accepts `C×H×W` or `N×C×H×W` and returns the batched form.
    pub fn batched_input(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let want = self.def.input_shape;
        match *input.shape() {
            [c, h, w] if [c, h, w] == want => input.reshape(vec![1, c, h, w]),
            [_, c, h, w] if [c, h, w] == want => Ok(input.clone()),
            ref s => Err(Error::shape(
                "forward",
                "input",
                format!("network expects [N,] {want:?}, got {s:?}"),
            )),
        }
    }

    fn layer_weight(&self, index: usize) -> Result<&LayerParams<T>> {
        self.params(index)
            .ok_or_else(|| Error::InvalidDef {
                layer: index,
                reason: "missing parameters".into(),
            })
    }

    /// Records the network on `tape`, starting from the batched `input` node.
    /// Parameters become differentiable leaves when `trainable`.
    pub fn record(&self, tape: &mut Tape<T>, input: NodeId, trainable: bool, mode: SignMode) -> Result<Recorded> {
        let mut cur = input;
        let mut layers = Vec::with_capacity(self.def.layers.len());
        let mut params = Vec::with_capacity(self.def.layers.len());
        for (i, layer) in self.def.layers.iter().enumerate() {
            let mut leaves = None;
            cur = match *layer {
                LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => {
                    let p = self.layer_weight(i)?;
                    let (w, b) = if trainable {
                        (tape.variable(p.weight.clone()), tape.variable(p.bias.clone()))
                    } else {
                        (tape.constant(p.weight.clone()), tape.constant(p.bias.clone()))
                    };
                    leaves = Some((w, b));
                    let w_eff = if self.def.is_binary_layer(i) {
                        binarize(tape, w, mode)?
                    } else {
                        w
                    };
                    match layer {
                        LayerSpec::Conv { stride, padding, .. } => tape.conv2d(cur, w_eff, b, *stride, *padding)?,
                        _ => tape.dense(cur, w_eff, b)?,
                    }
                }
                LayerSpec::Relu {} => tape.relu(cur)?,
                LayerSpec::Signact {} => binarize(tape, cur, mode)?,
                LayerSpec::Maxpool { window, stride } => tape.maxpool2d(cur, window, stride)?,
                LayerSpec::Flatten {} => {
                    let shape = tape.value(cur).shape();
                    let n = shape[0];
                    let f = shape[1..].iter().product();
                    tape.reshape(cur, vec![n, f])?
                }
            };
            layers.push(cur);
            params.push(leaves);
        }
        Ok(Recorded { layers, params })
    }

    /// Eager evaluation of every layer without a tape.
    pub fn activations(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut cur = self.batched_input(input)?;
        let mut out = Vec::with_capacity(self.def.layers.len());
        for (i, layer) in self.def.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => {
                    let p = self.layer_weight(i)?;
                    let binw;
                    let w = if self.def.is_binary_layer(i) {
                        binw = ops::sign_binarize(&p.weight);
                        &binw
                    } else {
                        &p.weight
                    };
                    match layer {
                        LayerSpec::Conv { stride, padding, .. } => ops::conv2d(&cur, w, &p.bias, *stride, *padding)?,
                        _ => ops::dense(&cur, w, &p.bias)?,
                    }
                }
                LayerSpec::Relu {} => ops::relu(&cur),
                LayerSpec::Signact {} => ops::sign_binarize(&cur),
                LayerSpec::Maxpool { window, stride } => ops::maxpool2d(&cur, window, stride)?.0,
                LayerSpec::Flatten {} => {
                    let n = cur.shape()[0];
                    let f = cur.len() / n;
                    cur.reshape(vec![n, f])?
                }
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Logits (N×classes) without recording anything.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acts = self.activations(input)?;
        Ok(acts.pop().expect("validated networks have layers"))
    }

    /// Forward pass. With `record`, every layer output stays on a tape with
    /// the input as a differentiable leaf; otherwise only logits are kept.
    pub fn forward(&self, input: &Tensor<T>, record: bool) -> Result<ForwardTrace<T>> {
        self.forward_with(input, record, SignMode::Sign)
    }

    pub fn forward_with(&self, input: &Tensor<T>, record: bool, mode: SignMode) -> Result<ForwardTrace<T>> {
        let batched = self.batched_input(input)?;
        let feature_layer = self.def.feature_layer().ok_or_else(|| Error::InvalidDef {
            layer: 0,
            reason: "network has no conv layer".into(),
        })?;
        let mut tape = Tape::new();
        if record {
            let input = tape.variable(batched);
            let rec = self.record(&mut tape, input, false, mode)?;
            let logits = *rec.layers.last().expect("validated networks have layers");
            Ok(ForwardTrace {
                tape,
                input,
                layers: rec.layers,
                logits,
                feature_layer,
            })
        } else {
            let logits = self.predict(&batched)?;
            let input = tape.constant(batched);
            let logits = tape.constant(logits);
            Ok(ForwardTrace {
                tape,
                input,
                layers: Vec::new(),
                logits,
                feature_layer,
            })
        }
    }
}

fn binarize<T: Scalar>(tape: &mut Tape<T>, x: NodeId, mode: SignMode) -> Result<NodeId> {
    match mode {
        SignMode::Sign => tape.sign(x),
        SignMode::HardTanhSurrogate => {
            let h = tape.hardtanh(x)?;
            let residual = ops::sign_binarize(tape.value(x)).sub(tape.value(h))?;
            let c = tape.constant(residual);
            tape.add(h, c)
        }
    }
}

/// Per-layer activations and logits of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    tape: Tape<T>,
    input: NodeId,
    layers: Vec<NodeId>,
    logits: NodeId,
    feature_layer: usize,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn is_recorded(&self) -> bool {
        !self.layers.is_empty()
    }

    /// Number of recorded layer outputs (zero when not recorded).
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn input_node(&self) -> NodeId {
        self.input
    }

    pub fn layer_node(&self, index: usize) -> Option<NodeId> {
        self.layers.get(index).copied()
    }

    pub fn activation(&self, index: usize) -> Option<&Tensor<T>> {
        self.layer_node(index).map(|id| self.tape.value(id))
    }

    pub fn activations(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().map(|&id| self.tape.value(id)).collect()
    }

    /// Pre-softmax class scores, N×classes.
    pub fn logits(&self) -> &Tensor<T> {
        self.tape.value(self.logits)
    }

    /// Index of the layer whose output GradCAM uses.
    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    /// Differentiable logit of `class_id` for a single-image trace.
    pub fn class_score(&mut self, class_id: usize) -> Result<NodeId> {
        let logits = self.logits();
        let classes = logits.shape()[1];
        if class_id >= classes {
            return Err(Error::InvalidArgument(format!(
                "class {class_id} out of range for {classes} classes"
            )));
        }
        if logits.shape()[0] != 1 {
            return Err(Error::InvalidArgument("class score needs a single-image trace".into()));
        }
        if !self.is_recorded() {
            return Err(Error::InvalidArgument("class score needs a recorded trace".into()));
        }
        self.tape.select(self.logits, class_id)
    }

    /// Feature maps `K×U×V` of the last conv layer (after its activation).
    pub fn last_conv_output(&self) -> Result<Tensor<T>> {
        let a = self
            .activation(self.feature_layer)
            .ok_or_else(|| Error::InvalidArgument("last conv output needs a recorded trace".into()))?;
        match *a.shape() {
            [1, k, u, v] => a.reshape(vec![k, u, v]),
            ref s => Err(Error::InvalidArgument(format!(
                "last conv output needs a single-image trace, got {s:?}"
            ))),
        }
    }

    pub fn feature_node(&self) -> Option<NodeId> {
        self.layer_node(self.feature_layer)
    }

    pub fn backward(&self, output: NodeId) -> Result<GradientSet<T>> {
        self.tape.backward(output)
    }

    pub fn adjoints(&self, output: NodeId) -> Result<Adjoints<T>> {
        self.tape.adjoints(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::def::{LayerSpec, Precision};

    fn conv(i: usize, o: usize, precision: Precision) -> LayerSpec {
        LayerSpec::Conv {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            stride: 1,
            padding: 1,
            precision,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let def = NetworkDef::shapes_default(16, 3);
        let a = Network::<f32>::build(def.clone(), 1).unwrap();
        let b = Network::<f32>::build(def.clone(), 1).unwrap();
        let c = Network::<f32>::build(def, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(0), c.params(0));
    }

    #[test]
    fn binary_latent_weights_within_unit_interval() {
        let mut def = NetworkDef::shapes_default(16, 3).binarized();
        def.full_precision_ends = false;
        let net = Network::<f32>::build(def, 9).unwrap();
        for i in net.def().parameterized_layers() {
            assert!(net.params(i).unwrap().weight.data().iter().all(|w| w.abs() <= 1.0));
        }
    }

    #[test]
    fn binary_dense_uses_signed_weights() {
        // conv(1→1, 1×1, identity) → flatten → binary dense(2→1)
        let def = NetworkDef {
            input_shape: [1, 1, 2],
            classes: 1,
            layers: vec![
                LayerSpec::Conv {
                    in_channels: 1,
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    precision: Precision::Full,
                },
                LayerSpec::Flatten {},
                LayerSpec::Dense {
                    inputs: 2,
                    outputs: 1,
                    precision: Precision::Binary,
                },
            ],
            full_precision_ends: false,
        };
        let params = vec![
            Some(LayerParams {
                weight: Tensor::from_f64(vec![1, 1, 1, 1], &[1.0]).unwrap(),
                bias: Tensor::zeros(vec![1]).unwrap(),
            }),
            None,
            Some(LayerParams {
                weight: Tensor::from_f64(vec![2, 1], &[0.3, -0.2]).unwrap(),
                bias: Tensor::zeros(vec![1]).unwrap(),
            }),
        ];
        let net = Network::<f32>::from_parts(def, params, 0).unwrap();
        let x = Tensor::from_f64(vec![1, 1, 2], &[5.0, 2.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn recorded_and_eager_agree() {
        let net = Network::<f32>::build(NetworkDef::shapes_default(16, 3).binarized(), 4).unwrap();
        let mut rng = SplitMix64::new(1);
        let x = Tensor::uniform(vec![1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let trace = net.forward(&x, true).unwrap();
        let eager = net.activations(&x).unwrap();
        assert_eq!(trace.len(), net.def().layers.len());
        for (a, b) in trace.activations().iter().zip(&eager) {
            assert_eq!(*a, b);
        }
        let quiet = net.forward(&x, false).unwrap();
        assert!(!quiet.is_recorded());
        assert_eq!(quiet.logits(), trace.logits());
    }

    #[test]
    fn sign_activations_are_exactly_unit() {
        let net = Network::<f32>::build(NetworkDef::shapes_default(16, 3).binarized(), 4).unwrap();
        let mut rng = SplitMix64::new(2);
        let x = Tensor::uniform(vec![2, 1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let trace = net.forward(&x, true).unwrap();
        for (i, layer) in net.def().layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Signact {}) {
                assert!(trace.activation(i).unwrap().data().iter().all(|&v| v == 1.0 || v == -1.0));
            }
        }
    }

    #[test]
    fn class_score_and_feature_maps() {
        let def = NetworkDef {
            input_shape: [1, 4, 4],
            classes: 3,
            layers: vec![
                conv(1, 2, Precision::Full),
                LayerSpec::Relu {},
                conv(2, 2, Precision::Full),
                LayerSpec::Flatten {},
                LayerSpec::Dense {
                    inputs: 32,
                    outputs: 3,
                    precision: Precision::Full,
                },
            ],
            full_precision_ends: true,
        };
        let net = Network::<f64>::build(def, 3).unwrap();
        let x = Tensor::full(vec![1, 4, 4], 0.5).unwrap();
        let mut trace = net.forward(&x, true).unwrap();
        // The second conv has no activation attached, so its raw output is used.
        assert_eq!(trace.feature_layer(), 2);
        assert_eq!(trace.last_conv_output().unwrap().shape(), &[2, 4, 4]);
        let s = trace.class_score(1).unwrap();
        assert_eq!(trace.tape().value(s).data()[0], trace.logits().data()[1]);
        assert!(trace.class_score(3).is_err());
        assert!(net.forward(&x, false).unwrap().class_score(0).is_err());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Network::<f32>::build(NetworkDef::shapes_default(16, 3), 0).unwrap();
        let x = Tensor::zeros(vec![1, 12, 12]).unwrap();
        assert!(net.forward(&x, true).is_err());
    }
}
