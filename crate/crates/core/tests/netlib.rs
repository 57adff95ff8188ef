use binsight::net::{decode_model, encode_model, ActShape, LayerParams, LayerSpec, Network, NetworkDef, Precision};
use binsight::rng::SplitMix64;
use binsight::tensor::Tensor;
use binsight::{Network32, Network64};
use proptest::prelude::*;

fn conv(cin: usize, cout: usize, precision: Precision) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 1,
        padding: 0,
        precision,
    }
}

fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// conv(1→2) → signact → conv(2→2, binary) → signact → flatten → dense(binary)
fn tiny_binary_def() -> NetworkDef {
    NetworkDef {
        input_shape: [1, 5, 5],
        classes: 2,
        layers: vec![
            conv(1, 2, Precision::Binary),
            LayerSpec::Signact {},
            conv(2, 2, Precision::Binary),
            LayerSpec::Signact {},
            LayerSpec::Flatten {},
            LayerSpec::Dense {
                inputs: 2,
                outputs: 2,
                precision: Precision::Binary,
            },
        ],
        full_precision_ends: false,
    }
}

fn loop_conv(x: &[Vec<Vec<f64>>], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let [o, c, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let h = x[0].len() - k + 1;
    let mut out = vec![vec![vec![0.0; h]; h]; o];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..h {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += sgn(w.at(&[oc, ic, i, j])) * x[ic][y + i][xx + j];
                        }
                    }
                }
                out[oc][y][xx] = acc;
            }
        }
    }
    out
}

#[test]
fn tiny_binary_net_matches_hand_binarized_loop_oracle() {
    let net = Network64::build(tiny_binary_def(), 21).unwrap();
    let mut rng = SplitMix64::new(3);
    for _ in 0..5 {
        let x = Tensor::<f64>::uniform(vec![1, 5, 5], -1.0, 1.0, &mut rng).unwrap();
        let img = vec![(0..5).map(|i| (0..5).map(|j| x.at(&[0, i, j])).collect()).collect()];
        let p = |i: usize| net.params(i).unwrap();
        let a1: Vec<Vec<Vec<f64>>> = loop_conv(&img, &p(0).weight, &p(0).bias)
            .into_iter()
            .map(|ch| ch.into_iter().map(|r| r.into_iter().map(sgn).collect()).collect())
            .collect();
        let a2 = loop_conv(&a1, &p(2).weight, &p(2).bias);
        let feats: Vec<f64> = a2.iter().flatten().flatten().map(|&v| sgn(v)).collect();
        let w = &p(5).weight;
        let logits: Vec<f64> = (0..2)
            .map(|g| p(5).bias.data()[g] + (0..2).map(|f| sgn(w.at(&[f, g])) * feats[f]).sum::<f64>())
            .collect();
        assert_eq!(net.predict(&x).unwrap().data(), logits.as_slice());
    }
}

#[test]
fn binary_dense_behaves_as_signed_weights() {
    let def = NetworkDef {
        input_shape: [1, 3, 3],
        classes: 1,
        layers: vec![
            conv(1, 2, Precision::Full),
            LayerSpec::Flatten {},
            LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
                precision: Precision::Binary,
            },
        ],
        full_precision_ends: false,
    };
    let mut net = Network64::build(def, 1).unwrap();
    net.params_mut(2).unwrap().weight = Tensor::new(vec![2, 1], vec![0.3, -0.2]).unwrap();
    let x = Tensor::<f64>::full(vec![1, 3, 3], 0.5).unwrap();
    let trace = net.forward(&x, true).unwrap();
    let feats = trace.activation(1).unwrap().data().to_vec();
    assert_eq!(trace.logits().data(), &[feats[0] - feats[1]]);
}

#[test]
fn full_precision_forward_ignores_policy_flags() {
    let def = NetworkDef::shapes_default(16, 3);
    let net = Network32::build(def.clone(), 8).unwrap();
    let flipped = Network32::from_parts(
        NetworkDef {
            full_precision_ends: false,
            ..def
        },
        net.all_params().to_vec(),
        8,
    )
    .unwrap();
    let x = Tensor::<f32>::uniform(vec![2, 1, 16, 16], 0.0, 1.0, &mut SplitMix64::new(1)).unwrap();
    assert_eq!(net.predict(&x).unwrap(), flipped.predict(&x).unwrap());
}

#[test]
fn forward_without_hooks_matches_plain_kernels() {
    use binsight::ops;
    let net = Network64::build(NetworkDef::shapes_default(16, 3), 4).unwrap();
    let x = Tensor::<f64>::uniform(vec![1, 1, 16, 16], 0.0, 1.0, &mut SplitMix64::new(2)).unwrap();
    let p = |i: usize| net.params(i).unwrap();
    let a = ops::relu(&ops::conv2d(&x, &p(0).weight, &p(0).bias, 1, 1).unwrap());
    let a = ops::maxpool2d(&a, 2, 2).unwrap().0;
    let a = ops::relu(&ops::conv2d(&a, &p(3).weight, &p(3).bias, 1, 1).unwrap());
    let a = ops::maxpool2d(&a, 2, 2).unwrap().0;
    let a = a.reshape(vec![1, 256]).unwrap();
    let logits = ops::dense(&a, &p(7).weight, &p(7).bias).unwrap();
    assert_eq!(net.predict(&x).unwrap(), logits);
}

#[test]
fn trace_shapes_follow_the_definition() {
    let def = NetworkDef::shapes_default(16, 3);
    let net = Network32::build(def.clone(), 2).unwrap();
    let x = Tensor::<f32>::uniform(vec![1, 16, 16], 0.0, 1.0, &mut SplitMix64::new(9)).unwrap();
    let trace = net.forward(&x, true).unwrap();
    assert_eq!(trace.len(), def.layers.len());
    assert_eq!(trace.logits().shape(), &[1, 3]);
    let shapes = def.layer_shapes().unwrap();
    for (i, s) in shapes.iter().enumerate() {
        assert_eq!(&trace.activation(i).unwrap().shape()[1..], s.dims().as_slice());
    }
    let feats = trace.last_conv_output().unwrap();
    assert_eq!(trace.feature_layer(), 4);
    assert_eq!(feats.shape(), &[16, 8, 8]);
    assert!(matches!(shapes[4], ActShape::Spatial { channels: 16, height: 8, width: 8 }));
}

#[test]
fn last_conv_output_for_one_and_two_convs() {
    let one = NetworkDef {
        input_shape: [1, 5, 5],
        classes: 2,
        layers: vec![
            conv(1, 3, Precision::Full),
            LayerSpec::Flatten {},
            LayerSpec::Dense {
                inputs: 27,
                outputs: 2,
                precision: Precision::Full,
            },
        ],
        full_precision_ends: true,
    };
    let net = Network64::build(one, 1).unwrap();
    let x = Tensor::<f64>::uniform(vec![1, 5, 5], 0.0, 1.0, &mut SplitMix64::new(1)).unwrap();
    let trace = net.forward(&x, true).unwrap();
    assert_eq!(trace.feature_layer(), 0);
    assert_eq!(trace.last_conv_output().unwrap().data(), trace.activation(0).unwrap().data());

    let two = tiny_binary_def();
    let net = Network64::build(two, 1).unwrap();
    let trace = net.forward(&x, true).unwrap();
    assert_eq!(trace.feature_layer(), 3);
    assert_eq!(trace.last_conv_output().unwrap().shape(), &[2, 1, 1]);
}

#[test]
fn class_score_is_the_logit() {
    let net = Network64::build(NetworkDef::shapes_default(16, 3), 3).unwrap();
    let x = Tensor::<f64>::uniform(vec![1, 16, 16], 0.0, 1.0, &mut SplitMix64::new(4)).unwrap();
    let mut trace = net.forward(&x, true).unwrap();
    let logits = trace.logits().data().to_vec();
    for c in 0..3 {
        let node = trace.class_score(c).unwrap();
        assert_eq!(trace.tape().value(node).data(), &[logits[c]]);
    }
    assert!(trace.class_score(3).is_err());

    // shifting every logit by the same amount shifts each score by it and
    // leaves the softmax unchanged
    let mut shifted = net.clone();
    for b in shifted.params_mut(7).unwrap().bias.data_mut() {
        *b += 2.5;
    }
    let mut t2 = shifted.forward(&x, true).unwrap();
    let softmax = |l: &[f64]| {
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    for c in 0..3 {
        let node = t2.class_score(c).unwrap();
        assert!((t2.tape().value(node).data()[0] - (logits[c] + 2.5)).abs() < 1e-12);
    }
    for (a, b) in softmax(&logits).iter().zip(softmax(t2.logits().data())) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn class_score_on_batch_rejected() {
    let net = Network64::build(NetworkDef::shapes_default(16, 3), 3).unwrap();
    let x = Tensor::<f64>::zeros(vec![2, 1, 16, 16]).unwrap();
    let mut trace = net.forward(&x, true).unwrap();
    assert!(trace.class_score(0).is_err());
}

#[test]
fn model_file_round_trip_through_disk_format() {
    let net = Network32::build(NetworkDef::shapes_default(16, 3).binarized(), 77).unwrap();
    let bytes = encode_model(&net).unwrap();
    assert_eq!(&bytes[..16], b"BINSIGHT-MODEL\0\0");
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.seed(), 77);
    assert_eq!(encode_model(&back).unwrap(), bytes);
}

#[test]
fn wrong_parameter_shapes_rejected() {
    let def = NetworkDef::shapes_default(16, 3);
    let net = Network32::build(def.clone(), 1).unwrap();
    let mut params = net.all_params().to_vec();
    params[0] = Some(LayerParams {
        weight: Tensor::zeros(vec![8, 1, 5, 5]).unwrap(),
        bias: Tensor::zeros(vec![8]).unwrap(),
    });
    assert!(Network::from_parts(def, params, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_deterministic_and_binary_activations_are_unit(seed in any::<u64>(), xs in any::<u64>()) {
        let net = Network32::build(NetworkDef::shapes_default(16, 3).binarized(), seed).unwrap();
        let x = Tensor::<f32>::uniform(vec![1, 16, 16], 0.0, 1.0, &mut SplitMix64::new(xs)).unwrap();
        let a = net.forward(&x, true).unwrap();
        let b = net.forward(&x, true).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(a.activation(i), b.activation(i));
            if matches!(net.def().layers[i], LayerSpec::Signact {}) {
                prop_assert!(a.activation(i).unwrap().data().iter().all(|&v| v == 1.0 || v == -1.0));
            }
        }
        for i in net.def().parameterized_layers() {
            if net.def().is_binary_layer(i) {
                prop_assert!(net.params(i).unwrap().weight.data().iter().all(|w| w.abs() <= 1.0));
            }
        }
    }
}
