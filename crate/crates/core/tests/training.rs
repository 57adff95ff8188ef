use binsight::data::{evaluate, gen_shapes, predict_classes, train, Dataset, TrainConfig};
use binsight::net::{LayerSpec, NetworkDef, Precision};
use binsight::rng::SplitMix64;
use binsight::tensor::Tensor;
use binsight::{Dataset32, Network32};

fn cfg(learning_rate: f64, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate,
        epochs,
        batch_size: 16,
        seed,
        clip: 1.0,
    }
}

#[test]
fn training_is_deterministic() {
    let data = gen_shapes::<f32>(3, 20, 16).unwrap();
    let run = || {
        let mut net = Network32::build(NetworkDef::shapes_default(16, 3).binarized(), 5).unwrap();
        let h = train(&mut net, &data, &cfg(0.01, 3, 5)).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    assert_eq!(ha.accuracy.len(), 3);
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_exact() {
    let data = gen_shapes::<f32>(4, 10, 16).unwrap();
    for def in [NetworkDef::shapes_default(16, 3), NetworkDef::shapes_default(16, 3).binarized()] {
        let start = Network32::build(def, 9).unwrap();
        let mut net = start.clone();
        train(&mut net, &data, &cfg(0.0, 2, 1)).unwrap();
        assert_eq!(net, start);
    }
}

#[test]
fn latent_weights_stay_clamped() {
    let data = gen_shapes::<f32>(5, 16, 16).unwrap();
    let mut net = Network32::build(NetworkDef::shapes_default(16, 3).binarized(), 2).unwrap();
    let clip = 0.05;
    for epoch in 0..3 {
        let c = TrainConfig {
            clip,
            seed: epoch,
            ..cfg(0.5, 1, epoch)
        };
        train(&mut net, &data, &c).unwrap();
        for i in net.def().parameterized_layers() {
            if net.def().is_binary_layer(i) {
                let w = &net.params(i).unwrap().weight;
                assert!(w.data().iter().all(|v| v.abs() <= clip as f32), "layer {i} epoch {epoch}");
            }
        }
    }
}

/// Two classes separated by which half of the image is bright.
fn separable_toy(n: usize, seed: u64) -> Dataset32 {
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(n * 36);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        for y in 0..6 {
            for _ in 0..6 {
                let bright = (y < 3) == (class == 0);
                let base = if bright { 0.6 } else { 0.0 };
                data.push(base + 0.4 * rng.next_f64() as f32);
            }
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 1, 6, 6], data).unwrap(), labels, 2).unwrap()
}

#[test]
fn separable_toy_reaches_full_training_accuracy() {
    let data = separable_toy(64, 1);
    let def = NetworkDef {
        input_shape: [1, 6, 6],
        classes: 2,
        layers: vec![
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
                precision: Precision::Full,
            },
            LayerSpec::Relu {},
            LayerSpec::Flatten {},
            LayerSpec::Dense {
                inputs: 72,
                outputs: 2,
                precision: Precision::Full,
            },
        ],
        full_precision_ends: true,
    };
    let mut net = Network32::build(def, 3).unwrap();
    let h = train(&mut net, &data, &TrainConfig { batch_size: 8, ..cfg(0.05, 50, 3) }).unwrap();
    let first = h.accuracy.iter().position(|&a| a == 1.0);
    assert!(first.is_some(), "history {:?}", h.accuracy);
    assert_eq!(evaluate(&net, &data).unwrap(), 1.0);
}

#[test]
fn full_precision_loss_decreases_every_epoch_in_most_seeds() {
    let data = gen_shapes::<f32>(0, 100, 16).unwrap();
    let mut monotone = 0;
    for seed in 0..5 {
        let mut net = Network32::build(NetworkDef::shapes_default(16, 3), seed).unwrap();
        let h = train(&mut net, &data, &cfg(0.01, 20, seed)).unwrap();
        if h.loss.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 4, "{monotone}/5 seeds had non-increasing loss");
}

#[test]
fn evaluate_against_constructed_labels() {
    let data = gen_shapes::<f32>(7, 30, 16).unwrap();
    let net = Network32::build(NetworkDef::shapes_default(16, 3), 1).unwrap();
    let pred = predict_classes(&net, data.images()).unwrap();
    let right = Dataset::new(data.images().clone(), pred.clone(), 3).unwrap();
    assert_eq!(evaluate(&net, &right).unwrap(), 1.0);
    let wrong = Dataset::new(data.images().clone(), pred.iter().map(|p| (p + 1) % 3).collect(), 3).unwrap();
    assert_eq!(evaluate(&net, &wrong).unwrap(), 0.0);
}

#[test]
fn random_labels_score_near_chance() {
    let data = gen_shapes::<f32>(8, 1000, 16).unwrap();
    let mut rng = SplitMix64::new(123);
    let labels = (0..data.len()).map(|_| rng.below(3) as usize).collect();
    let shuffled = Dataset::new(data.images().clone(), labels, 3).unwrap();
    let net = Network32::build(NetworkDef::shapes_default(16, 3), 4).unwrap();
    let acc = evaluate(&net, &shuffled).unwrap();
    assert!((acc - 1.0 / 3.0).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn mismatched_shapes_rejected() {
    let data = gen_shapes::<f32>(1, 4, 12).unwrap();
    let mut net = Network32::build(NetworkDef::shapes_default(16, 3), 1).unwrap();
    assert!(train(&mut net, &data, &cfg(0.01, 1, 0)).is_err());
}
