//! Map metrics and the experiment procedures built on them.
//!
//! Noisiness is measured by total variation; similarity by Pearson and
//! Spearman correlation. All accumulation is done in `f64`.

use crate::error::{Error, Result};
use crate::net::Network;
use crate::rng::SplitMix64;
use crate::saliency::{saliency_map, smoothgrad, vanilla_gradient, MapMethod, SaliencyMap, SmoothGradParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Noise grid for sweeps: 1% to 50%, denser around the low end.
pub const DEFAULT_NOISE_LEVELS: [f64; 8] = [0.01, 0.02, 0.04, 0.06, 0.10, 0.20, 0.35, 0.50];

/// Mean absolute difference over horizontally and vertically adjacent pixels.
pub fn total_variation_values(values: &[f64], height: usize, width: usize) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for y in 0..height {
        for x in 0..width {
            let v = values[y * width + x];
            if x + 1 < width {
                sum += (values[y * width + x + 1] - v).abs();
                pairs += 1;
            }
            if y + 1 < height {
                sum += (values[(y + 1) * width + x] - v).abs();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

pub fn total_variation<T: Scalar>(map: &SaliencyMap<T>) -> f64 {
    total_variation_values(&map.to_f64(), map.height(), map.width())
}

/// A correlation coefficient. `degenerate` marks a constant input, for which
/// the coefficient is undefined and reported as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "pearson",
            "map size",
            format!("{} vs {} values", a.len(), b.len()),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn same_shape<T: Scalar>(a: &SaliencyMap<T>, b: &SaliencyMap<T>, op: &'static str) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            op,
            "map extents",
            format!("{}×{} vs {}×{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

pub fn pearson<T: Scalar>(a: &SaliencyMap<T>, b: &SaliencyMap<T>) -> Result<Correlation> {
    same_shape(a, b, "pearson")?;
    pearson_values(&a.to_f64(), &b.to_f64())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman_values(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "spearman",
            "map size",
            format!("{} vs {} values", a.len(), b.len()),
        ));
    }
    pearson_values(&average_ranks(a), &average_ranks(b))
}

pub fn spearman<T: Scalar>(a: &SaliencyMap<T>, b: &SaliencyMap<T>) -> Result<Correlation> {
    same_shape(a, b, "spearman")?;
    spearman_values(&a.to_f64(), &b.to_f64())
}

#[derive(Clone, Debug)]
pub struct SweepRow<T> {
    pub level: f64,
    pub map: SaliencyMap<T>,
    pub total_variation: f64,
    pub pearson: Correlation,
    pub spearman: Correlation,
}

/// SmoothGrad maps over a grid of noise levels, compared with the Gradient map.
#[derive(Clone, Debug)]
pub struct SweepResult<T> {
    pub vanilla: SaliencyMap<T>,
    pub rows: Vec<SweepRow<T>>,
}

impl<T: Scalar> SweepResult<T> {
    pub fn levels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.level).collect()
    }

    pub fn total_variations(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total_variation).collect()
    }
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("noise sweep needs at least one level".into()));
    }
    if let Some(bad) = levels.iter().find(|&&l| !(l > 0.0 && l <= 0.5)) {
        return Err(Error::InvalidArgument(format!("noise level {bad} is outside (0, 0.5]")));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("noise levels must be strictly increasing".into()));
    }
    Ok(())
}

/// SmoothGrad at each level (same seed at every level) plus metrics against
/// the Gradient map.
pub fn noise_sweep<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    levels: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<SweepResult<T>> {
    validate_levels(levels)?;
    let vanilla = vanilla_gradient(net, image, class_id)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let params = SmoothGradParams {
            noise_pct: level,
            n_samples,
            seed,
        };
        let map = smoothgrad(net, image, class_id, &params)?;
        rows.push(SweepRow {
            level,
            total_variation: total_variation(&map),
            pearson: pearson(&map, &vanilla)?,
            spearman: spearman(&map, &vanilla)?,
            map,
        });
    }
    Ok(SweepResult { vanilla, rows })
}

/// Level with the lowest total variation; ties go to the smaller level.
pub fn optimal_level(levels: &[f64], tvs: &[f64]) -> Result<f64> {
    if levels.is_empty() || levels.len() != tvs.len() {
        return Err(Error::InvalidArgument("optimal noise needs a non-empty sweep".into()));
    }
    let mut best = 0;
    for i in 1..levels.len() {
        if tvs[i] < tvs[best] || (tvs[i] == tvs[best] && levels[i] < levels[best]) {
            best = i;
        }
    }
    Ok(levels[best])
}

pub fn optimal_noise<T: Scalar>(sweep: &SweepResult<T>) -> Result<f64> {
    optimal_level(&sweep.levels(), &sweep.total_variations())
}

/// Per-layer ratio `‖a_l(x+δ) − a_l(x)‖₂ / ‖δ‖₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplificationProfile {
    pub ratios: Vec<f64>,
}

fn diff_norm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ratios from two sets of layer activations and the realised input offset.
pub fn amplification_from_activations<T: Scalar>(
    clean: &[Tensor<T>],
    perturbed: &[Tensor<T>],
    delta_norm: f64,
) -> Result<AmplificationProfile> {
    if clean.len() != perturbed.len() {
        return Err(Error::InvalidArgument("activation lists differ in length".into()));
    }
    if !(delta_norm > 0.0) {
        return Err(Error::InvalidArgument("perturbation vanished at working precision".into()));
    }
    let ratios = clean
        .iter()
        .zip(perturbed)
        .map(|(a, b)| {
            a.expect_same_shape(b, "amplification")?;
            Ok(diff_norm(a, b) / delta_norm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AmplificationProfile { ratios })
}

/// Perturbs `image` by `delta_scale` times a unit-norm Gaussian direction
/// (drawn from `seed`) and measures the per-layer response.
pub fn amplification_profile<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    delta_scale: f64,
    seed: u64,
) -> Result<AmplificationProfile> {
    if !(delta_scale > 0.0 && delta_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta scale {delta_scale} must be positive")));
    }
    let mut rng = SplitMix64::new(seed);
    let direction = Tensor::<f64>::gaussian(image.shape().to_vec(), &mut rng)?;
    let norm = direction.l2_norm();
    let step = direction.map(|z| delta_scale * z / norm).cast::<T>();
    let perturbed = image.add(&step)?;
    amplification_with_input(net, image, &perturbed)
}

/// Response of every layer to moving the input from `image` to `perturbed`.
pub fn amplification_with_input<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    perturbed: &Tensor<T>,
) -> Result<AmplificationProfile> {
    image.expect_same_shape(perturbed, "amplification")?;
    let delta_norm = diff_norm(image, perturbed);
    let clean = net.activations(image)?;
    let noisy = net.activations(perturbed)?;
    amplification_from_activations(&clean, &noisy, delta_norm)
}

/// One stage of the cascading randomization check.
#[derive(Clone, Debug)]
pub struct SanityStage {
    /// Number of parameterized layers re-initialized so far, from the top.
    pub randomized: usize,
    /// Layer re-initialized at this stage (`None` for the original network).
    pub layer: Option<usize>,
    pub spearman: Correlation,
    pub all_zero: bool,
}

/// Re-initializes parameterized layers from the output downwards, one at a
/// time, and compares each resulting map with the original by Spearman rank
/// correlation. Returns `parameterized layers + 1` stages.
pub fn randomization_sanity<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    method: &MapMethod,
    seed: u64,
) -> Result<Vec<SanityStage>> {
    let original = saliency_map(net, image, class_id, method)?;
    let mut stages = vec![SanityStage {
        randomized: 0,
        layer: None,
        spearman: spearman(&original, &original)?,
        all_zero: original.all_zero,
    }];
    let mut work = net.clone();
    for (k, &layer) in net.def().parameterized_layers().iter().rev().enumerate() {
        work.init_layer(layer, seed)?;
        let map = saliency_map(&work, image, class_id, method)?;
        stages.push(SanityStage {
            randomized: k + 1,
            layer: Some(layer),
            spearman: spearman(&original, &map)?,
            all_zero: map.all_zero,
        });
    }
    Ok(stages)
}

/// Median of finite values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}
