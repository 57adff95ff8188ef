//! Gradient, SmoothGrad and GradCAM saliency maps.
//!
//! Every method produces an H×W map normalized to `[0, 1]`. A raw map that is
//! constant cannot be normalized; it is returned as all zeros with
//! [`SaliencyMap::all_zero`] set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default SmoothGrad sample count.
pub const DEFAULT_SAMPLES: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCamVariant {
    /// `max(0, L)`.
    #[default]
    Standard,
    /// `max(L) - L`, no rectification.
    NoReluInverted,
}

impl GradCamVariant {
    pub fn name(self) -> &'static str {
        match self {
            GradCamVariant::Standard => "standard",
            GradCamVariant::NoReluInverted => "no_relu_inverted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothGradParams {
    /// Noise standard deviation as a fraction of the image's value range.
    pub noise_pct: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SmoothGradParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("smoothgrad needs at least one sample".into()));
        }
        if !(self.noise_pct >= 0.0 && self.noise_pct.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level {} must be >= 0", self.noise_pct)));
        }
        Ok(())
    }
}

/// Saliency method together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MapMethod {
    Gradient,
    #[serde(rename = "smoothgrad")]
    SmoothGrad(SmoothGradParams),
    #[serde(rename = "gradcam")]
    GradCam { variant: GradCamVariant },
}

impl MapMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MapMethod::Gradient => "gradient",
            MapMethod::SmoothGrad(_) => "smoothgrad",
            MapMethod::GradCam { .. } => "gradcam",
        }
    }

    /// Compact `key=value;…` rendering of the parameters.
    pub fn params_string(&self) -> String {
        match self {
            MapMethod::Gradient => String::new(),
            MapMethod::SmoothGrad(p) => format!("noise={};n={};seed={}", p.noise_pct, p.n_samples, p.seed),
            MapMethod::GradCam { variant } => format!("variant={}", variant.name()),
        }
    }
}

/// A normalized H×W attribution map.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
    pub method: MapMethod,
    pub class_id: usize,
    /// The raw map was constant, so every value is zero.
    pub all_zero: bool,
}

impl<T: Scalar> SaliencyMap<T> {
    /// Normalizes an H×W raw map.
    pub fn from_raw(raw: &Tensor<T>, method: MapMethod, class_id: usize) -> Result<Self> {
        let [height, width] = match *raw.shape() {
            [h, w] => [h, w],
            ref s => return Err(Error::shape("saliency map", "raw map", format!("expected H×W, got {s:?}"))),
        };
        let (values, all_zero) = normalize_map(raw.data())?;
        Ok(Self {
            height,
            width,
            values,
            method,
            class_id,
            all_zero,
        })
    }

    /// Wraps already-normalized values, checking the map invariants.
    pub fn from_normalized(height: usize, width: usize, values: Vec<T>, method: MapMethod, class_id: usize) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::shape(
                "saliency map",
                "value count",
                format!("{height}×{width} needs {} values, got {}", height * width, values.len()),
            ));
        }
        if values.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument("map values must lie in [0, 1]".into()));
        }
        let all_zero = values.iter().all(|&v| v == T::zero());
        Ok(Self {
            height,
            width,
            values,
            method,
            class_id,
            all_zero,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn at(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.height, self.width], self.values.clone()).expect("map shape is consistent")
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }
}

/// Min-max normalization. A constant input maps to all zeros and is flagged.
pub fn normalize_map<T: Scalar>(raw: &[T]) -> Result<(Vec<T>, bool)> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("saliency map"));
    }
    let min = raw.iter().copied().fold(T::infinity(), T::min);
    let max = raw.iter().copied().fold(T::neg_infinity(), T::max);
    if !(max > min) {
        return Ok((vec![T::zero(); raw.len()], true));
    }
    let range = max - min;
    Ok((raw.iter().map(|&v| (v - min) / range).collect(), false))
}

fn check_image<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let want = net.def().input_shape;
    match *image.shape() {
        [c, h, w] | [1, c, h, w] if [c, h, w] == want => image.reshape(want.to_vec()),
        ref s => Err(Error::shape("saliency", "image", format!("network expects {want:?}, got {s:?}"))),
    }
}

/// `∂ logit[class_id] / ∂ image`, shaped C×H×W.
pub fn input_gradient<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class_id: usize) -> Result<Tensor<T>> {
    let image = check_image(net, image)?;
    let mut trace = net.forward(&image, true)?;
    let score = trace.class_score(class_id)?;
    let mut grads = trace.backward(score)?;
    let g = grads
        .take(trace.input_node())
        .expect("input is a differentiable leaf of the score");
    g.reshape(image.shape().to_vec())
}

/// Channel-wise maximum of absolute values, C×H×W → H×W.
pub fn channel_max_abs<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = match *g.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(Error::shape("channel reduction", "gradient", format!("expected C×H×W, got {s:?}"))),
    };
    let plane = h * w;
    let out = (0..plane)
        .map(|p| (0..c).map(|ch| g.data()[ch * plane + p].abs()).fold(T::zero(), T::max))
        .collect();
    Tensor::new(vec![h, w], out)
}

/// Un-normalized Gradient map.
pub fn gradient_raw<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class_id: usize) -> Result<Tensor<T>> {
    channel_max_abs(&input_gradient(net, image, class_id)?)
}

pub fn vanilla_gradient<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class_id: usize) -> Result<SaliencyMap<T>> {
    SaliencyMap::from_raw(&gradient_raw(net, image, class_id)?, MapMethod::Gradient, class_id)
}

/// Standard deviation used by SmoothGrad: `noise_pct × (max − min)` of the image.
pub fn noise_sigma<T: Scalar>(image: &Tensor<T>, noise_pct: f64) -> f64 {
    noise_pct * (image.max().as_f64() - image.min().as_f64())
}

/// Noisy copy of `image` for SmoothGrad sample `sample`: each element gets
/// `σ·z` with `z` drawn in row-major order from the substream `(seed, sample)`.
pub fn perturb<T: Scalar>(image: &Tensor<T>, sigma: f64, seed: u64, sample: usize) -> Tensor<T> {
    let mut rng = SplitMix64::substream(seed, sample as u64);
    let mut out = image.clone();
    for x in out.data_mut() {
        *x += T::of(sigma * rng.gaussian());
    }
    out
}

/// Raw Gradient map at SmoothGrad sample `sample`.
pub fn smoothgrad_sample_raw<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    noise_pct: f64,
    seed: u64,
    sample: usize,
) -> Result<Tensor<T>> {
    let sigma = noise_sigma(image, noise_pct);
    gradient_raw(net, &perturb(image, sigma, seed, sample), class_id)
}

/// Mean of the raw Gradient maps of `n_samples` noisy copies, normalized once.
///
/// With zero noise every sample equals the unperturbed image, and the result
/// is the Gradient map itself.
pub fn smoothgrad<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    params: &SmoothGradParams,
) -> Result<SaliencyMap<T>> {
    params.validate()?;
    let method = MapMethod::SmoothGrad(*params);
    let sigma = noise_sigma(image, params.noise_pct);
    if sigma == 0.0 {
        return SaliencyMap::from_raw(&gradient_raw(net, image, class_id)?, method, class_id);
    }
    let mut acc: Option<Tensor<T>> = None;
    for s in 0..params.n_samples {
        let raw = gradient_raw(net, &perturb(image, sigma, params.seed, s), class_id)?;
        acc = Some(match acc {
            None => raw,
            Some(a) => a.add(&raw)?,
        });
    }
    let mean = acc.expect("n_samples >= 1").scale(T::one() / T::of(params.n_samples as f64));
    SaliencyMap::from_raw(&mean, method, class_id)
}

/// Intermediate GradCAM quantities for one image.
#[derive(Clone, Debug)]
pub struct GradCamDetail<T> {
    /// Spatially averaged gradient per feature map.
    pub alphas: Vec<T>,
    /// `Σ_k α_k A^k`, U×V.
    pub combined: Tensor<T>,
    /// `combined` after the variant's rectification or inversion, U×V.
    pub adjusted: Tensor<T>,
    /// `adjusted` bilinearly upsampled to H×W.
    pub upsampled: Tensor<T>,
}

pub fn gradcam_detail<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    variant: GradCamVariant,
) -> Result<GradCamDetail<T>> {
    let image = check_image(net, image)?;
    let [_, h, w] = net.def().input_shape;
    let mut trace = net.forward(&image, true)?;
    let score = trace.class_score(class_id)?;
    let adj = trace.adjoints(score)?;
    let feature = trace.last_conv_output()?;
    let [k, u, v] = match *feature.shape() {
        [k, u, v] => [k, u, v],
        _ => unreachable!("last_conv_output is K×U×V"),
    };
    let node = trace.feature_node().expect("recorded trace");
    let plane = u * v;
    let grad = match adj.get(node) {
        Some(g) => g.reshape(vec![k, u, v])?,
        None => Tensor::zeros(vec![k, u, v])?,
    };
    let alphas: Vec<T> = grad
        .data()
        .chunks_exact(plane)
        .map(|c| c.iter().copied().sum::<T>() / T::of(plane as f64))
        .collect();
    let mut combined = vec![T::zero(); plane];
    for (a, fmap) in alphas.iter().zip(feature.data().chunks_exact(plane)) {
        for (acc, &f) in combined.iter_mut().zip(fmap) {
            *acc += *a * f;
        }
    }
    let combined = Tensor::new(vec![u, v], combined)?;
    let adjusted = match variant {
        GradCamVariant::Standard => combined.map(|x| x.max(T::zero())),
        GradCamVariant::NoReluInverted => {
            let m = combined.max();
            combined.map(|x| m - x)
        }
    };
    let upsampled = upsample_bilinear(&adjusted, h, w)?;
    Ok(GradCamDetail {
        alphas,
        combined,
        adjusted,
        upsampled,
    })
}

pub fn gradcam<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class_id: usize,
    variant: GradCamVariant,
) -> Result<SaliencyMap<T>> {
    let detail = gradcam_detail(net, image, class_id, variant)?;
    let method = MapMethod::GradCam { variant };
    if detail.adjusted.max() == detail.adjusted.min() {
        let [_, h, w] = net.def().input_shape;
        return SaliencyMap::from_raw(&Tensor::zeros(vec![h, w])?, method, class_id);
    }
    SaliencyMap::from_raw(&detail.upsampled, method, class_id)
}

/// Bilinear resize with corner-aligned sampling: output row `i` samples
/// source row `i·(U−1)/(H−1)`, so the four corners are preserved.
pub fn upsample_bilinear<T: Scalar>(src: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [u, v] = match *src.shape() {
        [u, v] => [u, v],
        ref s => return Err(Error::shape("upsample", "source", format!("expected U×V, got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("upsample target must be non-empty".into()));
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let s = src.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = coord(i, out_h, u);
        let fy = T::of(fy);
        for j in 0..out_w {
            let (x0, x1, fx) = coord(j, out_w, v);
            let fx = T::of(fx);
            let top = s[y0 * v + x0] * (T::one() - fx) + s[y0 * v + x1] * fx;
            let bottom = s[y1 * v + x0] * (T::one() - fx) + s[y1 * v + x1] * fx;
            out.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

/// Dispatches to the method named by `method`.
pub fn saliency_map<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class_id: usize, method: &MapMethod) -> Result<SaliencyMap<T>> {
    match method {
        MapMethod::Gradient => vanilla_gradient(net, image, class_id),
        MapMethod::SmoothGrad(p) => smoothgrad(net, image, class_id, p),
        MapMethod::GradCam { variant } => gradcam(net, image, class_id, *variant),
    }
}
