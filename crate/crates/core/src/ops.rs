//! Forward and backward kernels for the primitive layer operations.
//!
//! All kernels are plain loops over row-major buffers. Layouts:
//! images NCHW, convolution weights OIHW, dense weights F×G (input × output).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str, what: &'static str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, what, format!("expected 4 dimensions, got {s:?}"))),
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str, what: &'static str) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        ref s => Err(Error::shape(op, what, format!("expected 2 dimensions, got {s:?}"))),
    }
}

/// Output extent of a sliding window; `None` when the window does not fit or
/// the stride does not divide the span exactly.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of max pooling (floor division, trailing rows dropped).
pub fn pool_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > input {
        return None;
    }
    Some((input - window) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let [n, c, h, w] = dims4(input, "conv2d", "input")?;
    let [o, ci, kh, kw] = dims4(weight, "conv2d", "weight")?;
    if ci != c {
        return Err(Error::shape(
            "conv2d",
            "input channels",
            format!("input has {c} channels, weight expects {ci}"),
        ));
    }
    if bias.shape() != [o] {
        return Err(Error::shape(
            "conv2d",
            "bias length",
            format!("expected [{o}], got {:?}", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    let oh = conv_extent(h, kh, stride, padding).ok_or_else(|| {
        Error::shape(
            "conv2d",
            "height",
            format!("H={h}, kernel {kh}, stride {stride}, padding {padding} gives no exact output extent"),
        )
    })?;
    let ow = conv_extent(w, kw, stride, padding).ok_or_else(|| {
        Error::shape(
            "conv2d",
            "width",
            format!("W={w}, kernel {kw}, stride {stride}, padding {padding} gives no exact output extent"),
        )
    })?;
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    })
}

/// Valid output positions `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn valid_range(k: usize, padding: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    // Input coordinate is out * stride + k - padding; it must land in [0, input).
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    let hi = if input + padding > k {
        ((input + padding - k - 1) / stride + 1).min(output)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, padding)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); g.n * g.o * g.oh * g.ow];
    let plane = g.oh * g.ow;
    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            dst.fill(bias.data()[o]);
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                for ki in 0..g.kh {
                    let (ylo, yhi) = valid_range(ki, g.padding, g.stride, g.h, g.oh);
                    for kj in 0..g.kw {
                        let wv = wt[((o * g.c + c) * g.kh + ki) * g.kw + kj];
                        let (xlo, xhi) = valid_range(kj, g.padding, g.stride, g.w, g.ow);
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ki - g.padding;
                            let row = &src[iy * g.w..(iy + 1) * g.w];
                            let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                            for ox in xlo..xhi {
                                drow[ox] += wv * row[ox * g.stride + kj - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)
}

/// Gradients of a convolution. Each output is computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    upstream: &Tensor<T>,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, bias, stride, padding)?;
    if upstream.shape() != [g.n, g.o, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d backward",
            "upstream gradient",
            format!("expected {:?}, got {:?}", [g.n, g.o, g.oh, g.ow], upstream.shape()),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let up = upstream.data();
    let plane = g.oh * g.ow;
    let mut gin = want[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = want[1].then(|| vec![T::zero(); wt.len()]);
    for n in 0..g.n {
        for o in 0..g.o {
            let src_up = &up[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            for c in 0..g.c {
                let base = (n * g.c + c) * g.h * g.w;
                for ki in 0..g.kh {
                    let (ylo, yhi) = valid_range(ki, g.padding, g.stride, g.h, g.oh);
                    for kj in 0..g.kw {
                        let widx = ((o * g.c + c) * g.kh + ki) * g.kw + kj;
                        let wv = wt[widx];
                        let (xlo, xhi) = valid_range(kj, g.padding, g.stride, g.w, g.ow);
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ki - g.padding;
                            for ox in xlo..xhi {
                                let ix = ox * g.stride + kj - g.padding;
                                let u = src_up[oy * g.ow + ox];
                                if let Some(gi) = gin.as_mut() {
                                    gi[base + iy * g.w + ix] += wv * u;
                                }
                                acc += x[base + iy * g.w + ix] * u;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let gb = want[2].then(|| {
        let mut gb = vec![T::zero(); g.o];
        for n in 0..g.n {
            for (o, slot) in gb.iter_mut().enumerate() {
                *slot += up[(n * g.o + o) * plane..(n * g.o + o + 1) * plane].iter().copied().sum();
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: gin.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        weight: gw.map(|d| Tensor::new(weight.shape().to_vec(), d)).transpose()?,
        bias: gb.map(|d| Tensor::new(vec![g.o], d)).transpose()?,
    })
}

fn dense_geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<[usize; 3]> {
    let [n, f] = dims2(input, "dense", "input")?;
    let [fi, g] = dims2(weight, "dense", "weight")?;
    if fi != f {
        return Err(Error::shape(
            "dense",
            "inner extent",
            format!("input has {f} features, weight expects {fi}"),
        ));
    }
    if bias.shape() != [g] {
        return Err(Error::shape(
            "dense",
            "bias length",
            format!("expected [{g}], got {:?}", bias.shape()),
        ));
    }
    Ok([n, f, g])
}

/// Affine map `input · weight + bias`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, f, g] = dense_geometry(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * g);
    for r in 0..n {
        let mut row = bias.data().to_vec();
        for (k, &xv) in x[r * f..(r + 1) * f].iter().enumerate() {
            for (acc, &wv) in row.iter_mut().zip(&w[k * g..(k + 1) * g]) {
                *acc += xv * wv;
            }
        }
        out.extend(row);
    }
    Tensor::new(vec![n, g], out)
}

pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    upstream: &Tensor<T>,
    want: [bool; 3],
) -> Result<DenseGrads<T>> {
    let [n, f, g] = dense_geometry(input, weight, bias)?;
    if upstream.shape() != [n, g] {
        return Err(Error::shape(
            "dense backward",
            "upstream gradient",
            format!("expected [{n}, {g}], got {:?}", upstream.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let up = upstream.data();
    let gin = want[0].then(|| {
        let mut gi = vec![T::zero(); n * f];
        for r in 0..n {
            let u = &up[r * g..(r + 1) * g];
            for k in 0..f {
                gi[r * f + k] = w[k * g..(k + 1) * g].iter().zip(u).map(|(&a, &b)| a * b).sum();
            }
        }
        gi
    });
    let gw = want[1].then(|| {
        let mut gw = vec![T::zero(); f * g];
        for r in 0..n {
            let u = &up[r * g..(r + 1) * g];
            for k in 0..f {
                let xv = x[r * f + k];
                for (acc, &uv) in gw[k * g..(k + 1) * g].iter_mut().zip(u) {
                    *acc += xv * uv;
                }
            }
        }
        gw
    });
    let gb = want[2].then(|| {
        let mut gb = vec![T::zero(); g];
        for r in 0..n {
            for (acc, &uv) in gb.iter_mut().zip(&up[r * g..(r + 1) * g]) {
                *acc += uv;
            }
        }
        gb
    });
    Ok(DenseGrads {
        input: gin.map(|d| Tensor::new(vec![n, f], d)).transpose()?,
        weight: gw.map(|d| Tensor::new(vec![f, g], d)).transpose()?,
        bias: gb.map(|d| Tensor::new(vec![g], d)).transpose()?,
    })
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input offset of the first (row-major) maximal element of its window.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4(input, "maxpool2d", "input")?;
    let oh = pool_extent(h, window, stride).ok_or_else(|| {
        Error::shape("maxpool2d", "height", format!("window {window} / stride {stride} does not fit H={h}"))
    })?;
    let ow = pool_extent(w, window, stride).ok_or_else(|| {
        Error::shape("maxpool2d", "width", format!("window {window} / stride {stride} does not fit W={w}"))
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

/// Routes each upstream value to its window's recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != upstream.len() {
        return Err(Error::shape(
            "maxpool2d backward",
            "upstream gradient",
            format!("{} pooled outputs, {} gradients", argmax.len(), upstream.len()),
        ));
    }
    let mut g = Tensor::zeros(input_shape.to_vec())?;
    let gd = g.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        gd[idx] += u;
    }
    Ok(g)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes the upstream gradient where the input is strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(upstream, "relu backward", |x, u| if x > T::zero() { u } else { T::zero() })
}

/// `+1` for `x >= 0`, `-1` otherwise.
pub fn sign_binarize<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { T::one() } else { -T::one() })
}

/// Clipped straight-through estimator: upstream gradient where `|x| <= 1`.
pub fn ste_backward<T: Scalar>(saved_input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    saved_input.zip_map(upstream, "ste backward", |x, u| if x.abs() <= T::one() { u } else { T::zero() })
}

/// `clamp(x, -1, 1)`.
pub fn hardtanh<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.max(-T::one()).min(T::one()))
}

/// Derivative of `clamp(x, -1, 1)`, taking the closed interval `[-1, 1]` as
/// the linear piece.
pub fn hardtanh_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(upstream, "hardtanh backward", |x, u| {
        if -T::one() <= x && x <= T::one() {
            u
        } else {
            T::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f32> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    // Naive reference loops, written independently of the kernels above.
    fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, s: usize, p: usize) -> Vec<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;
        let mut out = Vec::new();
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b.data()[oi] as f64;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * s + i) as isize - p as isize;
                                    let ix = (xx * s + j) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(&[ni, ci, iy as usize, ix as usize]) as f64
                                        * w.at(&[oi, ci, i, j]) as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.]), &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_sum_kernel() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let y = conv2d(&x, &t(&[1, 1, 2, 2], &[1.; 4]), &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = SplitMix64::new(11);
        for &(s, p, h) in &[(1, 0, 8), (1, 1, 8), (2, 1, 9), (3, 0, 9)] {
            let x = Tensor::<f32>::uniform(vec![2, 3, h, h], -1.0, 1.0, &mut rng).unwrap();
            let w = Tensor::<f32>::uniform(vec![4, 3, 3, 3], -1.0, 1.0, &mut rng).unwrap();
            let b = Tensor::<f32>::uniform(vec![4], -1.0, 1.0, &mut rng).unwrap();
            let y = conv2d(&x, &w, &b, s, p).unwrap();
            let want = conv_oracle(&x, &w, &b, s, p);
            assert_eq!(y.len(), want.len());
            for (a, e) in y.data().iter().zip(&want) {
                assert!((*a as f64 - e).abs() <= 1e-5, "{a} vs {e} (stride {s}, pad {p})");
            }
        }
    }

    #[test]
    fn conv_rejects_mismatches() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(vec![1, 3, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        let err = conv2d(&x, &w, &b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");

        let w = Tensor::<f32>::zeros(vec![1, 2, 3, 3]).unwrap();
        // (4 - 3) is not divisible by stride 2.
        let err = conv2d(&x, &w, &b, 2, 0).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 2], &[1., 2.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &t(&[2], &[0., 0.])).unwrap(), x);
        assert_eq!(dense(&x, &eye, &t(&[2], &[5., 5.])).unwrap().data(), &[6.0, 7.0]);
        assert!(dense(&x, &t(&[3, 2], &[0.; 6]), &t(&[2], &[0.; 2])).is_err());
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = SplitMix64::new(5);
        let x = Tensor::<f32>::uniform(vec![4, 10], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::<f32>::uniform(vec![10, 3], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f32>::uniform(vec![3], -1.0, 1.0, &mut rng).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        for n in 0..4 {
            for g in 0..3 {
                let mut acc = b.data()[g] as f64;
                for f in 0..10 {
                    acc += x.at(&[n, f]) as f64 * w.at(&[f, g]) as f64;
                }
                assert!((y.at(&[n, g]) as f64 - acc).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::<f32>::full(vec![1, 2, 4, 4], 0.5).unwrap();
        let (y, arg) = maxpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        // Ties route to the first element of each window.
        assert_eq!(&arg[..4], &[0, 2, 8, 10]);

        assert!(maxpool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn maxpool_matches_loop_oracle() {
        let mut rng = SplitMix64::new(9);
        let x = Tensor::<f32>::uniform(vec![1, 2, 6, 6], -1.0, 1.0, &mut rng).unwrap();
        let (y, _) = maxpool2d(&x, 2, 2).unwrap();
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(a, b)| x.at(&[0, c, 2 * i + a, 2 * j + b]))
                        .fold(f32::NEG_INFINITY, f32::max);
                    assert_eq!(y.at(&[0, c, i, j]), m);
                }
            }
        }
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1., 0., 2.])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&t(&[3], &[-1., -2., -0.5])).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&t(&[3], &[3., -3., 0.]), &t(&[3], &[2., 2., 2.])).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn sign_examples() {
        assert_eq!(sign_binarize(&t(&[2], &[-0.3, 0.7])).data(), &[-1.0, 1.0]);
        assert_eq!(sign_binarize(&t(&[1], &[0.])).data(), &[1.0]);
        assert_eq!(sign_binarize(&t(&[1], &[-0.0])).data(), &[1.0]);
        let x = t(&[4], &[-2., -0.1, 0.0, 3.]);
        let s = sign_binarize(&x);
        assert_eq!(sign_binarize(&s), s);
    }

    #[test]
    fn ste_examples() {
        let g = ste_backward(&t(&[3], &[0.5, 1.5, 1.0]), &t(&[3], &[2., 1., 3.])).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0, 3.0]);
        assert_eq!(ste_backward(&t(&[1], &[-1.0]), &t(&[1], &[4.])).unwrap().data(), &[4.0]);
        assert!(ste_backward(&t(&[2], &[0., 0.]), &t(&[1], &[0.])).is_err());
    }

    #[test]
    fn extents() {
        assert_eq!(conv_extent(16, 3, 1, 1), Some(16));
        assert_eq!(conv_extent(4, 3, 2, 0), None);
        assert_eq!(conv_extent(2, 3, 1, 0), None);
        assert_eq!(pool_extent(5, 2, 2), Some(2));
        assert_eq!(pool_extent(1, 2, 2), None);
    }
}
