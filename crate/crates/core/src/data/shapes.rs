//! Synthetic three-class shapes dataset: filled squares, filled circles and
//! hollow triangles on a black canvas.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SHAPE_CLASSES: [&str; 3] = ["square", "circle", "triangle"];

/// Geometry of one generated sample, in pixel coordinates (row, column).
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeInstance {
    Square {
        top: usize,
        left: usize,
        side: usize,
        intensity: f64,
    },
    Circle {
        center: (f64, f64),
        radius: f64,
        intensity: f64,
    },
    Triangle {
        apex: (usize, usize),
        base_left: (usize, usize),
        base_right: (usize, usize),
        intensity: f64,
    },
}

impl ShapeInstance {
    pub fn class(&self) -> usize {
        match self {
            ShapeInstance::Square { .. } => 0,
            ShapeInstance::Circle { .. } => 1,
            ShapeInstance::Triangle { .. } => 2,
        }
    }
}

fn int_in(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn line(canvas: &mut [f64], size: usize, (y0, x0): (usize, usize), (y1, x1): (usize, usize), v: f64) {
    // Bresenham over signed coordinates.
    let (mut x, mut y) = (x0 as i64, y0 as i64);
    let (x1, y1) = (x1 as i64, y1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        canvas[y as usize * size + x as usize] = v;
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw(shape: &ShapeInstance, size: usize) -> Vec<f64> {
    let mut canvas = vec![0.0; size * size];
    match *shape {
        ShapeInstance::Square {
            top,
            left,
            side,
            intensity,
        } => {
            for y in top..top + side {
                canvas[y * size + left..y * size + left + side].fill(intensity);
            }
        }
        ShapeInstance::Circle {
            center: (cy, cx),
            radius,
            intensity,
        } => {
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d2 <= radius * radius {
                        canvas[y * size + x] = intensity;
                    }
                }
            }
        }
        ShapeInstance::Triangle {
            apex,
            base_left,
            base_right,
            intensity,
        } => {
            line(&mut canvas, size, apex, base_left, intensity);
            line(&mut canvas, size, base_left, base_right, intensity);
            line(&mut canvas, size, base_right, apex, intensity);
        }
    }
    canvas
}

fn sample(class: usize, size: usize, rng: &mut SplitMix64) -> ShapeInstance {
    let intensity = rng.uniform(0.7, 1.0);
    match class {
        0 => {
            let side = int_in(rng, size / 4, size / 2);
            let top = int_in(rng, 1, size - side - 1);
            let left = int_in(rng, 1, size - side - 1);
            ShapeInstance::Square {
                top,
                left,
                side,
                intensity,
            }
        }
        1 => {
            let radius = rng.uniform(size as f64 / 8.0, size as f64 / 4.0);
            let lo = radius + 0.5;
            let hi = size as f64 - 1.5 - radius;
            let cy = rng.uniform(lo, hi);
            let cx = rng.uniform(lo, hi);
            ShapeInstance::Circle {
                center: (cy, cx),
                radius,
                intensity,
            }
        }
        _ => {
            let height = int_in(rng, size / 3, size * 3 / 5);
            let half = int_in(rng, height / 2, height * 3 / 4).min((size - 3) / 2).max(2);
            let top = int_in(rng, 1, size - height - 2);
            let cx = int_in(rng, half + 1, size - half - 2);
            ShapeInstance::Triangle {
                apex: (top, cx),
                base_left: (top + height, cx - half),
                base_right: (top + height, cx + half),
                intensity,
            }
        }
    }
}

/// Generates `3 * n_per_class` images of `size × size`, returning the dataset
/// together with the drawn geometry. Sample `i` has class `i % 3` and draws
/// from the substream `(seed, i)`.
pub fn generate_shapes<T: Scalar>(seed: u64, n_per_class: usize, size: usize) -> Result<(Dataset<T>, Vec<ShapeInstance>)> {
    if size < 12 {
        return Err(Error::InvalidArgument(format!("shapes canvas size {size} is below 12")));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be positive".into()));
    }
    let n = 3 * n_per_class;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SplitMix64::substream(seed, i as u64);
        let shape = sample(i % 3, size, &mut rng);
        data.extend(draw(&shape, size).into_iter().map(T::of));
        labels.push(shape.class());
        shapes.push(shape);
    }
    let images = Tensor::new(vec![n, 1, size, size], data)?;
    Ok((Dataset::new(images, labels, 3)?, shapes))
}

pub fn gen_shapes<T: Scalar>(seed: u64, n_per_class: usize, size: usize) -> Result<Dataset<T>> {
    generate_shapes(seed, n_per_class, size).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = gen_shapes::<f32>(5, 20, 16).unwrap();
        let b = gen_shapes::<f32>(5, 20, 16).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_shapes::<f32>(6, 20, 16).unwrap());
        for c in 0..3 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 20);
        }
    }

    #[test]
    fn square_pixel_count_matches_side() {
        let (ds, shapes) = generate_shapes::<f32>(123, 10, 16).unwrap();
        for (i, shape) in shapes.iter().enumerate() {
            if let ShapeInstance::Square { side, intensity, .. } = *shape {
                let img = ds.image(i).unwrap();
                let lit = img.data().iter().filter(|&&v| v > 0.0).count();
                assert_eq!(lit, side * side);
                let v = intensity as f32;
                assert!(img.data().iter().all(|&p| p == 0.0 || p == v));
            }
        }
    }

    #[test]
    fn shapes_fit_and_intensity_range() {
        for size in [12, 16, 28] {
            let (ds, shapes) = generate_shapes::<f64>(9, 30, size).unwrap();
            for (i, s) in shapes.iter().enumerate() {
                let img = ds.image(i).unwrap();
                let max = img.max();
                assert!((0.7..=1.0).contains(&max), "sample {i}: {max}");
                // Nothing touches the outer border.
                for k in 0..size {
                    for &(y, x) in &[(0, k), (size - 1, k), (k, 0), (k, size - 1)] {
                        assert_eq!(img.at(&[0, y, x]), 0.0, "{s:?} touches border at {y},{x}");
                    }
                }
            }
        }
    }

    #[test]
    fn triangles_are_hollow() {
        let (ds, shapes) = generate_shapes::<f32>(4, 10, 20).unwrap();
        for (i, s) in shapes.iter().enumerate() {
            if let ShapeInstance::Triangle { apex, base_left, .. } = *s {
                // A point just inside, below the apex and above the base, stays dark.
                let y = (apex.0 + base_left.0) / 2 + 1;
                assert_eq!(ds.image(i).unwrap().at(&[0, y, apex.1]), 0.0);
            }
        }
    }

    #[test]
    fn small_canvas_rejected() {
        assert!(gen_shapes::<f32>(0, 1, 11).is_err());
    }
}
