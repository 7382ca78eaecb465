use rand::Rng;

use super::image::{Image, CHANNELS, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::seed;

const SYNTH_STREAM: u64 = 0x5EED_0001;

/// Procedural stand-in for a natural source image: a two-colour linear
/// gradient background with 2 to 5 filled shapes on top.
pub fn synthesize_original(seed: u64, index: u64) -> Image {
    synthesize(seed, index, DEFAULT_WIDTH, DEFAULT_HEIGHT)
}

pub fn synthesize(seed: u64, index: u64, width: usize, height: usize) -> Image {
    let mut rng = seed::rng(seed::derive2(seed, SYNTH_STREAM, index));
    let mut img = Image::filled(width, height, 0.0);

    let c0: [f32; 3] = rng.random();
    let c1: [f32; 3] = rng.random();
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32 - 0.5;
            let v = (y as f32 + 0.5) / height as f32 - 0.5;
            let t = (0.5 + (u * ca + v * sa) / std::f32::consts::SQRT_2).clamp(0.0, 1.0);
            for c in 0..CHANNELS {
                img.set(x, y, c, c0[c] * (1.0 - t) + c1[c] * t);
            }
        }
    }

    let shapes = rng.random_range(2..=5);
    for _ in 0..shapes {
        let color: [f32; 3] = rng.random();
        let size = rng.random_range(0.15..0.5f32);
        let cx = rng.random_range(0.0..1.0f32);
        let cy = rng.random_range(0.0..1.0f32);
        let kind = rng.random_range(0..3);
        let aspect = rng.random_range(0.5..2.0f32);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f32 + 0.5) / width as f32 - cx;
                let v = (y as f32 + 0.5) / height as f32 - cy;
                let inside = match kind {
                    0 => u.abs() <= size * 0.5 * aspect.sqrt() && v.abs() <= size * 0.5 / aspect.sqrt(),
                    1 => u * u + v * v <= (size * 0.5) * (size * 0.5),
                    // Upward triangle with apex at (cx, cy - size/2).
                    _ => {
                        let half = size * 0.5;
                        v >= -half && v <= half && u.abs() <= (v + half) * 0.5
                    }
                };
                if inside {
                    for (c, &value) in color.iter().enumerate() {
                        img.set(x, y, c, value);
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthesize_original(7, 0);
        let b = synthesize_original(7, 0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32 * 32 * 3);
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn distinct_indices_differ() {
        let a = synthesize_original(7, 0);
        let b = synthesize_original(7, 1);
        let d = a.mean_abs_diff(&b);
        assert!(d > 0.01, "mean abs diff {d}");
        // Regression value for this generator.
        assert!((d - 0.414407779).abs() < 1e-6, "mean abs diff {d}");
    }
}
