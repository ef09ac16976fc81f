//! Seeded synthetic grayscale images.
//!
//! Smooth scenes built from a few low-frequency gratings and soft blobs.
//! Used by the tests and as a stand-in training set when no image
//! directory is at hand.

use rand::Rng;

use crate::init::rng_for;
use crate::real::Real;
use crate::tensor::Tensor;

/// A `[1, height, width]` image in `[0, 1]`, a pure function of `seed`.
pub fn smooth_image<T: Real>(height: usize, width: usize, seed: u64) -> Tensor<T> {
    let mut rng = rng_for(seed, 0x5eed);
    let gratings: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(0.02..0.12);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.05..0.15);
            [angle.cos() * freq, angle.sin() * freq, phase, amp]
        })
        .collect();
    let blobs: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.0..width as f64),
                rng.gen_range(4.0..16.0),
                rng.gen_range(-0.25..0.25),
            ]
        })
        .collect();
    let base = rng.gen_range(0.35..0.65);
    Tensor::from_fn(&[1, height, width], |i| {
        let (y, x) = ((i / width) as f64, (i % width) as f64);
        let mut v = base;
        for [fx, fy, phase, amp] in &gratings {
            v += amp * (fx * x + fy * y + phase).sin();
        }
        for [cy, cx, radius, amp] in &blobs {
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            v += amp * (-d2 / (2.0 * radius * radius)).exp();
        }
        T::lit(v.clamp(0.0, 1.0))
    })
}

/// `count` images of one size with consecutive seeds.
pub fn smooth_images<T: Real>(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Vec<Tensor<T>> {
    (0..count as u64)
        .map(|k| smooth_image(height, width, seed.wrapping_add(k)))
        .collect()
}
