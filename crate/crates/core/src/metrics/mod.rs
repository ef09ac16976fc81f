//! Image quality, complexity accounting and the measurement-noise sweep.

pub mod complexity;
pub mod quality;

pub use complexity::{complexity, ComplexityEntry, ComplexityReport};
pub use quality::{mse, psnr, psnr_from_mse, ssim};

use crate::error::{Error, Result};
use crate::init::{normal, rng_for};
use crate::io::image::{crop_to, pad_to_block};
use crate::model::OctufModel;
use crate::real::Real;
use crate::tensor::Tensor;

/// Reconstruction of one image and its quality against `reference`.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub reconstruction: Tensor<T>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Pads `input` to whole blocks, samples and reconstructs it, crops back and
/// scores the result against `reference` (same shape as `input`).
pub fn evaluate_against<T: Real>(
    model: &OctufModel<T>,
    input: &Tensor<T>,
    reference: &Tensor<T>,
) -> Result<Evaluation<T>> {
    let (padded, extent) = pad_to_block(input, model.config.block_size)?;
    let out = model.round_trip(&padded)?;
    let reconstruction = crop_to(&out, extent)?;
    Ok(Evaluation {
        psnr: psnr(&reconstruction, reference, 1.0)?,
        ssim: ssim(&reconstruction, reference)?,
        reconstruction,
    })
}

pub fn evaluate<T: Real>(model: &OctufModel<T>, image: &Tensor<T>) -> Result<Evaluation<T>> {
    evaluate_against(model, image, image)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseRow {
    pub sigma: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSweepResult {
    pub rows: Vec<NoiseRow>,
}

impl NoiseSweepResult {
    pub const CSV_HEADER: &'static str = "sigma,psnr_db,ssim";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out += &format!("{},{:.6},{:.6}\n", r.sigma, r.psnr_db, r.ssim);
        }
        out
    }
}

/// Mean PSNR and SSIM of reconstructions from noisy inputs, scored against
/// the clean images. Each image gets one fixed standard-normal field `z`
/// (seeded by `seed` and the image index) and the noisy input at level
/// `sigma` is `clamp(x + sigma * z, 0, 1)`, so every level sees the same
/// noise pattern at a different scale.
pub fn noise_sweep<T: Real>(
    model: &OctufModel<T>,
    images: &[Tensor<T>],
    sigmas: &[f64],
    seed: u64,
) -> Result<NoiseSweepResult> {
    if images.is_empty() {
        return Err(Error::config("data", "no images to evaluate"));
    }
    if sigmas.is_empty() {
        return Err(Error::config("sigmas", "at least one level is required"));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::config(
            "sigmas",
            "levels must be finite and non-negative",
        ));
    }
    if sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "sigmas",
            "levels must be strictly increasing",
        ));
    }
    let fields: Vec<Tensor<f64>> = images
        .iter()
        .enumerate()
        .map(|(i, img)| normal(img.shape(), 1.0, &mut rng_for(seed, i as u64)))
        .collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let (mut p, mut s) = (0.0, 0.0);
        for (img, z) in images.iter().zip(&fields) {
            let noisy = Tensor::from_fn(img.shape(), |k| {
                T::lit((img.data()[k].as_f64() + sigma * z.data()[k]).clamp(0.0, 1.0))
            });
            let e = evaluate_against(model, &noisy, img)?;
            p += e.psnr;
            s += e.ssim;
        }
        let n = images.len() as f64;
        rows.push(NoiseRow {
            sigma,
            psnr_db: p / n,
            ssim: s / n,
        });
    }
    Ok(NoiseSweepResult { rows })
}
