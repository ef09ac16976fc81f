//! Fixtures shared by the benchmarks.

use octuf::init::{normal, rng_for};
use octuf::synth::smooth_images;
use octuf::{ModelConfig, OctufModel, Tensor};

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    normal(shape, 1.0, &mut rng_for(seed, 0))
}

/// The configuration of the overfit sanity run.
pub fn sanity_model() -> OctufModel<f32> {
    let cfg = ModelConfig {
        block_size: 32,
        ratio: 0.25,
        channels: 8,
        iterations: 3,
        ffb_expansion: 4,
        use_isca: true,
    };
    OctufModel::new(cfg, 0).expect("valid configuration")
}

pub fn patches(count: usize, size: usize) -> Vec<Tensor<f32>> {
    smooth_images(count, size, size, 100)
}
