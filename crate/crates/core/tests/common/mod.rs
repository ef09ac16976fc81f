#![allow(dead_code)]

pub mod equivalence;
pub mod naive;

use octuf::synth::smooth_images;
use octuf::{AdamConfig, LrSchedule, ModelConfig, OctufModel, Tensor, Trainer};

/// The overfit sanity run: a small model memorising four fixed patches.
pub fn sanity_config() -> ModelConfig {
    ModelConfig {
        block_size: 32,
        ratio: 0.25,
        channels: 8,
        iterations: 3,
        ffb_expansion: 4,
        use_isca: true,
    }
}

pub fn sanity_patches() -> Vec<Tensor<f32>> {
    smooth_images(4, 96, 96, 100)
}

pub fn sanity_trainer(seed: u64) -> Trainer<f32> {
    let model = OctufModel::new(sanity_config(), seed).expect("valid configuration");
    Trainer::new(model, AdamConfig::default())
}

pub const SANITY_STEPS: usize = 2000;

/// Learning rate of the sanity run, indexed by step.
pub fn sanity_schedule() -> LrSchedule {
    LrSchedule {
        lr_max: 5e-3,
        lr_min: 1e-3,
        warmup_epochs: 300.0,
        total_epochs: SANITY_STEPS as f64,
    }
}
