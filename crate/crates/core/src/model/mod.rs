//! The unfolded reconstruction network.
//!
//! Iteration `k` takes the `C`-channel features `X(k-1)`, splits off the
//! first channel as the current image estimate `r` and keeps the remaining
//! `C-1` channels `Z(k-1)`. The inertial block attends from `Z(k-1)` to
//! `Z(k-2)`, the projection block takes a gradient step on `r` and fuses it
//! with the inertial features, and the feed-forward network denoises the
//! result into `X(k)`.

pub mod attention;
pub mod ffn;
pub mod layers;

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::{Error, FieldError, Result};
use crate::init;
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::sampling::{ratio_to_m, SamplingOperator};
use crate::tensor::Tensor;

pub use attention::{
    cross_attention, gdb, isca_forward, pgca_forward, Attended, CaWeights, IscaWeights, PgcaWeights,
};
pub use ffn::{ffn_forward, FfbWeights, FfnWeights};
pub use layers::{Conv, Norm, NormKind};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub block_size: usize,
    pub ratio: f64,
    pub channels: usize,
    pub iterations: usize,
    pub ffb_expansion: usize,
    /// When false every iteration uses `Z(k-1)` directly (ablation).
    pub use_isca: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            block_size: 32,
            ratio: 0.1,
            channels: 32,
            iterations: 10,
            ffb_expansion: 4,
            use_isca: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut bad = |field: &str, message: &str| {
            errors.push(FieldError {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.block_size == 0 {
            bad("block_size", "must be positive");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            bad("ratio", "must lie in (0, 1]");
        }
        if self.channels < 2 {
            bad("channels", "must be at least 2");
        }
        if self.iterations == 0 {
            bad("iterations", "must be positive");
        }
        if self.ffb_expansion == 0 {
            bad("ffb_expansion", "must be positive");
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn measurements(&self) -> Result<usize> {
        ratio_to_m(self.ratio, self.block_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OctIterationWeights {
    /// Absent for the first iteration and when the ablation disables it.
    pub isca: Option<IscaWeights>,
    pub pgca: PgcaWeights,
    pub ffn: FfnWeights,
}

/// All learnable parameters plus the layer structure that uses them.
#[derive(Clone, Debug, PartialEq)]
pub struct OctufModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub sampler: SamplingOperator,
    pub conv0: Conv,
    pub iterations: Vec<OctIterationWeights>,
}

/// Result of one unfolded iteration.
#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub features: Var,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[1, H, W]` reconstruction (first channel of the final features).
    pub x_hat: Var,
    /// `[C, H, W]` final features.
    pub features: Var,
    /// Every attention map computed, in execution order.
    pub attention: Vec<Var>,
}

pub fn oct_iteration<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    w: &OctIterationWeights,
    sampler: &SamplingOperator,
    x_prev: Var,
    z_prev2: Option<Var>,
    y: Var,
) -> Result<IterationOutput> {
    let c = tape.shape(x_prev)[0];
    let r = tape.slice_channels(x_prev, 0..1)?;
    let z = tape.slice_channels(x_prev, 1..c)?;
    let mut attention = Vec::with_capacity(2);
    let z_hat = match (&w.isca, z_prev2) {
        (Some(isca), Some(older)) => {
            let a = isca_forward(tape, p, isca, z, older)?;
            attention.push(a.attention);
            a.out
        }
        (None, None) => z,
        (Some(_), None) => {
            return Err(Error::Contract(
                "iteration has an inertial block but no features from two steps back".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Contract(
                "features from two steps back given to an iteration without inertial block".into(),
            ))
        }
    };
    let s = pgca_forward(tape, p, &w.pgca, sampler, r, y, z_hat)?;
    attention.push(s.attention);
    let features = ffn_forward(tape, p, &w.ffn, s.out)?;
    Ok(IterationOutput {
        features,
        attention,
    })
}

impl<T: Real> OctufModel<T> {
    /// Builds a freshly initialised model. Parameters are registered in a
    /// fixed order: sampler, embedding conv, then each iteration.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init::rng(seed);
        let mut params = ParamStore::new();
        let c = config.channels;
        let sampler = SamplingOperator::init(
            &mut params,
            "sampler.phi",
            config.block_size,
            config.ratio,
            &mut rng,
        )?;
        let conv0 = Conv::init(
            &mut params,
            "conv0",
            1,
            c,
            3,
            Conv2dSpec::same3x3(1),
            &mut rng,
        );
        let iterations = (1..=config.iterations)
            .map(|k| {
                let name = format!("iter{k:02}");
                let isca = (k >= 2 && config.use_isca).then(|| {
                    IscaWeights::init(&mut params, &format!("{name}.isca"), c - 1, &mut rng)
                });
                let pgca = PgcaWeights::init(&mut params, &format!("{name}.pgca"), c, &mut rng);
                let ffn = FfnWeights::init(
                    &mut params,
                    &format!("{name}.ffn"),
                    c,
                    config.ffb_expansion,
                    &mut rng,
                );
                OctIterationWeights { isca, pgca, ffn }
            })
            .collect();
        Ok(OctufModel {
            config,
            params,
            sampler,
            conv0,
            iterations,
        })
    }

    pub fn cast<U: Real>(&self) -> OctufModel<U> {
        OctufModel {
            config: self.config.clone(),
            params: self.params.cast(),
            sampler: self.sampler.clone(),
            conv0: self.conv0.clone(),
            iterations: self.iterations.clone(),
        }
    }

    pub fn phi(&self) -> &Tensor<T> {
        self.params.get(self.sampler.phi)
    }

    /// Runs all iterations on measurements `y` (`[M, H/B, W/B]`).
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, y: Var) -> Result<ForwardOutput> {
        let x0 = self.sampler.init_reconstruction(tape, p, y)?;
        let mut current = self.conv0.forward(tape, p, x0)?;
        let mut older: Option<Var> = None;
        let mut attention = Vec::new();
        let c = self.config.channels;
        for it in &self.iterations {
            let z_prev2 = match (&it.isca, older) {
                (Some(_), Some(x)) => Some(tape.slice_channels(x, 1..c)?),
                _ => None,
            };
            let out = oct_iteration(tape, p, it, &self.sampler, current, z_prev2, y)?;
            attention.extend(out.attention);
            older = Some(current);
            current = out.features;
        }
        let x_hat = tape.slice_channels(current, 0..1)?;
        Ok(ForwardOutput {
            x_hat,
            features: current,
            attention,
        })
    }

    /// Measurements of a `[1, H, W]` image.
    pub fn measure(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.sampler.sample_tensor(self.phi(), image)
    }

    /// Reconstruction from measurements, without recording gradients.
    pub fn reconstruct(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let out = self.forward(&mut tape, &p, yv)?;
        Ok(tape.value(out.x_hat).clone())
    }

    /// Samples then reconstructs a block-aligned `[1, H, W]` image.
    pub fn round_trip(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.reconstruct(&self.measure(image)?)
    }
}

/// Mean squared error over every element; a leading batch axis is averaged
/// along with the pixels.
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, x_hat: Var, x: Var) -> Result<Var> {
    let diff = tape.sub(x_hat, x)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}
