//! Convolution and normalization layers bound to a [`ParamStore`].

use rand::Rng;

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::Result;
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv2dSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let cin_g = cin / spec.groups;
        let fan_in = cin_g * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = init::uniform(&[cout, cin_g, kernel, kernel], bound, rng);
        Conv {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            spec,
        }
    }

    pub fn pointwise<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::init(store, name, cin, cout, 1, Conv2dSpec::POINTWISE, rng)
    }

    pub fn depthwise3x3<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::init(
            store,
            name,
            channels,
            channels,
            3,
            Conv2dSpec::same3x3(channels),
            rng,
        )
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.weight), Some(p.get(self.bias)), self.spec)
    }
}

/// Which statistics a [`Norm`] standardises over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Over channels at each pixel, with a per-channel affine.
    Channel,
    /// Over all pixels of a single-channel map, with a scalar affine.
    Spatial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub kind: NormKind,
}

impl Norm {
    pub fn channel<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self::with_len(store, name, channels, NormKind::Channel)
    }

    pub fn spatial<T: Real>(store: &mut ParamStore<T>, name: &str) -> Self {
        Self::with_len(store, name, 1, NormKind::Spatial)
    }

    fn with_len<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        len: usize,
        kind: NormKind,
    ) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[len], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[len])),
            kind,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (gamma, beta) = (p.get(self.gamma), p.get(self.beta));
        match self.kind {
            NormKind::Channel => tape.layer_norm(x, 0, gamma, beta, LN_EPS),
            NormKind::Spatial => {
                let shape = tape.shape(x).to_vec();
                let flat = tape.reshape(x, &[shape[0], shape.iter().skip(1).product()])?;
                let normed = tape.layer_norm(flat, 1, gamma, beta, LN_EPS)?;
                tape.reshape(normed, &shape)
            }
        }
    }
}
