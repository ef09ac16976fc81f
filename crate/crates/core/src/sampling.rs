//! Block-based compressive sampling `y = Phi x` and its adjoint.
//!
//! The image is cut into non-overlapping `B x B` blocks, each block is
//! vectorised row-major and multiplied by the `M x B^2` measurement matrix.
//! This is the same map as a stride-`B`, bias-free convolution whose kernel
//! is `phi` viewed as `M x 1 x B x B`, and the adjoint is the matching
//! transposed convolution.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of measurements per block for a sampling ratio.
pub fn ratio_to_m(ratio: f64, block_size: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config("ratio", format!("{ratio} is outside (0, 1]")));
    }
    if block_size == 0 {
        return Err(Error::config("block_size", "must be positive"));
    }
    let n = block_size * block_size;
    Ok(((ratio * n as f64).round() as usize).clamp(1, n))
}

/// Geometry of the measurement operator plus the handle of its matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingOperator {
    pub phi: ParamId,
    pub block_size: usize,
    pub measurements: usize,
}

impl SamplingOperator {
    /// Registers a Gaussian `M x B^2` matrix (variance `1/B^2`) as `name`.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        block_size: usize,
        ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let measurements = ratio_to_m(ratio, block_size)?;
        let n = block_size * block_size;
        let phi = init::normal(&[measurements, n], (1.0 / n as f64).sqrt(), rng);
        Ok(Self {
            phi: store.add(name, phi),
            block_size,
            measurements,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn ratio(&self) -> f64 {
        self.measurements as f64 / self.block_len() as f64
    }

    /// `[1, H, W]` image to `[M, H/B, W/B]` measurements.
    pub fn sample<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        self.sample_with(tape, p.get(self.phi), image)
    }

    /// [`SamplingOperator::sample`] with an explicitly recorded matrix.
    pub fn sample_with<T: Real>(&self, tape: &mut Tape<T>, phi: Var, image: Var) -> Result<Var> {
        let s = tape.shape(image).to_vec();
        let b = self.block_size;
        if s.len() != 3 || s[0] != 1 || !s[1].is_multiple_of(b) || !s[2].is_multiple_of(b) {
            return Err(Error::dim(format!(
                "sample: image shape {s:?} is not [1, H, W] with H, W divisible by {b}"
            )));
        }
        let (hb, wb) = (s[1] / b, s[2] / b);
        let blocks = tape.space_to_depth(image, b)?;
        let cols = tape.reshape(blocks, &[self.block_len(), hb * wb])?;
        let y = tape.matmul(phi, cols)?;
        tape.reshape(y, &[self.measurements, hb, wb])
    }

    /// `[M, H/B, W/B]` measurements to the `[1, H, W]` image `Phi^T y`.
    pub fn adjoint<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, y: Var) -> Result<Var> {
        self.adjoint_with(tape, p.get(self.phi), y)
    }

    pub fn adjoint_with<T: Real>(&self, tape: &mut Tape<T>, phi: Var, y: Var) -> Result<Var> {
        let s = tape.shape(y).to_vec();
        if s.len() != 3 || s[0] != self.measurements {
            return Err(Error::dim(format!(
                "adjoint: measurement shape {s:?}, expected [{}, h, w]",
                self.measurements
            )));
        }
        let (hb, wb) = (s[1], s[2]);
        let cols = tape.reshape(y, &[self.measurements, hb * wb])?;
        let x = tape.matmul_tn(phi, cols)?;
        let blocks = tape.reshape(x, &[self.block_len(), hb, wb])?;
        tape.depth_to_space(blocks, self.block_size)
    }

    /// Initial estimate `x0 = Phi^T y`.
    pub fn init_reconstruction<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        y: Var,
    ) -> Result<Var> {
        self.adjoint(tape, p, y)
    }

    /// The matrix viewed as an `M x 1 x B x B` convolution kernel. Same
    /// bytes, different shape.
    pub fn kernel_view<T: Real>(&self, phi: &Tensor<T>) -> Result<Tensor<T>> {
        phi.clone()
            .reshape(&[self.measurements, 1, self.block_size, self.block_size])
    }

    /// Tape-free convenience for sampling with a concrete matrix.
    pub fn sample_tensor<T: Real>(&self, phi: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(phi, image, true)
    }

    pub fn adjoint_tensor<T: Real>(&self, phi: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(phi, y, false)
    }

    fn apply<T: Real>(
        &self,
        phi: &Tensor<T>,
        input: &Tensor<T>,
        forward: bool,
    ) -> Result<Tensor<T>> {
        let mut store = ParamStore::new();
        let op = SamplingOperator {
            phi: store.add("phi", phi.clone()),
            ..self.clone()
        };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = if forward {
            op.sample(&mut tape, &p, x)?
        } else {
            op.adjoint(&mut tape, &p, x)?
        };
        Ok(tape.value(out).clone())
    }
}
