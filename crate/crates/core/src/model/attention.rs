//! Channel-wise cross attention and the two attention blocks built on it.
//!
//! Feature maps are `[C, H, W]`, so reshaping one to `[C, HW]` already gives
//! the transposed token matrix. The `(C-1) x (C-1)` map is therefore
//! `softmax(K Q^T)` over the key axis, and the aggregation `V_tokens * A` is
//! computed as `A^T V` in channel-major layout.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::real::Real;
use crate::sampling::SamplingOperator;
use crate::tensor::Tensor;

use super::layers::{Conv, Norm};

#[derive(Clone, Debug, PartialEq)]
pub struct CaWeights {
    pub conv_v: Conv,
    pub conv_k: Conv,
    pub conv_q: Conv,
    pub dconv_v: Conv,
    pub dconv_k: Conv,
    pub dconv_q: Conv,
    pub conv_a: Conv,
    /// Channel count expected on the query input.
    pub query_channels: usize,
}

impl CaWeights {
    /// Attention over `channels` features; the query input has
    /// `query_channels` channels and is lifted to `channels`.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        query_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = channels;
        CaWeights {
            conv_v: Conv::pointwise(store, &format!("{name}.conv_v"), c, c, rng),
            conv_k: Conv::pointwise(store, &format!("{name}.conv_k"), c, c, rng),
            conv_q: Conv::pointwise(store, &format!("{name}.conv_q"), query_channels, c, rng),
            dconv_v: Conv::depthwise3x3(store, &format!("{name}.dconv_v"), c, rng),
            dconv_k: Conv::depthwise3x3(store, &format!("{name}.dconv_k"), c, rng),
            dconv_q: Conv::depthwise3x3(store, &format!("{name}.dconv_q"), c, rng),
            conv_a: Conv::pointwise(store, &format!("{name}.conv_a"), c, c, rng),
            query_channels,
        }
    }
}

/// Output of [`cross_attention`] together with its attention map.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub out: Var,
    /// `(C-1) x (C-1)`, rows index key channels, columns sum to one.
    pub attention: Var,
}

pub fn cross_attention<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    w: &CaWeights,
    v_in: Var,
    k_in: Var,
    q_in: Var,
) -> Result<Attended> {
    let shape = tape.shape(v_in).to_vec();
    if shape.len() != 3 || tape.shape(k_in) != shape.as_slice() {
        return Err(Error::dim(format!(
            "cross attention: value {:?} and key {:?} must match",
            shape,
            tape.shape(k_in)
        )));
    }
    let qs = tape.shape(q_in).to_vec();
    if qs.len() != 3 || qs[0] != w.query_channels || qs[1..] != shape[1..] {
        return Err(Error::dim(format!(
            "cross attention: query {qs:?}, expected [{}, {}, {}]",
            w.query_channels, shape[1], shape[2]
        )));
    }
    let (c, hw) = (shape[0], shape[1] * shape[2]);
    let mut embed = |x: Var, conv: &Conv, dconv: &Conv| -> Result<Var> {
        let y = conv.forward(tape, p, x)?;
        let y = dconv.forward(tape, p, y)?;
        tape.reshape(y, &[c, hw])
    };
    let v = embed(v_in, &w.conv_v, &w.dconv_v)?;
    let k = embed(k_in, &w.conv_k, &w.dconv_k)?;
    let q = embed(q_in, &w.conv_q, &w.dconv_q)?;
    let scores = tape.matmul_nt(k, q)?;
    let attention = tape.softmax(scores, 0)?;
    let mixed = tape.matmul_tn(attention, v)?;
    let mixed = tape.reshape(mixed, &shape)?;
    let out = w.conv_a.forward(tape, p, mixed)?;
    Ok(Attended { out, attention })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IscaWeights {
    /// Shared by value and key, both computed from the older features.
    pub ln_vk: Norm,
    pub ln_q: Norm,
    pub ca: CaWeights,
}

impl IscaWeights {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        IscaWeights {
            ln_vk: Norm::channel(store, &format!("{name}.ln_vk"), channels),
            ln_q: Norm::channel(store, &format!("{name}.ln_q"), channels),
            ca: CaWeights::init(store, &format!("{name}.ca"), channels, channels, rng),
        }
    }
}

/// Inertial features: attention of the previous features (query) over the
/// ones from two iterations back (key and value), plus a residual.
pub fn isca_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    w: &IscaWeights,
    z_prev: Var,
    z_prev2: Var,
) -> Result<Attended> {
    if tape.shape(z_prev) != tape.shape(z_prev2) {
        return Err(Error::dim(format!(
            "isca: feature shapes {:?} and {:?} differ",
            tape.shape(z_prev),
            tape.shape(z_prev2)
        )));
    }
    let vk = w.ln_vk.forward(tape, p, z_prev2)?;
    let q = w.ln_q.forward(tape, p, z_prev)?;
    let a = cross_attention(tape, p, &w.ca, vk, vk, q)?;
    let out = tape.add(a.out, z_prev)?;
    Ok(Attended { out, ..a })
}

/// Gradient step on the data term: `r - rho * Phi^T (Phi r - y)`.
pub fn gdb<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    rho: Var,
    sampler: &SamplingOperator,
    r: Var,
    y: Var,
) -> Result<Var> {
    let measured = sampler.sample(tape, p, r)?;
    if tape.shape(measured) != tape.shape(y) {
        return Err(Error::dim(format!(
            "gdb: measurements {:?} do not match {:?}",
            tape.shape(y),
            tape.shape(measured)
        )));
    }
    let residual = tape.sub(measured, y)?;
    let back = sampler.adjoint(tape, p, residual)?;
    let step = tape.mul_scalar(back, rho)?;
    tape.sub(r, step)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgcaWeights {
    pub rho: ParamId,
    pub ln_vk: Norm,
    /// Spatial statistics: the query is a single channel.
    pub ln_q: Norm,
    pub ca: CaWeights,
    pub conv_o: Conv,
}

pub const RHO_INIT: f64 = 0.5;

impl PgcaWeights {
    /// `channels` is the full width `C`; attention runs over `C - 1`.
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c1 = channels - 1;
        PgcaWeights {
            rho: store.add(format!("{name}.rho"), Tensor::scalar(T::lit(RHO_INIT))),
            ln_vk: Norm::channel(store, &format!("{name}.ln_vk"), c1),
            ln_q: Norm::spatial(store, &format!("{name}.ln_q")),
            ca: CaWeights::init(store, &format!("{name}.ca"), c1, 1, rng),
            conv_o: Conv::pointwise(store, &format!("{name}.conv_o"), channels, channels, rng),
        }
    }
}

/// Fuses the gradient-step channel with the inertial features. Returns the
/// `C`-channel mix with the gradient step concatenated last before mixing.
pub fn pgca_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    w: &PgcaWeights,
    sampler: &SamplingOperator,
    r: Var,
    y: Var,
    z_hat: Var,
) -> Result<Attended> {
    let r_hat = gdb(tape, p, p.get(w.rho), sampler, r, y)?;
    if tape.shape(r_hat)[1..] != tape.shape(z_hat)[1..] {
        return Err(Error::dim(format!(
            "pgca: gradient channel {:?} and features {:?} differ spatially",
            tape.shape(r_hat),
            tape.shape(z_hat)
        )));
    }
    let vk = w.ln_vk.forward(tape, p, z_hat)?;
    let q = w.ln_q.forward(tape, p, r_hat)?;
    let a = cross_attention(tape, p, &w.ca, vk, vk, q)?;
    let o = tape.add(a.out, z_hat)?;
    let joined = tape.concat(&[o, r_hat], 0)?;
    let out = w.conv_o.forward(tape, p, joined)?;
    Ok(Attended { out, ..a })
}
