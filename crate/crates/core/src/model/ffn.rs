//! Feed-forward denoiser: two LayerNorm + FFB stages under one skip.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::real::Real;

use super::layers::{Conv, Norm};

/// Expand (1x1), GELU, depthwise 3x3, GELU, project (1x1).
#[derive(Clone, Debug, PartialEq)]
pub struct FfbWeights {
    pub expand: Conv,
    pub depthwise: Conv,
    pub project: Conv,
}

impl FfbWeights {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden = channels * expansion;
        FfbWeights {
            expand: Conv::pointwise(store, &format!("{name}.expand"), channels, hidden, rng),
            depthwise: Conv::depthwise3x3(store, &format!("{name}.depthwise"), hidden, rng),
            project: Conv::pointwise(store, &format!("{name}.project"), hidden, channels, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.expand.forward(tape, p, x)?;
        let h = tape.gelu(h);
        let h = self.depthwise.forward(tape, p, h)?;
        let h = tape.gelu(h);
        self.project.forward(tape, p, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnWeights {
    pub ln1: Norm,
    pub ffb1: FfbWeights,
    pub ln2: Norm,
    pub ffb2: FfbWeights,
}

impl FfnWeights {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: usize,
        rng: &mut impl Rng,
    ) -> Self {
        FfnWeights {
            ln1: Norm::channel(store, &format!("{name}.ln1"), channels),
            ffb1: FfbWeights::init(store, &format!("{name}.ffb1"), channels, expansion, rng),
            ln2: Norm::channel(store, &format!("{name}.ln2"), channels),
            ffb2: FfbWeights::init(store, &format!("{name}.ffb2"), channels, expansion, rng),
        }
    }
}

/// `s + ffb2(ln2(ffb1(ln1(s))))`.
pub fn ffn_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, w: &FfnWeights, s: Var) -> Result<Var> {
    let channels = tape.value(p.get(w.ln1.gamma)).len();
    if tape.shape(s).len() != 3 || tape.shape(s)[0] != channels {
        return Err(Error::dim(format!(
            "ffn: input {:?} does not have {channels} channels",
            tape.shape(s)
        )));
    }
    let h = w.ln1.forward(tape, p, s)?;
    let h = w.ffb1.forward(tape, p, h)?;
    let h = w.ln2.forward(tape, p, h)?;
    let h = w.ffb2.forward(tape, p, h)?;
    tape.add(s, h)
}
