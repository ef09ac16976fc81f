//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes on a fresh tape, so
//! it shares no code with the backward rules it checks.

use super::{Tape, Var};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// Finite-difference step and accepted relative error for an element type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub max_rel_error: f64,
}

impl Tolerance {
    pub fn for_type<T: Real>() -> Self {
        if std::mem::size_of::<T>() >= 8 {
            Tolerance {
                step: 1e-5,
                max_rel_error: 1e-4,
            }
        } else {
            Tolerance {
                step: 1e-3,
                max_rel_error: 1e-2,
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    /// Worst relative error over the checked inputs.
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm. Two all-zero vectors
/// compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of a scalar function with respect to every element
/// of `inputs[wrt]`.
pub fn numeric_gradient<T: Real>(
    f: &mut dyn FnMut(&[Tensor<T>]) -> Result<T>,
    inputs: &[Tensor<T>],
    wrt: usize,
    step: f64,
) -> Result<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs[wrt].len());
    let h = T::lit(step);
    for i in 0..inputs[wrt].len() {
        let orig = work[wrt].data()[i];
        work[wrt].data_mut()[i] = orig + h;
        let plus = f(&work)?.as_f64();
        work[wrt].data_mut()[i] = orig - h;
        let minus = f(&work)?.as_f64();
        work[wrt].data_mut()[i] = orig;
        // divide by the step actually representable in T
        let span = ((orig + h) - (orig - h)).as_f64();
        out.push((plus - minus) / span);
    }
    Ok(out)
}

fn analytic_gradients<T: Real>(
    inputs: &[Tensor<T>],
    build: &impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match tape.grad(v) {
            Some(g) => g.data().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect())
}

fn worst_error<U: Real>(
    analytic: &[Vec<f64>],
    inputs: &[Tensor<U>],
    step: f64,
    build: &impl Fn(&mut Tape<U>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut eval = |xs: &[Tensor<U>]| -> Result<U> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut worst: f64 = 0.0;
    for (wrt, a) in analytic.iter().enumerate() {
        let n = numeric_gradient(&mut eval, inputs, wrt, step)?;
        worst = worst.max(relative_error(a, &n));
    }
    Ok(worst)
}

fn report(name: &str, rel_error: f64, tolerance: f64) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        rel_error,
        tolerance,
        passed: rel_error <= tolerance,
    }
}

/// Checks the gradient of `build` (which must return a scalar) with respect
/// to every input tensor, differencing in the same precision.
pub fn check<T: Real>(
    name: &str,
    inputs: &[Tensor<T>],
    build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<CheckReport> {
    let tol = Tolerance::for_type::<T>();
    let analytic = analytic_gradients(inputs, &build)?;
    let worst = worst_error(&analytic, inputs, tol.step, &build)?;
    Ok(report(name, worst, tol.max_rel_error))
}

/// Like [`check`], but the finite differences are taken on a 64-bit copy of
/// the same graph (`reference`) at the 64-bit step. The analytic side and the
/// tolerance stay those of `T`.
///
/// Deep graphs need this in 32-bit: their loss carries rounding noise far
/// above the 32-bit step's resolution, and layer norms over a handful of
/// channels bend on a scale comparable to that step.
pub fn check_with_reference<T: Real>(
    name: &str,
    inputs: &[Tensor<T>],
    build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    reference: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckReport> {
    let analytic = analytic_gradients(inputs, &build)?;
    let wide: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let step = Tolerance::for_type::<f64>().step;
    let worst = worst_error(&analytic, &wide, step, &reference)?;
    Ok(report(
        name,
        worst,
        Tolerance::for_type::<T>().max_rel_error,
    ))
}

/// `sum(out * weights)`, a generic scalar probe of a non-scalar output.
pub fn weighted_sum<T: Real>(tape: &mut Tape<T>, out: Var, weights: &Tensor<T>) -> Result<Var> {
    let w = tape.constant(weights.clone().reshape(tape.shape(out))?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}
