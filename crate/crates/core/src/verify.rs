//! Finite-difference gradient suites over every primitive and the full
//! model, shared by the test suite and the `gradcheck` command.

use crate::autodiff::gradcheck::{check, check_with_reference, weighted_sum, CheckReport};
use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::Result;
use crate::init::{normal, rng};
use crate::model::{mse_loss, ModelConfig, OctufModel};
use crate::params::Bound;
use crate::real::Real;
use crate::tensor::Tensor;

fn randn<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    normal(shape, 1.0, &mut rng(seed))
}

/// Every differentiable primitive, once per seed.
pub fn primitive_checks<T: Real>(seeds: u64) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for seed in 0..seeds {
        let r = |shape: &[usize], k: u64| randn::<T>(shape, seed * 100 + k);
        let probe = r(&[64], 99).into_data();
        let w = |n: usize| Tensor::new(&[n], probe[..n].to_vec()).unwrap();
        reports.extend(
            [
                check(
                    "conv2d",
                    &[r(&[2, 4, 4], 1), r(&[3, 2, 2, 2], 2), r(&[3], 3)],
                    |tp, v| {
                        let y = tp.conv2d(
                            v[0],
                            v[1],
                            Some(v[2]),
                            Conv2dSpec {
                                stride: 1,
                                padding: 0,
                                groups: 1,
                            },
                        )?;
                        weighted_sum(tp, y, &w(27))
                    },
                ),
                check(
                    "conv2d_depthwise",
                    &[r(&[3, 4, 4], 1), r(&[3, 1, 3, 3], 2), r(&[3], 3)],
                    |tp, v| {
                        let y = tp.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same3x3(3))?;
                        weighted_sum(tp, y, &w(48))
                    },
                ),
                check(
                    "conv2d_strided",
                    &[r(&[1, 4, 4], 1), r(&[3, 1, 2, 2], 2)],
                    |tp, v| {
                        let y = tp.conv2d(
                            v[0],
                            v[1],
                            None,
                            Conv2dSpec {
                                stride: 2,
                                padding: 0,
                                groups: 1,
                            },
                        )?;
                        weighted_sum(tp, y, &w(12))
                    },
                ),
                check(
                    "conv2d_pointwise",
                    &[r(&[3, 3, 3], 1), r(&[2, 3, 1, 1], 2), r(&[2], 3)],
                    |tp, v| {
                        let y = tp.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::POINTWISE)?;
                        weighted_sum(tp, y, &w(18))
                    },
                ),
                check("matmul", &[r(&[5, 4], 1), r(&[4, 3], 2)], |tp, v| {
                    let y = tp.matmul(v[0], v[1])?;
                    weighted_sum(tp, y, &w(15))
                }),
                check("matmul_nt", &[r(&[3, 4], 1), r(&[2, 4], 2)], |tp, v| {
                    let y = tp.matmul_nt(v[0], v[1])?;
                    weighted_sum(tp, y, &w(6))
                }),
                check("matmul_tn", &[r(&[4, 3], 1), r(&[4, 2], 2)], |tp, v| {
                    let y = tp.matmul_tn(v[0], v[1])?;
                    weighted_sum(tp, y, &w(6))
                }),
                check("softmax", &[r(&[6], 1)], |tp, v| {
                    let y = tp.softmax(v[0], 0)?;
                    weighted_sum(tp, y, &w(6))
                }),
                check("softmax_axis0", &[r(&[3, 4], 1)], |tp, v| {
                    let y = tp.softmax(v[0], 0)?;
                    weighted_sum(tp, y, &w(12))
                }),
                check(
                    "layer_norm",
                    &[r(&[8, 1, 1], 1), r(&[8], 2), r(&[8], 3)],
                    |tp, v| {
                        let y = tp.layer_norm(v[0], 0, v[1], v[2], 1e-5)?;
                        weighted_sum(tp, y, &w(8))
                    },
                ),
                check(
                    "layer_norm_tokens",
                    &[r(&[4, 2, 3], 1), r(&[4], 2), r(&[4], 3)],
                    |tp, v| {
                        let y = tp.layer_norm(v[0], 0, v[1], v[2], 1e-5)?;
                        weighted_sum(tp, y, &w(24))
                    },
                ),
                check(
                    "layer_norm_scalar_affine",
                    &[r(&[1, 12], 1), r(&[1], 2), r(&[1], 3)],
                    |tp, v| {
                        let y = tp.layer_norm(v[0], 1, v[1], v[2], 1e-5)?;
                        weighted_sum(tp, y, &w(12))
                    },
                ),
                check("gelu", &[r(&[7], 1)], |tp, v| {
                    let y = tp.gelu(v[0]);
                    weighted_sum(tp, y, &w(7))
                }),
                check("add_sub_mul", &[r(&[6], 1), r(&[6], 2)], |tp, v| {
                    let a = tp.add(v[0], v[1])?;
                    let s = tp.sub(a, v[1])?;
                    let m = tp.mul(s, v[1])?;
                    weighted_sum(tp, m, &w(6))
                }),
                check("scale_mul_scalar", &[r(&[6], 1), r(&[1], 2)], |tp, v| {
                    let a = tp.scale(v[0], T::lit(-1.5));
                    let y = tp.mul_scalar(a, v[1])?;
                    weighted_sum(tp, y, &w(6))
                }),
                check(
                    "concat_slice",
                    &[r(&[2, 2, 2], 1), r(&[3, 2, 2], 2)],
                    |tp, v| {
                        let c = tp.concat(&[v[0], v[1]], 0)?;
                        let s = tp.slice_channels(c, 1..4)?;
                        weighted_sum(tp, s, &w(12))
                    },
                ),
                check("concat_axis1", &[r(&[2, 2], 1), r(&[2, 3], 2)], |tp, v| {
                    let c = tp.concat(&[v[0], v[1]], 1)?;
                    weighted_sum(tp, c, &w(10))
                }),
                check("reshape_transpose", &[r(&[2, 3, 2], 1)], |tp, v| {
                    let m = tp.reshape(v[0], &[3, 4])?;
                    let y = tp.transpose2d(m)?;
                    weighted_sum(tp, y, &w(12))
                }),
                check("space_depth", &[r(&[1, 4, 4], 1)], |tp, v| {
                    let d = tp.space_to_depth(v[0], 2)?;
                    let g = tp.gelu(d);
                    let back = tp.depth_to_space(g, 2)?;
                    weighted_sum(tp, back, &w(16))
                }),
                check("mean_reuse", &[r(&[5], 1)], |tp, v| {
                    let sq = tp.mul(v[0], v[0])?;
                    Ok(tp.mean(sq))
                }),
            ]
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(reports)
}

/// Configuration of the end-to-end check: small enough to difference every
/// parameter.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        block_size: 8,
        ratio: 0.25,
        channels: 4,
        iterations: 2,
        ffb_expansion: 4,
        use_isca: true,
    }
}

/// Gradient of the reconstruction loss with respect to every parameter
/// tensor, including the measurement matrix and the step sizes.
pub fn model_check<T: Real>(seed: u64) -> Result<CheckReport> {
    let model = OctufModel::<T>::new(tiny_model_config(), seed)?;
    let noise: Tensor<f64> = normal(&[256], 0.1, &mut rng(seed + 1000));
    let image = Tensor::from_fn(&[1, 16, 16], |i| {
        let (y, x) = ((i / 16) as f64, (i % 16) as f64);
        0.5 + 0.3 * (0.4 * x + 0.2 * y).sin() + noise.data()[i]
    });
    let wide = model.cast::<f64>();
    let mut rep = check_with_reference(
        "model",
        model.params.tensors(),
        |tp, v| model_loss(&model, &image.cast(), tp, v),
        |tp, v| model_loss(&wide, &image, tp, v),
    )?;
    rep.name = format!("model(seed {seed})");
    Ok(rep)
}

/// Reconstruction loss of `image` with every parameter supplied as `params`.
fn model_loss<T: Real>(
    model: &OctufModel<T>,
    image: &Tensor<T>,
    tape: &mut Tape<T>,
    params: &[Var],
) -> Result<Var> {
    let p = Bound::from_vars(params.to_vec());
    let x = tape.constant(image.clone());
    let y = model.sampler.sample(tape, &p, x)?;
    let out = model.forward(tape, &p, y)?;
    mse_loss(tape, out.x_hat, x)
}

/// Primitive and model checks over `seeds` seeds.
pub fn run_gradcheck_suite<T: Real>(seeds: u64) -> Result<Vec<CheckReport>> {
    let mut reports = primitive_checks::<T>(seeds)?;
    for seed in 0..seeds {
        reports.push(model_check::<T>(seed)?);
    }
    Ok(reports)
}
