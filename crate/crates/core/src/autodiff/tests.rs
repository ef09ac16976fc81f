use super::gradcheck::weighted_sum;
use super::*;
use crate::init::{normal, rng};

fn t<T: Real>(shape: &[usize], data: &[f64]) -> Tensor<T> {
    Tensor::new(shape, data.iter().map(|&v| T::lit(v)).collect()).unwrap()
}

fn randn<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    normal(shape, 1.0, &mut rng(seed))
}

/// Naive quadruple loop, written independently of the tap kernels.
fn naive_conv(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, cg, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let per_group_out = cout / groups;
    let mut out = Tensor::zeros(&[cout, ho, wo]);
    for oc in 0..cout {
        let g = oc / per_group_out;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for icg in 0..cg {
                    let ic = g * cg + icg;
                    assert!(ic < cin);
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let x = input.data()[(ic * h + iy as usize) * w + ix as usize];
                            let k = weight.data()[((oc * cg + icg) * kh + ki) * kw + kj];
                            acc += x * k;
                        }
                    }
                }
                out.data_mut()[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_pointwise_channel_sum() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t(&[2, 1, 1], &[1.0, 2.0]));
    let w = tape.constant(t(&[1, 2, 1, 1], &[1.0, 1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv2d(x, w, Some(b), Conv2dSpec::POINTWISE).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0]);
}

#[test]
fn depthwise_identity_kernel() {
    let mut tape = Tape::<f32>::new();
    let input = randn::<f32>(&[3, 5, 6], 1);
    let mut k = vec![0.0; 27];
    for c in 0..3 {
        k[c * 9 + 4] = 1.0;
    }
    let x = tape.constant(input.clone());
    let w = tape.constant(t(&[3, 1, 3, 3], &k));
    let y = tape.conv2d(x, w, None, Conv2dSpec::same3x3(3)).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv_matches_naive_loops() {
    let cases = [
        // (cin, cout, h, w, k, stride, pad, groups)
        (3, 3, 8, 8, 3, 1, 1, 3),
        (4, 4, 7, 5, 3, 1, 1, 4),
        (2, 3, 6, 8, 3, 1, 1, 1),
        (1, 4, 8, 8, 4, 4, 0, 1),
        (4, 6, 8, 8, 2, 2, 1, 2),
        (3, 5, 4, 4, 1, 1, 0, 1),
    ];
    for (seed, &(cin, cout, h, w, k, stride, pad, groups)) in cases.iter().enumerate() {
        let input = randn::<f64>(&[cin, h, w], seed as u64);
        let weight = randn::<f64>(&[cout, cin / groups, k, k], 100 + seed as u64);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let wv = tape.constant(weight.clone());
        let spec = Conv2dSpec {
            stride,
            padding: pad,
            groups,
        };
        let y = tape.conv2d(x, wv, None, spec).unwrap();
        let expect = naive_conv(&input, &weight, stride, pad, groups);
        assert_eq!(tape.shape(y), expect.shape());
        for (a, b) in tape.value(y).data().iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-6, "case {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn conv_rejects_bad_grouping_and_shapes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[3, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
    let err = tape.conv2d(x, w, None, Conv2dSpec::same3x3(2)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let w2 = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
    let err = tape
        .conv2d(x, w2, None, Conv2dSpec::same3x3(1))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let y = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);

    let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let bt = randn::<f64>(&[3, 4], 3);
    let b = tape.constant(bt.clone());
    let y = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(y), &bt);

    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
    let x = tape.constant(t(&[2], &[1000.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 1.0).abs() < 1e-7 && v[1] >= 0.0 && v[1] < 1e-30);
    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_columns_sum_to_one() {
    for seed in 0..10 {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(normal(&[7, 5], 10.0, &mut rng(seed)));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y).data();
        for col in 0..5 {
            let s: f32 = (0..7).map(|r| v[r * 5 + col]).sum();
            assert!((s - 1.0).abs() <= 1e-5);
            assert!((0..7).all(|r| v[r * 5 + col] > 0.0));
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3, 1, 1], &[1.0, 2.0, 3.0]));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.layer_norm(x, 0, g, b, 1e-5).unwrap();
    let expect = [-1.2247, 0.0, 1.2247];
    for (a, e) in tape.value(y).data().iter().zip(expect) {
        assert!((a - e).abs() < 1e-4, "{a} vs {e}");
    }

    let x = tape.constant(randn(&[4, 3, 3], 9));
    let g = tape.constant(Tensor::zeros(&[4]));
    let b = tape.constant(Tensor::full(&[4], 0.7));
    let y = tape.layer_norm(x, 0, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn layer_norm_single_element_axis_is_finite() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t(&[1, 2, 2], &[5.0, -1.0, 2.0, 0.0]));
    let g = tape.constant(Tensor::full(&[1], 2.0));
    let b = tape.constant(Tensor::full(&[1], 0.25));
    let y = tape.layer_norm(x, 0, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
}

#[test]
fn backward_linear_and_quadratic() {
    let mut tape = Tape::<f64>::new();
    let xt = randn::<f64>(&[2, 3, 4], 4);
    let x = tape.param(xt.clone());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::<f64>::new();
    let x = tape.param(xt.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let loss = tape.scale(s, 0.5);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &xt);
}

#[test]
fn backward_accumulates_and_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full(&[3], 2.0));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn reused_tensor_sums_path_gradients() {
    // f(x) = sum(w1*x) + sum(w2*gelu(x)); oracle: w1 + w2*gelu'(x)
    let xt = randn::<f64>(&[5], 11);
    let w1 = randn::<f64>(&[5], 12);
    let w2 = randn::<f64>(&[5], 13);
    let mut tape = Tape::new();
    let x = tape.param(xt.clone());
    let a = weighted_sum(&mut tape, x, &w1).unwrap();
    let gx = tape.gelu(x);
    let b = weighted_sum(&mut tape, gx, &w2).unwrap();
    let loss = tape.add(a, b).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(x).unwrap();
    for i in 0..5 {
        let xv = xt.data()[i];
        let phi = 0.5 * (1.0 + libm::erf(xv / 2f64.sqrt()));
        let pdf = (-xv * xv / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expect = w1.data()[i] + w2.data()[i] * (phi + xv * pdf);
        assert!((g.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn cleared_tape_is_empty() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::zeros(&[4]));
    let _ = tape.sum(x);
    assert_eq!(tape.len(), 2);
    tape.clear();
    assert!(tape.is_empty());
}

#[test]
fn space_to_depth_round_trip() {
    let xt = randn::<f32>(&[2, 4, 6], 5);
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let d = tape.space_to_depth(x, 2).unwrap();
    assert_eq!(tape.shape(d), &[8, 2, 3]);
    // channel 1 of block grid holds pixel (0, 1) of every block
    assert_eq!(tape.value(d).data()[6], xt.data()[1]);
    let back = tape.depth_to_space(d, 2).unwrap();
    assert_eq!(tape.value(back), &xt);
    assert!(tape.space_to_depth(x, 4).is_err());
}

#[test]
fn concat_and_slice_are_inverse() {
    let xt = randn::<f32>(&[5, 3, 2], 6);
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let head = tape.slice_channels(x, 0..1).unwrap();
    let tail = tape.slice_channels(x, 1..5).unwrap();
    let joined = tape.concat(&[head, tail], 0).unwrap();
    assert_eq!(tape.value(joined), &xt);
    assert!(tape.slice_channels(x, 3..7).is_err());
}

#[test]
fn primitives_pass_gradcheck_f32() {
    assert_all_pass(&crate::verify::primitive_checks::<f32>(10).unwrap());
}

#[test]
fn primitives_pass_gradcheck_f64() {
    assert_all_pass(&crate::verify::primitive_checks::<f64>(10).unwrap());
}

fn assert_all_pass(reports: &[gradcheck::CheckReport]) {
    for rep in reports {
        assert!(
            rep.passed,
            "{}: rel error {:.3e} > {:.0e}",
            rep.name, rep.rel_error, rep.tolerance
        );
    }
}
