//! Raw numeric kernels shared by forward and backward rules.

// index loops mirror the convolution formulas over several buffers at once
#![allow(clippy::needless_range_loop)]

use crate::real::Real;

/// `c (+)= op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `ta`/`tb` mean the operand is stored transposed relative to its logical
/// shape. Row-major throughout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: strides describe exactly the asserted slice extents.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Inner product with eight independent partial sums, so the additions
/// pipeline; the summation order is fixed.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cin_per_group(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }

    fn weight_index(&self, oc: usize, icg: usize, ki: usize, kj: usize) -> usize {
        ((oc * self.cin_per_group() + icg) * self.kh + ki) * self.kw + kj
    }
}

/// Output positions `[lo, hi)` whose tap at `offset = k - pad` lands inside
/// an input axis of length `in_len`.
fn tap_range(offset: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    let max = in_len as isize - 1 - offset;
    if max < 0 {
        return (0, 0);
    }
    let hi = (max / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// Visits every (input row, output row, column range) triple for one tap.
#[inline]
fn for_each_tap_row(
    g: &ConvGeom,
    ki: usize,
    kj: usize,
    mut f: impl FnMut(usize, usize, usize, usize, isize),
) {
    let off_y = ki as isize - g.pad as isize;
    let off_x = kj as isize - g.pad as isize;
    let (ylo, yhi) = tap_range(off_y, g.stride, g.h, g.ho);
    let (xlo, xhi) = tap_range(off_x, g.stride, g.w, g.wo);
    if xlo >= xhi {
        return;
    }
    for oy in ylo..yhi {
        let iy = (oy as isize * g.stride as isize + off_y) as usize;
        f(iy, oy, xlo, xhi, off_x);
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let mut out = vec![T::zero(); g.cout * plane_out];
    if g.is_pointwise() {
        gemm(
            g.cout, g.cin, plane_in, weight, false, input, false, &mut out, false,
        );
    } else {
        let (cin_g, cout_g) = (g.cin_per_group(), g.cout_per_group());
        for oc in 0..g.cout {
            let group = oc / cout_g;
            let dst = &mut out[oc * plane_out..(oc + 1) * plane_out];
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let src = &input[ic * plane_in..(ic + 1) * plane_in];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = weight[g.weight_index(oc, icg, ki, kj)];
                        for_each_tap_row(g, ki, kj, |iy, oy, xlo, xhi, off_x| {
                            let row_in = &src[iy * g.w..(iy + 1) * g.w];
                            let row_out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                let start = (xlo as isize + off_x) as usize;
                                let src_row = &row_in[start..start + (xhi - xlo)];
                                for (o, &x) in row_out[xlo..xhi].iter_mut().zip(src_row) {
                                    *o += wv * x;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                    row_out[ox] += wv * row_in[ix];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        for (oc, &b) in bias.iter().enumerate() {
            for v in &mut out[oc * plane_out..(oc + 1) * plane_out] {
                *v += b;
            }
        }
    }
    out
}

/// Accumulates convolution gradients. Any `None` target is skipped.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    if let Some(gb) = grad_bias {
        for (oc, b) in gb.iter_mut().enumerate() {
            *b += grad_out[oc * plane_out..(oc + 1) * plane_out]
                .iter()
                .copied()
                .sum();
        }
    }
    if g.is_pointwise() {
        if let Some(gw) = grad_weight {
            gemm(
                g.cout, plane_in, g.cin, grad_out, false, input, true, gw, true,
            );
        }
        if let Some(gi) = grad_input {
            gemm(
                g.cin, g.cout, plane_in, weight, true, grad_out, false, gi, true,
            );
        }
        return;
    }
    let (cin_g, cout_g) = (g.cin_per_group(), g.cout_per_group());
    if let Some(gw) = grad_weight {
        for oc in 0..g.cout {
            let group = oc / cout_g;
            let dy = &grad_out[oc * plane_out..(oc + 1) * plane_out];
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let src = &input[ic * plane_in..(ic + 1) * plane_in];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let mut acc = T::zero();
                        for_each_tap_row(g, ki, kj, |iy, oy, xlo, xhi, off_x| {
                            let row_in = &src[iy * g.w..(iy + 1) * g.w];
                            let row_dy = &dy[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                let start = (xlo as isize + off_x) as usize;
                                acc += dot(&row_dy[xlo..xhi], &row_in[start..start + (xhi - xlo)]);
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                    acc += row_dy[ox] * row_in[ix];
                                }
                            }
                        });
                        gw[g.weight_index(oc, icg, ki, kj)] += acc;
                    }
                }
            }
        }
    }
    if let Some(gi) = grad_input {
        for oc in 0..g.cout {
            let group = oc / cout_g;
            let dy = &grad_out[oc * plane_out..(oc + 1) * plane_out];
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let dst = &mut gi[ic * plane_in..(ic + 1) * plane_in];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = weight[g.weight_index(oc, icg, ki, kj)];
                        for_each_tap_row(g, ki, kj, |iy, oy, xlo, xhi, off_x| {
                            let row_in = &mut dst[iy * g.w..(iy + 1) * g.w];
                            let row_dy = &dy[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                let start = (xlo as isize + off_x) as usize;
                                let dst_row = &mut row_in[start..start + (xhi - xlo)];
                                for (d, &gy) in dst_row.iter_mut().zip(&row_dy[xlo..xhi]) {
                                    *d += wv * gy;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                    row_in[ix] += wv * row_dy[ox];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

/// Index of `[c, y, x]` in the space-to-depth output `[c*b*b, y/b, x/b]`.
#[inline]
pub(crate) fn space_to_depth_index(
    c: usize,
    y: usize,
    x: usize,
    block: usize,
    out_h: usize,
    out_w: usize,
) -> usize {
    let oc = c * block * block + (y % block) * block + (x % block);
    (oc * out_h + y / block) * out_w + x / block
}
