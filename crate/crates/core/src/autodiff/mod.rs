//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node holding its output value and the inputs
//! needed by its backward rule. [`Tape::backward`] replays the nodes in
//! reverse order, which is a valid reverse topological order because inputs
//! always precede their consumers.

pub mod gradcheck;
pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{split_axis, Tensor};
use kernels::{conv2d_backward, conv2d_forward, gemm, space_to_depth_index, ConvGeom};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride, zero padding and channel grouping of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub const POINTWISE: Conv2dSpec = Conv2dSpec {
        stride: 1,
        padding: 0,
        groups: 1,
    };

    /// 3x3 "same" convolution.
    pub fn same3x3(groups: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 1,
            groups,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulScalar {
        x: Var,
        s: Var,
    },
    /// Keeps the derivative at each input, computed with the forward value.
    Gelu {
        x: Var,
        slope: Vec<T>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        dims: (usize, usize, usize),
    },
    Transpose2d(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    SpaceToDepth {
        x: Var,
        block: usize,
    },
    DepthToSpace {
        x: Var,
        block: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite output from {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Gradients are accumulated only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Multiply-accumulates executed by the convolutions and matrix
    /// products recorded so far, from the geometry of each operation.
    pub fn recorded_macs(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::Conv2d { geom: g, .. } => {
                    (g.cout * (g.cin / g.groups) * g.kh * g.kw * g.ho * g.wo) as u64
                }
                Op::Matmul {
                    dims: (m, k, n), ..
                } => (m * k * n) as u64,
                _ => 0,
            })
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Multiplies by a recorded single-element tensor (e.g. a learnable step size).
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(format!(
                "mul_scalar: factor has shape {:?}",
                self.shape(s)
            )));
        }
        let c = self.value(s).data()[0];
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x, s]);
        Ok(self.push(value, Op::MulScalar { x, s }, rg))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let rg = self.needs(&[x]);
        let input = self.value(x);
        let (value, slope) = if rg {
            let src = input.data();
            let mut value = vec![T::zero(); src.len()];
            let mut slope = vec![T::zero(); src.len()];
            for ((v, d), &x) in value.iter_mut().zip(slope.iter_mut()).zip(src) {
                let (cdf, pdf) = x.normal_cdf_pdf();
                *v = x * cdf;
                *d = cdf + x * pdf;
            }
            (
                Tensor::new(input.shape(), value).expect("one value per element"),
                slope,
            )
        } else {
            (input.map(gelu), Vec::new())
        };
        self.push(value, Op::Gelu { x, slope }, rg)
    }

    /// 2-D cross-correlation of a `[Cin, H, W]` input with a
    /// `[Cout, Cin/groups, kh, kw]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let geom = self.conv_geom(input, weight, bias, spec)?;
        let value = conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[geom.cout, geom.ho, geom.wo], value)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    fn conv_geom(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<ConvGeom> {
        let (is, ws) = (self.shape(input), self.shape(weight));
        if is.len() != 3 || ws.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects [C,H,W] input and 4-d kernel, got {is:?} and {ws:?}"
            )));
        }
        if spec.stride == 0 || spec.groups == 0 {
            return Err(Error::config(
                "conv2d",
                "stride and groups must be positive",
            ));
        }
        let (cin, h, w) = (is[0], is[1], is[2]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(Error::config(
                "conv2d.groups",
                format!("{} does not divide channels {cin} -> {cout}", spec.groups),
            ));
        }
        if cin_g * spec.groups != cin {
            return Err(Error::dim(format!(
                "conv2d kernel expects {} input channels, input has {cin}",
                cin_g * spec.groups
            )));
        }
        if h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim(format!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    self.shape(b)
                )));
            }
        }
        Ok(ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho: (h + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (w + 2 * spec.padding - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
            groups: spec.groups,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, true)
    }

    /// `a^T * b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, false)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(Error::dim(format!(
                "matmul inner dimensions {ka} and {kb} disagree"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            ka,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            &mut out,
            false,
        );
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            value,
            Op::Matmul {
                a,
                b,
                ta,
                tb,
                dims: (m, ka, n),
            },
            rg,
        ))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim(format!("transpose2d of {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Transpose2d(x), rg))
    }

    /// Softmax along `axis`, stabilised by subtracting each slice's maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Standardises every slice along `axis` (biased variance) and applies a
    /// learnable affine. `gamma`/`beta` hold either one entry per position
    /// of the axis or a single shared scalar.
    pub fn layer_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        let affine_len = self.value(gamma).len();
        if self.shape(gamma) != self.shape(beta) || (affine_len != n && affine_len != 1) {
            return Err(Error::dim(format!(
                "layer_norm affine shapes {:?}/{:?} do not match axis extent {n}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::config("layer_norm.eps", "must be positive"));
        }
        let eps = T::lit(eps);
        let nt = T::lit(n as f64);
        let src = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| src[at(j)]).sum::<T>() / nt;
                let var = (0..n)
                    .map(|j| {
                        let d = src[at(j)] - mean;
                        d * d
                    })
                    .sum::<T>()
                    / nt;
                let r = (var + eps).sqrt().recip();
                rstd[o * inner + i] = r;
                for j in 0..n {
                    let xh = (src[at(j)] - mean) * r;
                    let k = if affine_len == 1 { 0 } else { j };
                    xhat[at(j)] = xh;
                    out[at(j)] = gv[k] * xh + bv[k];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        let mut extent = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && axis < s.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat along {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = split_axis(&shape, axis)?;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.needs(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        if start >= end || end > n {
            return Err(Error::dim(format!(
                "slice {start}..{end} of axis {axis} with extent {n}"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    /// Channels `[start, end)` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, range: std::ops::Range<usize>) -> Result<Var> {
        self.slice(x, 0, range.start, range.end)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `[C, H, W]` to `[C*b*b, H/b, W/b]`; channel `c*b*b + i*b + j` holds
    /// pixel `(i, j)` of every `b x b` block.
    pub fn space_to_depth(&mut self, x: Var, block: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || block == 0 || !s[1].is_multiple_of(block) || !s[2].is_multiple_of(block)
        {
            return Err(Error::dim(format!(
                "space_to_depth: {s:?} not divisible into {block}x{block} blocks"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / block, w / block);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[space_to_depth_index(ch, y, xx, block, oh, ow)] =
                        src[(ch * h + y) * w + xx];
                }
            }
        }
        let value = Tensor::new(&[c * block * block, oh, ow], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::SpaceToDepth { x, block }, rg))
    }

    /// Inverse of [`Tape::space_to_depth`].
    pub fn depth_to_space(&mut self, x: Var, block: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let bb = block * block;
        if s.len() != 3 || block == 0 || !s[0].is_multiple_of(bb) {
            return Err(Error::dim(format!(
                "depth_to_space: {s:?} channels not divisible by {bb}"
            )));
        }
        let (c, oh, ow) = (s[0] / bb, s[1], s[2]);
        let (h, w) = (oh * block, ow * block);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * h + y) * w + xx] =
                        src[space_to_depth_index(ch, y, xx, block, oh, ow)];
                }
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::DepthToSpace { x, block }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        let rg = self.needs(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Propagates `d loss / d v` to every reachable leaf with
    /// `requires_grad`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[idx] {
                    Some(acc) => add_into(acc.data_mut(), &g),
                    slot @ None => *slot = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.propagate(idx, &g, &mut pending);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[idx].value.data();
        match &nodes[idx].op {
            Op::Leaf => unreachable!("leaves handled by backward"),
            Op::Add(a, b) => {
                if let Some(ga) = slot(pending, nodes, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(pending, nodes, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(pending, nodes, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(pending, nodes, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(ga) = slot(pending, nodes, *a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(&vb) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = slot(pending, nodes, *b) {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(&va) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot(pending, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c);
                }
            }
            Op::MulScalar { x, s } => {
                let c = val(*s)[0];
                if let Some(gs) = slot(pending, nodes, *s) {
                    let dot: T = g.iter().zip(val(*x)).map(|(&a, &b)| a * b).sum();
                    gs[0] += dot;
                }
                if let Some(gx) = slot(pending, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, &v)| *d += v * c);
                }
            }
            Op::Gelu { x, slope } => {
                if let Some(gx) = slot(pending, nodes, *x) {
                    for ((d, &s), &k) in gx.iter_mut().zip(g).zip(slope) {
                        *d += s * k;
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (vi, vw) = (val(*input), val(*weight));
                // Pending buffers are disjoint per node; take them out to
                // hold three mutable borrows at once.
                let mut gi = slot(pending, nodes, *input).map(std::mem::take);
                let mut gw = slot(pending, nodes, *weight).map(std::mem::take);
                let mut gb = bias.and_then(|b| slot(pending, nodes, b).map(std::mem::take));
                conv2d_backward(
                    geom,
                    vi,
                    vw,
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(buf) = gi {
                    pending[input.0] = Some(buf);
                }
                if let Some(buf) = gw {
                    pending[weight.0] = Some(buf);
                }
                if let (Some(buf), Some(b)) = (gb, bias) {
                    pending[b.0] = Some(buf);
                }
            }
            Op::Matmul {
                a,
                b,
                ta,
                tb,
                dims: (m, k, n),
            } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (*m, *k, *n);
                if let Some(ga) = slot(pending, nodes, *a) {
                    if *ta {
                        gemm(k, n, m, vb, *tb, g, true, ga, true);
                    } else {
                        gemm(m, n, k, g, false, vb, !*tb, ga, true);
                    }
                }
                if let Some(gb) = slot(pending, nodes, *b) {
                    if *tb {
                        gemm(n, m, k, g, true, va, *ta, gb, true);
                    } else {
                        gemm(k, m, n, va, !*ta, g, false, gb, true);
                    }
                }
            }
            Op::Transpose2d(x) => {
                let s = nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(gx) = slot(pending, nodes, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) =
                    split_axis(nodes[x.0].value.shape(), *axis).expect("validated");
                if let Some(gx) = slot(pending, nodes, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: T = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            } => {
                let (outer, n, inner) =
                    split_axis(nodes[x.0].value.shape(), *axis).expect("validated");
                let gv = val(*gamma).to_vec();
                let scalar_affine = gv.len() == 1;
                let k = |j: usize| if scalar_affine { 0 } else { j };
                if let Some(gg) = slot(pending, nodes, *gamma) {
                    for o in 0..outer {
                        for i in 0..inner {
                            for j in 0..n {
                                let at = (o * n + j) * inner + i;
                                gg[k(j)] += g[at] * xhat[at];
                            }
                        }
                    }
                }
                if let Some(gb) = slot(pending, nodes, *beta) {
                    for o in 0..outer {
                        for i in 0..inner {
                            for j in 0..n {
                                gb[k(j)] += g[(o * n + j) * inner + i];
                            }
                        }
                    }
                }
                if let Some(gx) = slot(pending, nodes, *x) {
                    let nt = T::lit(n as f64);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let r = rstd[o * inner + i];
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for j in 0..n {
                                let d = g[at(j)] * gv[k(j)];
                                mean_d += d;
                                mean_dx += d * xhat[at(j)];
                            }
                            mean_d = mean_d / nt;
                            mean_dx = mean_dx / nt;
                            for j in 0..n {
                                let d = g[at(j)] * gv[k(j)];
                                gx[at(j)] += r * (d - mean_d - xhat[at(j)] * mean_dx);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) =
                    split_axis(nodes[idx].value.shape(), *axis).expect("validated");
                let mut offset = 0;
                let total: usize = nodes[idx].value.shape()[*axis] * inner;
                for &v in inputs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    if let Some(gv) = slot(pending, nodes, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            add_into(&mut gv[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) =
                    split_axis(nodes[x.0].value.shape(), *axis).expect("validated");
                let len = nodes[idx].value.shape()[*axis];
                if let Some(gx) = slot(pending, nodes, *x) {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(pending, nodes, *x) {
                    add_into(gx, g);
                }
            }
            Op::SpaceToDepth { x, block } => {
                let s = nodes[x.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / block, w / block);
                if let Some(gx) = slot(pending, nodes, *x) {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * h + y) * w + xx] +=
                                    g[space_to_depth_index(ch, y, xx, *block, oh, ow)];
                            }
                        }
                    }
                }
            }
            Op::DepthToSpace { x, block } => {
                let s = nodes[idx].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / block, w / block);
                if let Some(gx) = slot(pending, nodes, *x) {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[space_to_depth_index(ch, y, xx, *block, oh, ow)] +=
                                    g[(ch * h + y) * w + xx];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(pending, nodes, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = T::lit(nodes[x.0].value.len() as f64);
                if let Some(gx) = slot(pending, nodes, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
    }
}

/// Gradient buffer of `v`, or None when `v` does not need one.
fn slot<'a, T: Real>(
    pending: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(pending[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn gelu<T: Real>(x: T) -> T {
    T::lit(0.5) * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[cfg(test)]
mod tests;
