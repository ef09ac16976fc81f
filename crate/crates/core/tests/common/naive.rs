//! Straight-line reimplementations of the network blocks on plain `f64`
//! arrays. No tape, no shared kernels: every sum is an explicit loop over
//! the textbook definition.

#![allow(dead_code, clippy::needless_range_loop)]

use octuf::model::{CaWeights, Conv, FfbWeights, FfnWeights, Norm, NormKind, OctIterationWeights};
use octuf::{Real, Tensor};

/// A `[c, h, w]` feature map.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Map {
        Map {
            c,
            h,
            w,
            v: vec![0.0; c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Map {
        let s = t.shape();
        Map {
            c: s[0],
            h: s[1],
            w: s[2],
            v: t.data().to_vec(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.v[(c * self.h + y) * self.w + x] = value;
    }

    pub fn channels(&self, from: usize, to: usize) -> Map {
        let mut out = Map::zeros(to - from, self.h, self.w);
        for c in from..to {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.set(c - from, y, x, self.at(c, y, x));
                }
            }
        }
        out
    }

    pub fn stack(&self, other: &Map) -> Map {
        let mut v = self.v.clone();
        v.extend_from_slice(&other.v);
        Map {
            c: self.c + other.c,
            h: self.h,
            w: self.w,
            v,
        }
    }

    pub fn add(&self, other: &Map) -> Map {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w));
        let v = self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect();
        Map { v, ..*self }
    }
}

/// Read access to parameter values by handle.
pub struct Weights<'a>(pub &'a octuf::ParamStore<f64>);

impl Weights<'_> {
    fn get(&self, id: octuf::ParamId) -> &[f64] {
        self.0.get(id).data()
    }
}

/// Zero-padded ("same") convolution, stride 1, with bias.
pub fn conv(wt: &Weights, layer: &Conv, x: &Map) -> Map {
    let wshape = wt.0.get(layer.weight).shape().to_vec();
    let (cout, cin_g, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    let groups = layer.spec.groups;
    let cout_g = cout / groups;
    assert_eq!(cin_g * groups, x.c);
    let weight = wt.get(layer.weight);
    let bias = wt.get(layer.bias);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Map::zeros(cout, x.h, x.w);
    for o in 0..cout {
        let g = o / cout_g;
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = bias[o];
                for i in 0..cin_g {
                    let ci = g * cin_g + i;
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = y as isize + a as isize - ph as isize;
                            let ix = xx as isize + b as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            let wv = weight[((o * cin_g + i) * kh + a) * kw + b];
                            s += wv * x.at(ci, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, y, xx, s);
            }
        }
    }
    out
}

pub fn norm(wt: &Weights, layer: &Norm, x: &Map) -> Map {
    let gamma = wt.get(layer.gamma);
    let beta = wt.get(layer.beta);
    let eps = 1e-5;
    let mut out = Map::zeros(x.c, x.h, x.w);
    match layer.kind {
        NormKind::Channel => {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let vals: Vec<f64> = (0..x.c).map(|c| x.at(c, y, xx)).collect();
                    let mean = vals.iter().sum::<f64>() / x.c as f64;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.c as f64;
                    for c in 0..x.c {
                        let z = (vals[c] - mean) / (var + eps).sqrt();
                        out.set(c, y, xx, gamma[c] * z + beta[c]);
                    }
                }
            }
        }
        NormKind::Spatial => {
            assert_eq!(x.c, 1);
            let n = x.v.len() as f64;
            let mean = x.v.iter().sum::<f64>() / n;
            let var = x.v.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for (o, v) in out.v.iter_mut().zip(&x.v) {
                *o = gamma[0] * (v - mean) / (var + eps).sqrt() + beta[0];
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + Real::erf(x / 2f64.sqrt()))
}

/// Cross attention over channels. Returns the output and the attention
/// matrix `a[key][query]`.
pub fn cross_attention(
    wt: &Weights,
    ca: &CaWeights,
    v_in: &Map,
    k_in: &Map,
    q_in: &Map,
) -> (Map, Vec<Vec<f64>>) {
    let v = conv(wt, &ca.dconv_v, &conv(wt, &ca.conv_v, v_in));
    let k = conv(wt, &ca.dconv_k, &conv(wt, &ca.conv_k, k_in));
    let q = conv(wt, &ca.dconv_q, &conv(wt, &ca.conv_q, q_in));
    let c = v.c;
    let pixels = v.h * v.w;
    let mut a = vec![vec![0.0; c]; c];
    for j in 0..c {
        let scores: Vec<f64> = (0..c)
            .map(|i| {
                (0..pixels)
                    .map(|p| k.v[i * pixels + p] * q.v[j * pixels + p])
                    .sum()
            })
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for i in 0..c {
            a[i][j] = (scores[i] - top).exp() / total;
        }
    }
    // output channel j mixes value channels with weights from column j
    let mut mixed = Map::zeros(c, v.h, v.w);
    for j in 0..c {
        for p in 0..pixels {
            mixed.v[j * pixels + p] = (0..c).map(|i| a[i][j] * v.v[i * pixels + p]).sum();
        }
    }
    (conv(wt, &ca.conv_a, &mixed), a)
}

/// Block sampling of a single-channel image with an `m x b^2` matrix.
pub fn sample(phi: &[f64], m: usize, b: usize, img: &Map) -> Map {
    let (hb, wb) = (img.h / b, img.w / b);
    let mut y = Map::zeros(m, hb, wb);
    for r in 0..m {
        for bi in 0..hb {
            for bj in 0..wb {
                let mut s = 0.0;
                for u in 0..b {
                    for t in 0..b {
                        s += phi[r * b * b + u * b + t] * img.at(0, bi * b + u, bj * b + t);
                    }
                }
                y.set(r, bi, bj, s);
            }
        }
    }
    y
}

pub fn adjoint(phi: &[f64], b: usize, y: &Map) -> Map {
    let mut img = Map::zeros(1, y.h * b, y.w * b);
    for bi in 0..y.h {
        for bj in 0..y.w {
            for u in 0..b {
                for t in 0..b {
                    let s: f64 = (0..y.c)
                        .map(|r| phi[r * b * b + u * b + t] * y.at(r, bi, bj))
                        .sum();
                    img.set(0, bi * b + u, bj * b + t, s);
                }
            }
        }
    }
    img
}

pub struct Sampling<'a> {
    pub phi: &'a [f64],
    pub m: usize,
    pub b: usize,
}

pub fn pgca(
    wt: &Weights,
    w: &octuf::model::PgcaWeights,
    s: &Sampling,
    r: &Map,
    y: &Map,
    z_hat: &Map,
) -> (Map, Vec<Vec<f64>>) {
    let rho = wt.get(w.rho)[0];
    let measured = sample(s.phi, s.m, s.b, r);
    let residual = Map {
        v: measured.v.iter().zip(&y.v).map(|(a, b)| a - b).collect(),
        ..measured
    };
    let back = adjoint(s.phi, s.b, &residual);
    let r_hat = Map {
        v: r.v.iter().zip(&back.v).map(|(a, g)| a - rho * g).collect(),
        ..*r
    };
    let vk = norm(wt, &w.ln_vk, z_hat);
    let q = norm(wt, &w.ln_q, &r_hat);
    let (attended, a) = cross_attention(wt, &w.ca, &vk, &vk, &q);
    let o = attended.add(z_hat);
    (conv(wt, &w.conv_o, &o.stack(&r_hat)), a)
}

fn ffb(wt: &Weights, w: &FfbWeights, x: &Map) -> Map {
    let mut h = conv(wt, &w.expand, x);
    h.v.iter_mut().for_each(|v| *v = gelu(*v));
    let mut h = conv(wt, &w.depthwise, &h);
    h.v.iter_mut().for_each(|v| *v = gelu(*v));
    conv(wt, &w.project, &h)
}

pub fn ffn(wt: &Weights, w: &FfnWeights, s: &Map) -> Map {
    let h = ffb(wt, &w.ffb1, &norm(wt, &w.ln1, s));
    let h = ffb(wt, &w.ffb2, &norm(wt, &w.ln2, &h));
    s.add(&h)
}

/// One unfolded iteration. `z_prev2` is required exactly when the weights
/// carry an inertial block.
pub fn iteration(
    wt: &Weights,
    w: &OctIterationWeights,
    s: &Sampling,
    x_prev: &Map,
    z_prev2: Option<&Map>,
    y: &Map,
) -> Map {
    let r = x_prev.channels(0, 1);
    let z = x_prev.channels(1, x_prev.c);
    let z_hat = match (&w.isca, z_prev2) {
        (Some(isca), Some(older)) => {
            let vk = norm(wt, &isca.ln_vk, older);
            let q = norm(wt, &isca.ln_q, &z);
            cross_attention(wt, &isca.ca, &vk, &vk, &q).0.add(&z)
        }
        (None, None) => z,
        _ => panic!("inertial block and older features must come together"),
    };
    let (mixed, _) = pgca(wt, &w.pgca, s, &r, y, &z_hat);
    ffn(wt, &w.ffn, &mixed)
}
