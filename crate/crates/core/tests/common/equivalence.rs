//! Worst-case differences between the tape implementation and the naive
//! one over a fixed set of small instances.

use super::naive::{self, Map, Sampling, Weights};
use octuf::init::{normal, rng_for};
use octuf::model::{cross_attention, oct_iteration, pgca_forward};
use octuf::{ModelConfig, OctufModel, Tape, Tensor};

/// Small model with every parameter (biases and affines included) drawn at
/// random, so no term hides behind a zero or unit initialisation.
fn model(channels: usize, seed: u64) -> OctufModel<f64> {
    let cfg = ModelConfig {
        block_size: 4,
        ratio: 0.5,
        channels,
        iterations: 2,
        ffb_expansion: 2,
        use_isca: true,
    };
    let mut m = OctufModel::new(cfg, seed).unwrap();
    let mut rng = rng_for(seed, 77);
    for t in m.params.tensors_mut() {
        *t = normal(t.shape(), 0.5, &mut rng);
    }
    m
}

fn field(shape: &[usize], seed: u64, stream: u64) -> Tensor<f64> {
    normal(shape, 1.0, &mut rng_for(seed, stream))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn flat(a: &[Vec<f64>]) -> Vec<f64> {
    a.iter().flatten().copied().collect()
}

fn sampling(m: &OctufModel<f64>) -> Sampling<'_> {
    Sampling {
        phi: m.phi().data(),
        m: m.sampler.measurements,
        b: m.sampler.block_size,
    }
}

/// Output and attention map, `(value, key, query)` feature maps with
/// `C - 1 <= 3` channels.
pub fn cross_attention_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, c, h, w) in [(1, 3, 8, 8), (2, 3, 5, 7), (3, 2, 8, 3), (10, 1, 6, 6)] {
        let m = model(c + 1, seed);
        let ca = &m.iterations[1].isca.as_ref().unwrap().ca;
        let (v, k, q) = (
            field(&[c, h, w], seed, 1),
            field(&[c, h, w], seed, 2),
            field(&[c, h, w], seed, 3),
        );
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, false);
        let (vv, kv, qv) = (
            tape.constant(v.clone()),
            tape.constant(k.clone()),
            tape.constant(q.clone()),
        );
        let got = cross_attention(&mut tape, &p, ca, vv, kv, qv).unwrap();
        let (out, attn) = naive::cross_attention(
            &Weights(&m.params),
            ca,
            &Map::from_tensor(&v),
            &Map::from_tensor(&k),
            &Map::from_tensor(&q),
        );
        worst = worst
            .max(max_diff(tape.value(got.out).data(), &out.v))
            .max(max_diff(tape.value(got.attention).data(), &flat(&attn)));
    }
    worst
}

pub fn pgca_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, c, h, w) in [(4, 4, 8, 8), (5, 3, 4, 8), (6, 2, 8, 4)] {
        let m = model(c, seed);
        let pg = &m.iterations[0].pgca;
        let b = m.sampler.block_size;
        let r = field(&[1, h, w], seed, 1);
        let y = field(&[m.sampler.measurements, h / b, w / b], seed, 2);
        let z = field(&[c - 1, h, w], seed, 3);
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, false);
        let (rv, yv, zv) = (
            tape.constant(r.clone()),
            tape.constant(y.clone()),
            tape.constant(z.clone()),
        );
        let got = pgca_forward(&mut tape, &p, pg, &m.sampler, rv, yv, zv).unwrap();
        let (out, attn) = naive::pgca(
            &Weights(&m.params),
            pg,
            &sampling(&m),
            &Map::from_tensor(&r),
            &Map::from_tensor(&y),
            &Map::from_tensor(&z),
        );
        worst = worst
            .max(max_diff(tape.value(got.out).data(), &out.v))
            .max(max_diff(tape.value(got.attention).data(), &flat(&attn)));
    }
    worst
}

/// Both the first iteration (no inertial block) and a later one.
pub fn iteration_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, c, h, w) in [(7, 4, 8, 8), (8, 3, 8, 4), (9, 2, 4, 4)] {
        let m = model(c, seed);
        let b = m.sampler.block_size;
        let x_prev = field(&[c, h, w], seed, 1);
        let z_old = field(&[c - 1, h, w], seed, 2);
        let y = field(&[m.sampler.measurements, h / b, w / b], seed, 3);
        for (k, older) in [(0, None), (1, Some(&z_old))] {
            let it = &m.iterations[k];
            let mut tape = Tape::new();
            let p = m.params.bind(&mut tape, false);
            let xv = tape.constant(x_prev.clone());
            let yv = tape.constant(y.clone());
            let ov = older.map(|z| tape.constant(z.clone()));
            let got = oct_iteration(&mut tape, &p, it, &m.sampler, xv, ov, yv).unwrap();
            let older_map = older.map(Map::from_tensor);
            let want = naive::iteration(
                &Weights(&m.params),
                it,
                &sampling(&m),
                &Map::from_tensor(&x_prev),
                older_map.as_ref(),
                &Map::from_tensor(&y),
            );
            worst = worst.max(max_diff(tape.value(got.features).data(), &want.v));
        }
    }
    worst
}
