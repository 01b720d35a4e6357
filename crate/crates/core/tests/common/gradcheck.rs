//! Finite-difference oracle for the network's analytic gradients.
//!
//! Every check differentiates a random linear functional `L = sum(r * out)`
//! of a layer's (or the whole network's) output, so that each analytic
//! gradient is compared against `(L(x + h e_i) - L(x - h e_i)) / 2h`.

use noma_beam::cnn::layers::{
    flatten, leaky_relu, leaky_relu_backward, tanh_backward, tanh_forward, BatchNorm2d, Conv2d, Dense, MeanPool,
    PoolDivisor,
};
use noma_beam::cnn::{ArchConfig, CnnModel, Encoding, FeatureMap};
use noma_beam::RngStream;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely; below it the
/// difference quotient's rounding error (about 1e-16 |L| / STEP)
/// dominates.
pub const ABS_FLOOR: f64 = 1e-3;
/// Coordinates probed per parameter or input tensor.
const PROBES: usize = 12;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn fmap(rng: &mut ChaCha8Rng, c: usize, b: usize, h: usize, w: usize) -> FeatureMap<f64> {
    let mut x = FeatureMap::zeros(c, b, h, w);
    x.data = normals(rng, x.data.len());
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error over a sample of coordinates of `x`.
fn probe(rng: &mut ChaCha8Rng, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let picks = sample(rng, x.len(), PROBES.min(x.len()));
    let mut worst = 0.0f64;
    let mut buf = x.to_vec();
    for i in picks {
        buf[i] = x[i] + STEP;
        let up = f(&buf);
        buf[i] = x[i] - STEP;
        let down = f(&buf);
        buf[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

/// Shape of the `seed`-th random case: `(c_in, c_out, batch, h, w)`. The
/// first two are the TCNN and FCNN inputs at N = 4, K = 3.
pub fn layer_shape(seed: u64) -> (usize, usize, usize, usize, usize) {
    let mut rng = RngStream::new(seed, 77).rng();
    let (h, w) = match seed {
        0 => (2, 12),
        1 => (8, 6),
        _ => (rng.random_range(1..=7), rng.random_range(1..=7)),
    };
    (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(2..=4), h, w)
}

/// Largest relative error over every layer's backward pass on one random shape.
pub fn check_layers(seed: u64) -> f64 {
    let (ci, co, b, h, w) = layer_shape(seed);
    let mut rng = RngStream::new(seed, 78).rng();
    let mut worst = 0.0f64;
    let x = fmap(&mut rng, ci, b, h, w);

    // Convolution: input, weight, bias.
    let conv = Conv2d::new(ci, co, normals(&mut rng, co * ci * 9), normals(&mut rng, co)).unwrap();
    let r = normals(&mut rng, co * b * h * w);
    let (_, cache) = conv.forward(&x).unwrap();
    let mut dy = FeatureMap::zeros(co, b, h, w);
    dy.data = r.clone();
    let (dx, dw, db) = conv.backward(&cache, &dy, true).unwrap();
    let eval_x = |v: &[f64]| {
        let mut xx = x.clone();
        xx.data = v.to_vec();
        dot(&r, &conv.forward(&xx).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &x.data, &dx.unwrap().data, eval_x));
    let eval_w = |v: &[f64]| {
        let c = Conv2d::new(ci, co, v.to_vec(), conv.bias.clone()).unwrap();
        dot(&r, &c.forward(&x).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &conv.weight, &dw, eval_w));
    let eval_b = |v: &[f64]| {
        let c = Conv2d::new(ci, co, conv.weight.clone(), v.to_vec()).unwrap();
        dot(&r, &c.forward(&x).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &conv.bias, &db, eval_b));

    // Batch normalization in training mode: input, scale, shift.
    let mut bn = BatchNorm2d::<f64>::new(ci, 1e-5, 0.1);
    bn.gamma = normals(&mut rng, ci);
    bn.beta = normals(&mut rng, ci);
    let r = normals(&mut rng, x.data.len());
    let (_, cache) = bn.clone().forward_train(&x).unwrap();
    let mut dy = x.clone();
    dy.data = r.clone();
    let (dx, dg, dbeta) = bn.backward(&cache, &dy).unwrap();
    let eval_x = |v: &[f64]| {
        let mut xx = x.clone();
        xx.data = v.to_vec();
        dot(&r, &bn.clone().forward_train(&xx).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &x.data, &dx.data, eval_x));
    let eval_g = |v: &[f64]| {
        let mut b2 = bn.clone();
        b2.gamma = v.to_vec();
        dot(&r, &b2.forward_train(&x).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &bn.gamma, &dg, eval_g));
    let eval_beta = |v: &[f64]| {
        let mut b2 = bn.clone();
        b2.beta = v.to_vec();
        dot(&r, &b2.forward_train(&x).unwrap().0.data)
    };
    worst = worst.max(probe(&mut rng, &bn.beta, &dbeta, eval_beta));

    // Leaky ReLU, away from the kink.
    let slope = 0.01;
    let xs: Vec<f64> = x.data.iter().map(|&v| if v.abs() < 1e-3 { v + 0.01 } else { v }).collect();
    let r = normals(&mut rng, xs.len());
    let mut y = xs.clone();
    leaky_relu(&mut y, slope);
    let mut g = r.clone();
    leaky_relu_backward(&y, &mut g, slope);
    let eval = |v: &[f64]| {
        let mut y = v.to_vec();
        leaky_relu(&mut y, slope);
        dot(&r, &y)
    };
    worst = worst.max(probe(&mut rng, &xs, &g, eval));

    // Tanh.
    let mut y = x.data.clone();
    tanh_forward(&mut y);
    let mut g = r.clone();
    tanh_backward(&y, &mut g);
    let eval = |v: &[f64]| {
        let mut y = v.to_vec();
        tanh_forward(&mut y);
        dot(&r, &y)
    };
    worst = worst.max(probe(&mut rng, &x.data, &g, eval));

    // Mean pooling, both divisors.
    for divisor in [PoolDivisor::Fixed, PoolDivisor::ValidCount] {
        let pool = MeanPool { divisor };
        let mut dy = x.clone();
        dy.data = r.clone();
        let g = pool.backward(&dy);
        let eval = |v: &[f64]| {
            let mut xx = x.clone();
            xx.data = v.to_vec();
            dot(&r, &pool.forward(&xx).data)
        };
        worst = worst.max(probe(&mut rng, &x.data, &g.data, eval));
    }

    // Dense: input, weight, bias.
    let f = ci * h * w;
    let out = rng.random_range(1..=6);
    let dense = Dense::new(f, out, normals(&mut rng, f * out), normals(&mut rng, out)).unwrap();
    let r = normals(&mut rng, b * out);
    let (_, cache) = dense.forward(&x).unwrap();
    let (dx, dw, db) = dense.backward(&cache, &r).unwrap();
    assert_eq!(flatten(&dx).len(), x.data.len());
    let eval_x = |v: &[f64]| {
        let mut xx = x.clone();
        xx.data = v.to_vec();
        dot(&r, &dense.forward(&xx).unwrap().0)
    };
    worst = worst.max(probe(&mut rng, &x.data, &dx.data, eval_x));
    let eval_w = |v: &[f64]| {
        let d = Dense::new(f, out, v.to_vec(), dense.bias.clone()).unwrap();
        dot(&r, &d.forward(&x).unwrap().0)
    };
    worst = worst.max(probe(&mut rng, &dense.weight, &dw, eval_w));
    let eval_b = |v: &[f64]| {
        let d = Dense::new(f, out, dense.weight.clone(), v.to_vec()).unwrap();
        dot(&r, &d.forward(&x).unwrap().0)
    };
    worst.max(probe(&mut rng, &dense.bias, &db, eval_b))
}

/// Largest relative error of the whole network's gradients (every
/// parameter group and the input) in training mode.
pub fn check_model(enc: Encoding, n: usize, k: usize, arch: ArchConfig, batch: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 79).rng();
    let mut model = CnnModel::<f64>::new(enc, n, k, 0.0, arch, seed).unwrap();
    // Move batch-norm affine terms off their identity initialization.
    for b in &mut model.blocks {
        b.bn.gamma = normals(&mut rng, arch.channels).iter().map(|v| 1.0 + 0.3 * v).collect();
        b.bn.beta = normals(&mut rng, arch.channels).iter().map(|v| 0.3 * v).collect();
    }
    // Keep the head away from tanh saturation.
    model.dense.weight.iter_mut().for_each(|w| *w *= 0.2);
    let (h, w) = enc.input_shape(n, k);
    let x = fmap(&mut rng, 1, batch, h, w);
    let r = normals(&mut rng, batch * 2 * n * k);
    let (_, tape) = model.clone().forward_train(&x).unwrap();
    let grads = model.backward(&tape, &r, true).unwrap();

    let loss = |m: &CnnModel<f64>, x: &FeatureMap<f64>| dot(&r, &m.clone().forward_train(x).unwrap().0);
    let mut worst = 0.0f64;
    let groups = model.param_sizes().len();
    for gi in 0..groups {
        let base = model.clone();
        let theta = {
            let mut m = model.clone();
            m.params_mut()[gi].to_vec()
        };
        let eval = |v: &[f64]| {
            let mut m = base.clone();
            m.params_mut()[gi].copy_from_slice(v);
            loss(&m, &x)
        };
        worst = worst.max(probe(&mut rng, &theta, &grads.groups[gi], eval));
    }
    let dx = grads.input.expect("input gradient requested");
    let eval = |v: &[f64]| {
        let mut xx = x.clone();
        xx.data = v.to_vec();
        loss(&model, &xx)
    };
    worst.max(probe(&mut rng, &x.data, &dx.data, eval))
}
