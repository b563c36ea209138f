//! Central-difference gradient checks in f64. Each check contracts the layer
//! output with a fixed random tensor `r`, so the scalar is `sum(r * y)` and
//! the upstream gradient is `r`.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvep_core::nnet::*;

const H: f64 = 1e-6;

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn contract(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest entrywise relative error, with magnitudes below `1e-7` treated
/// as `1e-7` so exact zeros compare absolutely.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

/// Numerical gradient of `f` with respect to every entry of `v`.
fn numeric(v: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let keep = v[i];
            v[i] = keep + H;
            let up = f(v);
            v[i] = keep - H;
            let down = f(v);
            v[i] = keep;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn with_data(shape: [usize; 4], v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, v.to_vec()).unwrap()
}

pub fn temporal_conv() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor([2, 1, 3, 12], &mut rng);
    let w = rand_tensor([3, 1, 1, 6], &mut rng);
    let r = rand_tensor([2, 3, 3, 12], &mut rng);
    let (dx, dw) = conv2d_temporal_same_backward(&x, &w, &r).unwrap();
    let mut xv = x.data().to_vec();
    let nx = numeric(&mut xv, |v| contract(&conv2d_temporal_same(&with_data(x.shape(), v), &w).unwrap(), &r));
    let mut wv = w.data().to_vec();
    let nw = numeric(&mut wv, |v| contract(&conv2d_temporal_same(&x, &with_data(w.shape(), v)).unwrap(), &r));
    rel_err(dx.data(), &nx).max(rel_err(dw.data(), &nw))
}

pub fn depthwise(depth: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor([2, 2, 3, 5], &mut rng);
    let w = rand_tensor([2 * depth, 1, 3, 1], &mut rng);
    let r = rand_tensor([2, 2 * depth, 1, 5], &mut rng);
    let (dx, dw) = depthwise_conv_spatial_backward(&x, &w, &r).unwrap();
    let mut xv = x.data().to_vec();
    let nx = numeric(&mut xv, |v| contract(&depthwise_conv_spatial(&with_data(x.shape(), v), &w).unwrap(), &r));
    let mut wv = w.data().to_vec();
    let nw = numeric(&mut wv, |v| contract(&depthwise_conv_spatial(&x, &with_data(w.shape(), v)).unwrap(), &r));
    rel_err(dx.data(), &nx).max(rel_err(dw.data(), &nw))
}

pub fn separable() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor([2, 3, 1, 9], &mut rng);
    let wd = rand_tensor([3, 1, 1, 4], &mut rng);
    let wp = rand_tensor([2, 3, 1, 1], &mut rng);
    let r = rand_tensor([2, 2, 1, 9], &mut rng);
    let (dx, dwd, dwp) = separable_conv_backward(&x, &wd, &wp, &r).unwrap();
    let f = |x: &Tensor4<f64>, wd: &Tensor4<f64>, wp: &Tensor4<f64>| contract(&separable_conv(x, wd, wp).unwrap(), &r);
    let mut v = x.data().to_vec();
    let nx = numeric(&mut v, |v| f(&with_data(x.shape(), v), &wd, &wp));
    let mut v = wd.data().to_vec();
    let nd = numeric(&mut v, |v| f(&x, &with_data(wd.shape(), v), &wp));
    let mut v = wp.data().to_vec();
    let np = numeric(&mut v, |v| f(&x, &wd, &with_data(wp.shape(), v)));
    rel_err(dx.data(), &nx).max(rel_err(dwd.data(), &nd)).max(rel_err(dwp.data(), &np))
}

pub fn batchnorm_train() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor([3, 2, 2, 4], &mut rng);
    let mut bn = BatchNorm::<f64>::new(2);
    bn.gamma = vec![1.3, -0.7];
    bn.beta = vec![0.2, 0.5];
    let r = rand_tensor([3, 2, 2, 4], &mut rng);
    let eps = 1e-5;
    let (_, cache) = batchnorm(&x, &bn, Mode::Train, eps).unwrap();
    let (dx, dg, db) = batchnorm_backward(&r, cache.as_ref().unwrap(), &bn.gamma).unwrap();
    let run = |x: &Tensor4<f64>, bn: &BatchNorm<f64>| contract(&batchnorm(x, bn, Mode::Train, eps).unwrap().0, &r);
    let mut v = x.data().to_vec();
    let nx = numeric(&mut v, |v| run(&with_data(x.shape(), v), &bn));
    let mut g = bn.gamma.clone();
    let ng = numeric(&mut g, |g| run(&x, &BatchNorm { gamma: g.to_vec(), ..bn.clone() }));
    let mut b = bn.beta.clone();
    let nb = numeric(&mut b, |b| run(&x, &BatchNorm { beta: b.to_vec(), ..bn.clone() }));
    rel_err(dx.data(), &nx).max(rel_err(&dg, &ng)).max(rel_err(&db, &nb))
}

pub fn elu_layer() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // keep clear of the kink at zero
    let x = Tensor4::from_fn([2, 2, 1, 6], |_| {
        let v: f64 = rng.random_range(0.1..1.5);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    });
    let r = rand_tensor([2, 2, 1, 6], &mut rng);
    let dx = elu_backward(&x, &r);
    let mut v = x.data().to_vec();
    let nx = numeric(&mut v, |v| contract(&elu(&with_data(x.shape(), v)), &r));
    rel_err(dx.data(), &nx)
}

pub fn avgpool() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor([2, 3, 1, 8], &mut rng);
    let r = rand_tensor([2, 3, 1, 2], &mut rng);
    let dx = avgpool_time_backward(&r, 4);
    let mut v = x.data().to_vec();
    let nx = numeric(&mut v, |v| contract(&avgpool_time(&with_data(x.shape(), v), 4).unwrap(), &r));
    rel_err(dx.data(), &nx)
}

pub fn dropout_train() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor([2, 2, 1, 10], &mut rng);
    let r = rand_tensor([2, 2, 1, 10], &mut rng);
    let (_, mask) = dropout(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(70)).unwrap();
    let dx = dropout_backward(&r, mask.as_deref());
    let mut v = x.data().to_vec();
    let nx = numeric(&mut v, |v| {
        let y = dropout(&with_data(x.shape(), v), 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(70)).unwrap().0;
        contract(&y, &r)
    });
    rel_err(dx.data(), &nx)
}

/// Dense layer, softmax and cross-entropy together.
pub fn dense_softmax_ce() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (rows, d, k) = (3, 5, 4);
    let x: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut t = vec![0.0; rows * k];
    for i in 0..rows {
        t[i * k + (i % k)] = 1.0;
    }
    let loss = |x: &[f64], w: &[f64]| {
        let (_, p) = dense_softmax(x, w, rows, k).unwrap();
        cross_entropy(&p, &t, k)
    };
    let (_, p) = dense_softmax(&x, &w, rows, k).unwrap();
    let dl = cross_entropy_grad(&p, &t, rows);
    let (dx, dw) = dense_softmax_backward(&x, &w, &dl, rows, k);
    let mut xv = x.clone();
    let nx = numeric(&mut xv, |v| loss(v, &w));
    let mut wv = w.clone();
    let nw = numeric(&mut wv, |v| loss(&x, v));
    rel_err(&dx, &nx).max(rel_err(&dw, &nw))
}

/// The batch-norm epsilon is 0.1: the second batch norm cancels any per-filter
/// scale coming out of the first, so with a tiny epsilon the gradient of the
/// first block's gamma is nearly zero and its relative error is all
/// finite-difference noise.
pub fn tiny_config(depth: usize, dropout_rate: f64) -> ModelConfig {
    ModelConfig {
        channels: 3,
        samples: 32,
        classes: 3,
        f1: 2,
        f2: 3,
        depth,
        temporal_kernel_len: 8,
        separable_kernel_len: 4,
        pool1: 4,
        pool2: 8,
        dropout_rate,
        bn_epsilon: 0.1,
        bn_momentum: 0.9,
    }
}

/// Whole network in train mode (batch statistics, fixed dropout masks),
/// every trainable tensor. Returns the worst error per tensor.
pub fn end_to_end(depth: usize, dropout_rate: f64) -> Vec<(&'static str, f64)> {
    let cfg = tiny_config(depth, dropout_rate);
    let mut model = CompactCnn::<f64>::new(cfg.clone(), 11).unwrap();
    // non-trivial batch-norm affine parameters
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for bn in [&mut model.params.bn1, &mut model.params.bn2, &mut model.params.bn3] {
        for g in bn.gamma.iter_mut() {
            *g = rng.random_range(0.5..1.5);
        }
        for b in bn.beta.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let x = rand_tensor([4, 1, cfg.channels, cfg.samples], &mut rng);
    let targets = [0usize, 2, 1, 2];
    let seed = 99;
    let cache = model.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (_, grads) = model.backward(&x, &cache, &targets).unwrap();
    let mut out = Vec::new();
    for (slot, name) in TRAINABLE_NAMES.iter().enumerate() {
        let len = model.params.trainable()[slot].len();
        let mut num = Vec::with_capacity(len);
        for i in 0..len {
            let keep = model.params.trainable()[slot][i];
            let mut eval = |v: f64| {
                model.params.trainable_mut()[slot][i] = v;
                let c = model.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                model.loss(&c, &targets).unwrap()
            };
            let up = eval(keep + H);
            let down = eval(keep - H);
            eval(keep);
            num.push((up - down) / (2.0 * H));
        }
        out.push((*name, rel_err(grads.get(name).unwrap(), &num)));
    }
    out
}

/// Every check with its worst relative error.
pub fn run_all() -> Vec<(String, f64)> {
    let mut out = vec![
        ("temporal conv".to_string(), temporal_conv()),
        ("depthwise D=1".to_string(), depthwise(1)),
        ("depthwise D=2".to_string(), depthwise(2)),
        ("separable conv".to_string(), separable()),
        ("batch norm".to_string(), batchnorm_train()),
        ("elu".to_string(), elu_layer()),
        ("avg pool".to_string(), avgpool()),
        ("dropout".to_string(), dropout_train()),
        ("dense + softmax + cross-entropy".to_string(), dense_softmax_ce()),
    ];
    for (depth, rate) in [(1, 0.0), (2, 0.5)] {
        for (name, e) in end_to_end(depth, rate) {
            out.push((format!("model D={depth} dropout={rate}: {name}"), e));
        }
    }
    out
}
