//! Temporal convolution, batch norm and spatial depthwise convolution
//! evaluated as one kernel.
//!
//! With temporal output `h = w * x` and depthwise weights `ws`, the depthwise
//! output of filter `j` (reading temporal filter `f`) is
//!
//! ```text
//! z_j = g_f * inv_f * (v_j - mu_f * S_j) + beta_f * S_j
//! v_j = w_f * u_j,   u_j = sum_c ws(j,c) x_c,   S_j = sum_c ws(j,c)
//! ```
//!
//! so the temporal kernel runs once per spatial filter instead of once per
//! channel. Batch statistics of `h` come from the window sums `S1` and the
//! lag Gram matrix `G` of the padded input, which do not depend on the filter:
//! `mu_f = w_f . S1 / M` and `E[h^2] = w_f' G w_f / M`.

use alloc::vec::Vec;

use super::layers::{pad_into, pad_left, BatchNorm, Mode};
use super::{axpy, dot, Real, Tensor4};
use crate::error::{Error, Result};

/// Input statistics shared by every temporal filter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InputStats {
    count: f64,
    s1: Vec<f64>,
    gram: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block1Cache<T> {
    /// Spatially mixed padded input, `(n, J, T + K - 1)`.
    u: Vec<T>,
    /// Temporal response of each mixed input, `(n, J, T)`.
    v: Vec<T>,
    pub(crate) mean: Vec<T>,
    pub(crate) var: Vec<T>,
    inv_std: Vec<T>,
    stats: Option<InputStats>,
    /// `G w_f` per temporal filter.
    gw: Vec<f64>,
}

pub(crate) struct Block1Grads<T> {
    pub conv1: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub depthwise: Vec<T>,
}

struct Dims {
    n: usize,
    c: usize,
    t: usize,
    k: usize,
    f1: usize,
    j: usize,
}

impl Dims {
    fn len(&self) -> usize {
        self.t + self.k - 1
    }
}

fn dims<T: Real>(x: &Tensor4<T>, conv1: &Tensor4<T>, depthwise: &Tensor4<T>) -> Result<Dims> {
    let [n, one, c, t] = x.shape();
    let [f1, a, b, k] = conv1.shape();
    let [j, d1, dc, d2] = depthwise.shape();
    if one != 1 || a != 1 || b != 1 || d1 != 1 || d2 != 1 || dc != c || k == 0 || j % f1 != 0 {
        return Err(Error::Shape(alloc::format!(
            "block 1 shapes do not chain: input {:?}, conv {:?}, depthwise {:?}",
            x.shape(),
            conv1.shape(),
            depthwise.shape()
        )));
    }
    Ok(Dims { n, c, t, k, f1, j })
}

fn padded_rows<T: Real>(x: &Tensor4<T>, n: usize, d: &Dims, out: &mut [T]) {
    let l = d.len();
    for c in 0..d.c {
        pad_into(x.row(n, 0, c), d.k, &mut out[c * l..(c + 1) * l]);
    }
}

fn input_stats<T: Real>(x: &Tensor4<T>, d: &Dims) -> InputStats {
    let (k, t, l) = (d.k, d.t, d.len());
    let mut s1 = alloc::vec![0.0f64; k];
    let mut g0 = alloc::vec![0.0f64; k];
    // head[a][b] = sum xp[a] xp[b], tail[a][b] = sum xp[t+a] xp[t+b]
    let mut head = alloc::vec![0.0f64; k * k];
    let mut tail = alloc::vec![0.0f64; k * k];
    let mut row = alloc::vec![0.0f64; l];
    let pl = pad_left(k);
    for n in 0..d.n {
        for c in 0..d.c {
            row.fill(0.0);
            for (dst, &v) in row[pl..pl + t].iter_mut().zip(x.row(n, 0, c)) {
                *dst = v.f64();
            }
            let mut win: f64 = row[..t].iter().sum();
            for lag in 0..k {
                s1[lag] += win;
                if lag + 1 < k {
                    win += row[lag + t] - row[lag];
                }
                g0[lag] += dot(&row[..t], &row[lag..lag + t]);
            }
            for a in 0..k - 1 {
                let (ha, ta) = (row[a], row[t + a]);
                if ha != 0.0 {
                    axpy(ha, &row[..k - 1], &mut head[a * k..a * k + k - 1]);
                }
                if ta != 0.0 {
                    axpy(ta, &row[t..t + k - 1], &mut tail[a * k..a * k + k - 1]);
                }
            }
        }
    }
    let mut gram = alloc::vec![0.0f64; k * k];
    gram[..k].copy_from_slice(&g0);
    for a in 0..k {
        gram[a * k] = g0[a];
    }
    for a in 1..k {
        for b in 1..k {
            let p = (a - 1) * k + (b - 1);
            gram[a * k + b] = gram[p] - head[p] + tail[p];
        }
    }
    InputStats {
        count: (d.n * d.c * d.t) as f64,
        s1,
        gram,
    }
}

/// Returns the depthwise output `(n, J, 1, T)` before the second batch norm.
pub(crate) fn forward<T: Real>(
    x: &Tensor4<T>,
    conv1: &Tensor4<T>,
    bn1: &BatchNorm<T>,
    depthwise: &Tensor4<T>,
    mode: Mode,
    eps: f64,
) -> Result<(Tensor4<T>, Block1Cache<T>)> {
    let d = dims(x, conv1, depthwise)?;
    if bn1.features() != d.f1 {
        return Err(Error::Shape("first batch norm does not match temporal filters".into()));
    }
    let (k, l, t) = (d.k, d.len(), d.t);
    let mut gw = Vec::new();
    let (mean, var, stats) = match mode {
        Mode::Infer => (bn1.running_mean.clone(), bn1.running_var.clone(), None),
        Mode::Train => {
            let stats = input_stats(x, &d);
            let mut mean = Vec::with_capacity(d.f1);
            let mut var = Vec::with_capacity(d.f1);
            gw = alloc::vec![0.0f64; d.f1 * k];
            for f in 0..d.f1 {
                let w: Vec<f64> = conv1.row(f, 0, 0).iter().map(|v| v.f64()).collect();
                let mu = dot(&w, &stats.s1) / stats.count;
                let g = &mut gw[f * k..(f + 1) * k];
                for (a, ga) in g.iter_mut().enumerate() {
                    *ga = dot(&stats.gram[a * k..(a + 1) * k], &w);
                }
                let second = dot(&w, g) / stats.count;
                mean.push(T::of(mu));
                var.push(T::of((second - mu * mu).max(0.0)));
            }
            (mean, var, Some(stats))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / libm::sqrt(v.f64() + eps))).collect();
    let spatial_sum: Vec<T> = (0..d.j).map(|j| depthwise.data()[j * d.c..(j + 1) * d.c].iter().copied().sum()).collect();

    let keep_u = mode == Mode::Train;
    let mut u_all = if keep_u { alloc::vec![T::zero(); d.n * d.j * l] } else { Vec::new() };
    let mut v_all = alloc::vec![T::zero(); d.n * d.j * t];
    let mut z = Tensor4::zeros([d.n, d.j, 1, t]);
    let mut xp = alloc::vec![T::zero(); d.c * l];
    let mut u = alloc::vec![T::zero(); l];
    for n in 0..d.n {
        padded_rows(x, n, &d, &mut xp);
        for j in 0..d.j {
            let f = j % d.f1;
            u.fill(T::zero());
            for c in 0..d.c {
                axpy(depthwise.data()[j * d.c + c], &xp[c * l..(c + 1) * l], &mut u);
            }
            let w = conv1.row(f, 0, 0);
            let v = &mut v_all[(n * d.j + j) * t..(n * d.j + j + 1) * t];
            for (ti, vi) in v.iter_mut().enumerate() {
                *vi = dot(&u[ti..ti + k], w);
            }
            let a = bn1.gamma[f] * inv_std[f];
            let shift = bn1.beta[f] * spatial_sum[j] - a * mean[f] * spatial_sum[j];
            for (zi, &vi) in z.row_mut(n, j, 0).iter_mut().zip(v.iter()) {
                *zi = a * vi + shift;
            }
            if keep_u {
                u_all[(n * d.j + j) * l..(n * d.j + j + 1) * l].copy_from_slice(&u);
            }
        }
    }
    Ok((
        z,
        Block1Cache {
            u: u_all,
            v: v_all,
            mean,
            var,
            inv_std,
            stats,
            gw,
        },
    ))
}

/// Gradients of a train-mode [`forward`] given `dz`, the gradient at the
/// depthwise output. The input gradient is not formed.
pub(crate) fn backward<T: Real>(
    x: &Tensor4<T>,
    conv1: &Tensor4<T>,
    bn1: &BatchNorm<T>,
    depthwise: &Tensor4<T>,
    cache: &Block1Cache<T>,
    dz: &Tensor4<T>,
) -> Result<Block1Grads<T>> {
    let d = dims(x, conv1, depthwise)?;
    dz.expect_shape([d.n, d.j, 1, d.t], "block 1 gradient")?;
    let stats = cache
        .stats
        .as_ref()
        .ok_or_else(|| Error::Config("backward needs a train-mode forward pass".into()))?;
    let (k, l, t) = (d.k, d.len(), d.t);
    let spatial_sum: Vec<f64> = (0..d.j)
        .map(|j| depthwise.data()[j * d.c..(j + 1) * d.c].iter().map(|v| v.f64()).sum())
        .collect();

    let mut direct = alloc::vec![T::zero(); d.f1 * k];
    let mut dz_sum = alloc::vec![0.0f64; d.j];
    let mut dz_v = alloc::vec![0.0f64; d.j];
    let mut xq = alloc::vec![0.0f64; d.j * d.c];
    let mut xp = alloc::vec![T::zero(); d.c * l];
    let mut q = alloc::vec![T::zero(); l];
    for n in 0..d.n {
        padded_rows(x, n, &d, &mut xp);
        for j in 0..d.j {
            let f = j % d.f1;
            let g = dz.row(n, j, 0);
            let u = &cache.u[(n * d.j + j) * l..(n * d.j + j + 1) * l];
            let v = &cache.v[(n * d.j + j) * t..(n * d.j + j + 1) * t];
            dz_sum[j] += g.iter().map(|e| e.f64()).sum::<f64>();
            dz_v[j] += dot(g, v).f64();
            let w = conv1.row(f, 0, 0);
            let dw = &mut direct[f * k..(f + 1) * k];
            q.fill(T::zero());
            for (ti, &gt) in g.iter().enumerate() {
                if gt == T::zero() {
                    continue;
                }
                axpy(gt, &u[ti..ti + k], dw);
                axpy(gt, w, &mut q[ti..ti + k]);
            }
            for c in 0..d.c {
                xq[j * d.c + c] += dot(&xp[c * l..(c + 1) * l], &q).f64();
            }
        }
    }

    let m = stats.count;
    let mut grads = Block1Grads {
        conv1: alloc::vec![T::zero(); d.f1 * k],
        gamma: alloc::vec![T::zero(); d.f1],
        beta: alloc::vec![T::zero(); d.f1],
        depthwise: alloc::vec![T::zero(); d.j * d.c],
    };
    for f in 0..d.f1 {
        let (gamma, inv, mu) = (bn1.gamma[f].f64(), cache.inv_std[f].f64(), cache.mean[f].f64());
        let a = gamma * inv;
        let mut p = 0.0;
        let mut q_sum = 0.0;
        for j in (f..d.j).step_by(d.f1) {
            p += spatial_sum[j] * dz_sum[j];
            q_sum += dz_v[j];
            for c in 0..d.c {
                let h = a * (xq[j * d.c + c] - mu * dz_sum[j]) + bn1.beta[f].f64() * dz_sum[j];
                grads.depthwise[j * d.c + c] = T::of(h);
            }
        }
        let dgamma = inv * (q_sum - mu * p);
        grads.beta[f] = T::of(p);
        grads.gamma[f] = T::of(dgamma);
        let gw = &cache.gw[f * k..(f + 1) * k];
        for lag in 0..k {
            let s1 = stats.s1[lag];
            let val = direct[f * k + lag].f64() - p * s1 / m - dgamma / m * inv * (gw[lag] - mu * s1);
            grads.conv1[f * k + lag] = T::of(a * val);
        }
    }
    Ok(grads)
}
