//! Individual layers of the network with their backward passes.

use alloc::vec::Vec;

use rand::Rng;

use super::{axpy, dot, Real, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Zero padding placed before the signal for a "same" correlation with a
/// kernel of length `k`; the remainder goes after.
#[inline]
pub(crate) fn pad_left(k: usize) -> usize {
    (k - 1) / 2
}

/// Copies `row` into `buf` (length `row.len() + k - 1`) with same-mode padding.
#[inline]
pub(crate) fn pad_into<T: Real>(row: &[T], k: usize, buf: &mut [T]) {
    let pl = pad_left(k);
    buf.fill(T::zero());
    buf[pl..pl + row.len()].copy_from_slice(row);
}

/// `out[t] = sum_k kernel[k] * row[t + k - pad_left]`
#[inline]
pub(crate) fn correlate_same<T: Real>(row: &[T], kernel: &[T], buf: &mut [T], out: &mut [T]) {
    let k = kernel.len();
    pad_into(row, k, buf);
    for (t, o) in out.iter_mut().enumerate() {
        *o = dot(&buf[t..t + k], kernel);
    }
}

/// Accumulates kernel and (padded) input gradients of [`correlate_same`].
#[inline]
pub(crate) fn correlate_same_backward<T: Real>(
    buf: &[T],
    kernel: &[T],
    dout: &[T],
    dkernel: &mut [T],
    dbuf: &mut [T],
) {
    let k = kernel.len();
    for (t, &g) in dout.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        axpy(g, &buf[t..t + k], dkernel);
        axpy(g, kernel, &mut dbuf[t..t + k]);
    }
}

/// Temporal convolution, same padding: `(n,1,C,T) x (F,1,1,K) -> (n,F,C,T)`.
pub fn conv2d_temporal_same<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, one, c, t] = x.shape();
    let [f, w1, w2, k] = w.shape();
    if one != 1 || w1 != 1 || w2 != 1 || k == 0 {
        return Err(Error::Shape(alloc::format!(
            "temporal conv needs (n,1,C,T) and (F,1,1,K), got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let mut out = Tensor4::zeros([n, f, c, t]);
    let mut buf = alloc::vec![T::zero(); t + k - 1];
    for ni in 0..n {
        for ci in 0..c {
            pad_into(x.row(ni, 0, ci), k, &mut buf);
            for fi in 0..f {
                let kernel = w.row(fi, 0, 0);
                let o = out.row_mut(ni, fi, ci);
                for (ti, v) in o.iter_mut().enumerate() {
                    *v = dot(&buf[ti..ti + k], kernel);
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dw)`.
pub fn conv2d_temporal_same_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [n, _, c, t] = x.shape();
    let [f, _, _, k] = w.shape();
    dout.expect_shape([n, f, c, t], "temporal conv gradient")?;
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut buf = alloc::vec![T::zero(); t + k - 1];
    let mut dbuf = alloc::vec![T::zero(); t + k - 1];
    let pl = pad_left(k);
    for ni in 0..n {
        for ci in 0..c {
            pad_into(x.row(ni, 0, ci), k, &mut buf);
            dbuf.fill(T::zero());
            for fi in 0..f {
                let kernel = w.row(fi, 0, 0);
                correlate_same_backward(&buf, kernel, dout.row(ni, fi, ci), dw.row_mut(fi, 0, 0), &mut dbuf);
            }
            dx.row_mut(ni, 0, ci).copy_from_slice(&dbuf[pl..pl + t]);
        }
    }
    Ok((dx, dw))
}

fn depth_of(filters: usize, w_rows: usize) -> Result<usize> {
    if filters == 0 || !w_rows.is_multiple_of(filters) {
        return Err(Error::Shape(alloc::format!(
            "{w_rows} depthwise filters is not a multiple of {filters} inputs"
        )));
    }
    Ok(w_rows / filters)
}

/// Spatial depthwise convolution, valid mode:
/// `(n,F1,C,T) x (D*F1,1,C,1) -> (n,D*F1,1,T)`; output `d*F1 + f` reads input `f`.
pub fn depthwise_conv_spatial<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, f1, c, t] = x.shape();
    let [j_count, one, wc, w1] = w.shape();
    if one != 1 || w1 != 1 || wc != c {
        return Err(Error::Shape(alloc::format!(
            "depthwise weights {:?} do not match input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    depth_of(f1, j_count)?;
    let mut out = Tensor4::zeros([n, j_count, 1, t]);
    for ni in 0..n {
        for j in 0..j_count {
            let f = j % f1;
            for ci in 0..c {
                let g = w.get([j, 0, ci, 0]);
                let src = x.row(ni, f, ci);
                axpy(g, src, out.row_mut(ni, j, 0));
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dw)`.
pub fn depthwise_conv_spatial_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [n, f1, c, t] = x.shape();
    let j_count = w.shape()[0];
    dout.expect_shape([n, j_count, 1, t], "depthwise gradient")?;
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    for ni in 0..n {
        for j in 0..j_count {
            let f = j % f1;
            let g = dout.row(ni, j, 0);
            for ci in 0..c {
                let acc = dw.get([j, 0, ci, 0]) + dot(g, x.row(ni, f, ci));
                dw.set([j, 0, ci, 0], acc);
                axpy(w.get([j, 0, ci, 0]), g, dx.row_mut(ni, f, ci));
            }
        }
    }
    Ok((dx, dw))
}

/// Depthwise temporal stage (same padding) then 1x1 pointwise mixing:
/// `(n,J,1,T) x (J,1,1,K) x (F2,J,1,1) -> (n,F2,1,T)`.
pub fn separable_conv<T: Real>(
    x: &Tensor4<T>,
    w_depth: &Tensor4<T>,
    w_point: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let inner = separable_depth_stage(x, w_depth)?;
    pointwise(&inner, w_point)
}

fn separable_depth_stage<T: Real>(x: &Tensor4<T>, w_depth: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, j_count, one, t] = x.shape();
    let [wj, a, b, k] = w_depth.shape();
    if one != 1 || wj != j_count || a != 1 || b != 1 || k == 0 {
        return Err(Error::Shape(alloc::format!(
            "separable depthwise weights {:?} do not match input {:?}",
            w_depth.shape(),
            x.shape()
        )));
    }
    let mut out = Tensor4::zeros(x.shape());
    let mut buf = alloc::vec![T::zero(); t + k - 1];
    for ni in 0..n {
        for j in 0..j_count {
            let row = x.row(ni, j, 0);
            correlate_same(row, w_depth.row(j, 0, 0), &mut buf, out.row_mut(ni, j, 0));
        }
    }
    Ok(out)
}

fn pointwise<T: Real>(x: &Tensor4<T>, w_point: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, j_count, _, t] = x.shape();
    let [f2, wj, a, b] = w_point.shape();
    if wj != j_count || a != 1 || b != 1 {
        return Err(Error::Shape(alloc::format!(
            "pointwise weights {:?} do not match input {:?}",
            w_point.shape(),
            x.shape()
        )));
    }
    let mut out = Tensor4::zeros([n, f2, 1, t]);
    for ni in 0..n {
        for o in 0..f2 {
            for j in 0..j_count {
                let g = w_point.get([o, j, 0, 0]);
                let src = x.row(ni, j, 0);
                axpy(g, src, out.row_mut(ni, o, 0));
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dw_depth, dw_point)`.
pub fn separable_conv_backward<T: Real>(
    x: &Tensor4<T>,
    w_depth: &Tensor4<T>,
    w_point: &Tensor4<T>,
    dout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    let inner = separable_depth_stage(x, w_depth)?;
    let [n, j_count, _, t] = x.shape();
    let f2 = w_point.shape()[0];
    dout.expect_shape([n, f2, 1, t], "separable gradient")?;
    let k = w_depth.shape()[3];
    let mut dwp = Tensor4::zeros(w_point.shape());
    let mut dwd = Tensor4::zeros(w_depth.shape());
    let mut dx = Tensor4::zeros(x.shape());
    let mut dinner = alloc::vec![T::zero(); t];
    let mut buf = alloc::vec![T::zero(); t + k - 1];
    let mut dbuf = alloc::vec![T::zero(); t + k - 1];
    let pl = pad_left(k);
    for ni in 0..n {
        for j in 0..j_count {
            dinner.fill(T::zero());
            for o in 0..f2 {
                let g = dout.row(ni, o, 0);
                let acc = dwp.get([o, j, 0, 0]) + dot(g, inner.row(ni, j, 0));
                dwp.set([o, j, 0, 0], acc);
                axpy(w_point.get([o, j, 0, 0]), g, &mut dinner);
            }
            pad_into(x.row(ni, j, 0), k, &mut buf);
            dbuf.fill(T::zero());
            let kernel = w_depth.row(j, 0, 0);
            correlate_same_backward(&buf, kernel, &dinner, dwd.row_mut(j, 0, 0), &mut dbuf);
            dx.row_mut(ni, j, 0).copy_from_slice(&dbuf[pl..pl + t]);
        }
    }
    Ok((dx, dwd, dwp))
}

/// Per-filter affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(features: usize) -> Self {
        Self {
            gamma: alloc::vec![T::one(); features],
            beta: alloc::vec![T::zero(); features],
            running_mean: alloc::vec![T::zero(); features],
            running_var: alloc::vec![T::one(); features],
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// `running = momentum * running + (1 - momentum) * batch`, using the
    /// biased batch variance.
    pub fn update_running(&mut self, mean: &[T], var: &[T], momentum: f64) {
        let m = T::of(momentum);
        let rest = T::one() - m;
        for i in 0..self.features() {
            self.running_mean[i] = m * self.running_mean[i] + rest * mean[i];
            self.running_var[i] = m * self.running_var[i] + rest * var[i];
        }
    }
}

/// Saved state of a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes over `(n, h, w)` for each filter (axis 1).
///
/// Train mode uses batch statistics; infer mode uses the running averages,
/// which are mean 0 and variance 1 until a train step updates them.
pub fn batchnorm<T: Real>(
    x: &Tensor4<T>,
    bn: &BatchNorm<T>,
    mode: Mode,
    eps: f64,
) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
    let [n, f, h, w] = x.shape();
    if bn.features() != f {
        return Err(Error::Shape(alloc::format!(
            "batch norm has {} features, input has {f}",
            bn.features()
        )));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
        Mode::Train => {
            let mut mean = Vec::with_capacity(f);
            let mut var = Vec::with_capacity(f);
            for fi in 0..f {
                let (mut s, mut s2) = (0.0f64, 0.0f64);
                for ni in 0..n {
                    let o = x.offset([ni, fi, 0, 0]);
                    for &v in &x.data()[o..o + plane] {
                        let v = v.f64();
                        s += v;
                        s2 += v * v;
                    }
                }
                let m = s / count;
                let mut v = 0.0;
                for ni in 0..n {
                    let o = x.offset([ni, fi, 0, 0]);
                    for &e in &x.data()[o..o + plane] {
                        let d = e.f64() - m;
                        v += d * d;
                    }
                }
                let _ = s2;
                mean.push(T::of(m));
                var.push(T::of(v / count));
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / libm::sqrt(v.f64() + eps))).collect();
    let mut xhat = Tensor4::zeros(x.shape());
    let mut y = Tensor4::zeros(x.shape());
    for ni in 0..n {
        for fi in 0..f {
            let o = x.offset([ni, fi, 0, 0]);
            for i in o..o + plane {
                let z = (x.data()[i] - mean[fi]) * inv_std[fi];
                xhat.data_mut()[i] = z;
                y.data_mut()[i] = bn.gamma[fi] * z + bn.beta[fi];
            }
        }
    }
    let cache = match mode {
        Mode::Train => Some(BnCache { xhat, mean, var, inv_std }),
        Mode::Infer => None,
    };
    Ok((y, cache))
}

/// Returns `(dx, dgamma, dbeta)` for a train-mode batch norm.
pub fn batchnorm_backward<T: Real>(
    dy: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    dy.expect_shape(cache.xhat.shape(), "batch norm gradient")?;
    let [n, f, h, w] = dy.shape();
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let mut dgamma = alloc::vec![T::zero(); f];
    let mut dbeta = alloc::vec![T::zero(); f];
    for ni in 0..n {
        for fi in 0..f {
            let o = dy.offset([ni, fi, 0, 0]);
            let g = &dy.data()[o..o + plane];
            dbeta[fi] += g.iter().copied().sum::<T>();
            dgamma[fi] += dot(g, &cache.xhat.data()[o..o + plane]);
        }
    }
    let mut dx = Tensor4::zeros(dy.shape());
    for ni in 0..n {
        for fi in 0..f {
            let scale = gamma[fi] * cache.inv_std[fi] / count;
            let o = dy.offset([ni, fi, 0, 0]);
            for i in o..o + plane {
                dx.data_mut()[i] =
                    scale * (count * dy.data()[i] - dbeta[fi] - cache.xhat.data()[i] * dgamma[fi]);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// `x` for `x > 0`, `exp(x) - 1` otherwise.
pub fn elu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { v.exp_m1() })
}

/// Gradient through [`elu`] given its input.
pub fn elu_backward<T: Real>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g *= v.exp();
        }
    }
    dx
}

/// Non-overlapping mean over windows of `width` along the time axis.
pub fn avgpool_time<T: Real>(x: &Tensor4<T>, width: usize) -> Result<Tensor4<T>> {
    let [n, f, h, t] = x.shape();
    if width == 0 || t % width != 0 {
        return Err(Error::Shape(alloc::format!(
            "time length {t} is not divisible by pool width {width}"
        )));
    }
    let scale = T::one() / T::of(width as f64);
    let mut out = Tensor4::zeros([n, f, h, t / width]);
    for (o, chunk) in out.data_mut().iter_mut().zip(x.data().chunks_exact(width)) {
        *o = chunk.iter().copied().sum::<T>() * scale;
    }
    Ok(out)
}

pub fn avgpool_time_backward<T: Real>(dy: &Tensor4<T>, width: usize) -> Tensor4<T> {
    let [n, f, h, t] = dy.shape();
    let scale = T::one() / T::of(width as f64);
    let mut dx = Tensor4::zeros([n, f, h, t * width]);
    for (chunk, &g) in dx.data_mut().chunks_exact_mut(width).zip(dy.data()) {
        chunk.fill(g * scale);
    }
    dx
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask
/// holds those multipliers. Infer mode is the identity.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(alloc::format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= *m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Real>(dy: &Tensor4<T>, mask: Option<&[T]>) -> Tensor4<T> {
    let mut dx = dy.clone();
    if let Some(mask) = mask {
        for (g, m) in dx.data_mut().iter_mut().zip(mask) {
            *g *= *m;
        }
    }
    dx
}

/// Row-wise softmax of `rows x classes` logits, max-subtracted.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Bias-free dense layer followed by softmax. `x` is `rows x d`, `w` is
/// `classes x d`; returns `(logits, probabilities)`.
pub fn dense_softmax<T: Real>(x: &[T], w: &[T], rows: usize, classes: usize) -> Result<(Vec<T>, Vec<T>)> {
    if rows == 0 || classes == 0 || !x.len().is_multiple_of(rows) {
        return Err(Error::Shape("dense input is not rows x d".into()));
    }
    let d = x.len() / rows;
    if w.len() != classes * d {
        return Err(Error::Shape(alloc::format!(
            "dense weights hold {} values, expected {} x {}",
            w.len(),
            classes,
            d
        )));
    }
    let mut logits = Vec::with_capacity(rows * classes);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        for k in 0..classes {
            logits.push(dot(xr, &w[k * d..(k + 1) * d]));
        }
    }
    let probs = softmax_rows(&logits, classes);
    Ok((logits, probs))
}

/// Returns `(dx, dw)` from the gradient with respect to the logits.
pub fn dense_softmax_backward<T: Real>(
    x: &[T],
    w: &[T],
    dlogits: &[T],
    rows: usize,
    classes: usize,
) -> (Vec<T>, Vec<T>) {
    let d = x.len() / rows;
    let mut dx = alloc::vec![T::zero(); x.len()];
    let mut dw = alloc::vec![T::zero(); w.len()];
    for r in 0..rows {
        for k in 0..classes {
            let g = dlogits[r * classes + k];
            axpy(g, &x[r * d..(r + 1) * d], &mut dw[k * d..(k + 1) * d]);
            axpy(g, &w[k * d..(k + 1) * d], &mut dx[r * d..(r + 1) * d]);
        }
    }
    (dx, dw)
}

/// Mean over rows of `-sum_j t_ij ln p_ij`, with `p` clamped at 1e-12.
pub fn cross_entropy<T: Real>(p: &[T], t: &[T], classes: usize) -> T {
    let rows = p.len() / classes;
    let floor = T::of(1e-12);
    let total: T = p
        .iter()
        .zip(t)
        .filter(|(_, &ti)| ti != T::zero())
        .map(|(&pi, &ti)| -ti * pi.max(floor).ln())
        .sum();
    total / T::of(rows as f64)
}

/// Gradient of the mean cross-entropy with respect to the logits: `(p - t) / n`.
pub fn cross_entropy_grad<T: Real>(p: &[T], t: &[T], rows: usize) -> Vec<T> {
    let n = T::of(rows as f64);
    p.iter().zip(t).map(|(&pi, &ti)| (pi - ti) / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn centered_delta_is_identity() {
        let x = random([2, 1, 3, 20], 1);
        for k in [1usize, 4, 5, 16] {
            let w = Tensor4::from_fn([3, 1, 1, k], |[_, _, _, i]| if i == pad_left(k) { 1.0 } else { 0.0 });
            let y = conv2d_temporal_same(&x, &w).unwrap();
            for n in 0..2 {
                for f in 0..3 {
                    for c in 0..3 {
                        assert_eq!(y.row(n, f, c), x.row(n, 0, c));
                    }
                }
            }
        }
    }

    #[test]
    fn ones_kernel_sums_constant_interior() {
        let x = Tensor4::from_fn([1, 1, 2, 600], |_| 0.5f64);
        let w = Tensor4::from_fn([1, 1, 1, 256], |_| 1.0f64);
        let y = conv2d_temporal_same(&x, &w).unwrap();
        for t in 127..(600 - 128) {
            assert!((y.get([0, 0, 1, t]) - 128.0).abs() < 1e-9);
        }
        assert!(y.get([0, 0, 0, 0]) < 128.0);
    }

    fn naive_temporal(x: &Tensor4<f64>, w: &Tensor4<f64>) -> Tensor4<f64> {
        let [n, _, c, t] = x.shape();
        let [f, _, _, k] = w.shape();
        let pl = pad_left(k) as isize;
        let mut out = Tensor4::zeros([n, f, c, t]);
        for ni in 0..n {
            for fi in 0..f {
                for ci in 0..c {
                    for ti in 0..t {
                        let mut acc = 0.0;
                        for ki in 0..k {
                            let src = ti as isize + ki as isize - pl;
                            if (0..t as isize).contains(&src) {
                                acc += w.get([fi, 0, 0, ki]) * x.get([ni, 0, ci, src as usize]);
                            }
                        }
                        out.set([ni, fi, ci, ti], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn temporal_conv_matches_naive_loops() {
        let x = random([2, 1, 3, 40], 2);
        let w = random([4, 1, 1, 16], 3);
        let fast = conv2d_temporal_same(&x, &w).unwrap();
        assert!(rel_err(fast.data(), naive_temporal(&x, &w).data()) < 1e-5);
        let w = random([2, 1, 1, 7], 4);
        let fast = conv2d_temporal_same(&x, &w).unwrap();
        assert!(rel_err(fast.data(), naive_temporal(&x, &w).data()) < 1e-5);
    }

    #[test]
    fn spatial_selector_and_mean() {
        let x = random([2, 3, 4, 10], 5);
        let sel = Tensor4::from_fn([3, 1, 4, 1], |[_, _, c, _]| if c == 2 { 1.0 } else { 0.0 });
        let y = depthwise_conv_spatial(&x, &sel).unwrap();
        for n in 0..2 {
            for f in 0..3 {
                assert_eq!(y.row(n, f, 0), x.row(n, f, 2));
            }
        }
        let avg = Tensor4::from_fn([3, 1, 4, 1], |_| 0.25);
        let y = depthwise_conv_spatial(&x, &avg).unwrap();
        let mean: f64 = (0..4).map(|c| x.get([1, 2, c, 7])).sum::<f64>() / 4.0;
        assert!((y.get([1, 2, 0, 7]) - mean).abs() < 1e-12);
    }

    #[test]
    fn depthwise_with_depth_two_matches_naive() {
        let x = random([2, 3, 4, 9], 6);
        let w = random([6, 1, 4, 1], 7);
        let y = depthwise_conv_spatial(&x, &w).unwrap();
        for n in 0..2 {
            for d in 0..2 {
                for f in 0..3 {
                    for t in 0..9 {
                        let j = d * 3 + f;
                        let want: f64 = (0..4).map(|c| w.get([j, 0, c, 0]) * x.get([n, f, c, t])).sum();
                        assert!((y.get([n, j, 0, t]) - want).abs() < 1e-12);
                    }
                }
            }
        }
        assert!(depthwise_conv_spatial(&x, &random([5, 1, 4, 1], 8)).is_err());
    }

    #[test]
    fn separable_identity_and_naive() {
        let x = random([2, 3, 1, 12], 9);
        let wd = Tensor4::from_fn([3, 1, 1, 16], |[_, _, _, k]| if k == pad_left(16) { 1.0 } else { 0.0 });
        let wp = Tensor4::from_fn([3, 3, 1, 1], |[o, j, _, _]| if o == j { 1.0 } else { 0.0 });
        assert_eq!(separable_conv(&x, &wd, &wp).unwrap(), x);

        let wd = random([3, 1, 1, 16], 10);
        let wp = random([5, 3, 1, 1], 11);
        let y = separable_conv(&x, &wd, &wp).unwrap();
        for n in 0..2 {
            for o in 0..5 {
                for t in 0..12 {
                    let mut want = 0.0;
                    for j in 0..3 {
                        let mut inner = 0.0;
                        for k in 0..16 {
                            let src = t as isize + k as isize - pad_left(16) as isize;
                            if (0..12).contains(&src) {
                                inner += wd.get([j, 0, 0, k]) * x.get([n, j, 0, src as usize]);
                            }
                        }
                        want += wp.get([o, j, 0, 0]) * inner;
                    }
                    assert!((y.get([n, o, 0, t]) - want).abs() < 1e-5 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_standardizes() {
        let x = random([8, 3, 1, 20], 12).map(|v| 3.0 * v + 2.0);
        let bn = BatchNorm::new(3);
        let (y, cache) = batchnorm(&x, &bn, Mode::Train, 1e-5).unwrap();
        let cache = cache.unwrap();
        for f in 0..3 {
            let vals: Vec<f64> = (0..8).flat_map(|n| y.row(n, f, 0).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-3 && (v - 1.0).abs() < 1e-3);
        }
        assert_eq!(cache.mean.len(), 3);
    }

    #[test]
    fn batchnorm_standardized_input_passes_through() {
        let mut x = random([16, 2, 1, 30], 13);
        for f in 0..2 {
            let idx: Vec<usize> = (0..16).flat_map(|n| (0..30).map(move |t| (n, t))).map(|(n, t)| x.offset([n, f, 0, t])).collect();
            let m = idx.iter().map(|&i| x.data()[i]).sum::<f64>() / idx.len() as f64;
            let v = idx.iter().map(|&i| (x.data()[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
            for &i in &idx {
                x.data_mut()[i] = (x.data()[i] - m) / v.sqrt();
            }
        }
        let (y, _) = batchnorm(&x, &BatchNorm::new(2), Mode::Train, 1e-5).unwrap();
        assert!(rel_err(y.data(), x.data()) < 1e-4);
    }

    #[test]
    fn batchnorm_constant_input_gives_beta() {
        let x = Tensor4::from_fn([4, 2, 1, 5], |_| 7.0f64);
        let mut bn = BatchNorm::new(2);
        bn.beta = alloc::vec![0.3, -0.2];
        let (y, _) = batchnorm(&x, &bn, Mode::Train, 1e-5).unwrap();
        for n in 0..4 {
            assert!(y.row(n, 0, 0).iter().all(|v| (v - 0.3).abs() < 1e-12));
            assert!(y.row(n, 1, 0).iter().all(|v| (v + 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn running_stats_follow_geometric_recursion() {
        let x = random([8, 1, 1, 50], 14).map(|v| 2.0 * v + 1.0);
        let mut bn = BatchNorm::new(1);
        let (_, cache) = batchnorm(&x, &bn, Mode::Train, 1e-5).unwrap();
        let cache = cache.unwrap();
        let steps = 60;
        for _ in 0..steps {
            bn.update_running(&cache.mean, &cache.var, 0.9);
        }
        // closed form: r_n = m + (r_0 - m) * 0.9^n
        let decay = 0.9f64.powi(steps);
        let want_mean = cache.mean[0] * (1.0 - decay);
        let want_var = cache.var[0] + (1.0 - cache.var[0]) * decay;
        assert!((bn.running_mean[0] - want_mean).abs() < 1e-12);
        assert!((bn.running_var[0] - want_var).abs() < 1e-12);
        assert!((bn.running_mean[0] / cache.mean[0] - 1.0).abs() < 0.01);
        assert!((bn.running_var[0] / cache.var[0] - 1.0).abs() < 0.01);
    }

    #[test]
    fn infer_before_training_uses_identity_stats() {
        let x = random([2, 2, 1, 4], 15);
        let (y, cache) = batchnorm(&x, &BatchNorm::new(2), Mode::Infer, 1e-5).unwrap();
        assert!(cache.is_none());
        assert!(rel_err(y.data(), x.data()) < 1e-5);
    }

    #[test]
    fn elu_values() {
        let x = Tensor4::from_vec([1, 1, 1, 3], alloc::vec![0.0f64, 1.0, -1.0]).unwrap();
        let y = elu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
        assert!((y.data()[2] - (libm::exp(-1.0) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn pooling() {
        let x = Tensor4::from_vec([1, 1, 1, 4], alloc::vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_time(&x, 4).unwrap().data(), &[2.5]);
        let c = Tensor4::from_fn([2, 3, 1, 256], |_| 4.5f64);
        let p = avgpool_time(&avgpool_time(&c, 4).unwrap(), 8).unwrap();
        assert_eq!(p.shape(), [2, 3, 1, 8]);
        assert!(p.data().iter().all(|&v| v == 4.5));
        assert!(avgpool_time(&x, 3).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 1, 1, 10], 16);
        assert_eq!(dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
        let dy = random([1, 1, 1, 10], 17);
        assert_eq!(dropout_backward(&dy, None), dy);
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = Tensor4::from_fn([1, 1, 1, 100_000], |_| 1.0f64);
        let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let kept = mask.unwrap().iter().filter(|&&m| m != 0.0).count() as f64 / 100_000.0;
        assert!((kept - 0.5).abs() < 0.02, "{kept}");
        let mean = y.data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn softmax_properties() {
        let x = alloc::vec![0.3f64, -1.2, 2.0, 0.7, 0.1, 0.0];
        let (_, p) = dense_softmax(&x, &alloc::vec![0.0; 12], 2, 4).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let logits = alloc::vec![5.0f64; 12];
        assert!(softmax_rows(&logits, 12).iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..36).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.4).collect();
        let a = softmax_rows(&logits, 12);
        let b = softmax_rows(&shifted, 12);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-7));
        for row in a.chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let huge = alloc::vec![1e4f64, -1e4, 0.0];
        assert!(softmax_rows(&huge, 3).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_values() {
        let t = alloc::vec![0.0f64, 1.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(cross_entropy(&t, &t, 3), 0.0);
        let uniform = alloc::vec![1.0f64 / 12.0; 24];
        let mut onehot = alloc::vec![0.0f64; 24];
        onehot[3] = 1.0;
        onehot[12 + 7] = 1.0;
        assert!((cross_entropy(&uniform, &onehot, 12) - libm::log(12.0)).abs() < 1e-12);
        let p = alloc::vec![0.0f64, 1.0];
        let t = alloc::vec![1.0f64, 0.0];
        assert!(cross_entropy(&p, &t, 2).is_finite());
    }

    #[test]
    fn cross_entropy_gradient_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut t = alloc::vec![0.0; 15];
        t[1] = 1.0;
        t[5 + 4] = 1.0;
        t[10] = 1.0;
        let loss = |l: &[f64]| cross_entropy(&softmax_rows(l, 5), &t, 5);
        let g = cross_entropy_grad(&softmax_rows(&logits, 5), &t, 3);
        for i in 0..15 {
            let mut a = logits.clone();
            let mut b = logits.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn dropout_infer_gradient_is_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([1, 2, 1, 6], 18);
        let (_, mask) = dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap();
        let dy = random([1, 2, 1, 6], 19);
        assert_eq!(dropout_backward(&dy, mask.as_deref()), dy);
    }
}
