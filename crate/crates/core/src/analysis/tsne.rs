use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` picks `n / 12`.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
            seed: 0,
        }
    }
}

/// Identity of an embedded point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub class_id: usize,
    pub subject: usize,
    pub block: usize,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<PointLabel>,
    /// KL divergence of the final embedding.
    pub kl: f64,
    /// KL divergence after every iteration, measured against the
    /// unexaggerated affinities.
    pub kl_history: Vec<f64>,
}

fn squared_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i * d..(i + 1) * d]
                .iter()
                .zip(&x[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Row-stochastic Gaussian affinities whose entropy matches `ln(perplexity)`,
/// found by bisection on the precision of each row.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = libm::log(perplexity);
    let mut p = alloc::vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        // distances are shifted by the nearest neighbour to keep exp() in range
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, &d) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                let e = libm::exp(-(d - dmin) * beta);
                sum += e;
                weighted += (d - dmin) * e;
            }
            let entropy = libm::log(sum) + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        let out = &mut p[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                out[j] = libm::exp(-(row[j] - dmin) * beta);
                sum += out[j];
            }
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    p
}

fn kl_divergence(p: &[f64], num: &[f64], num_sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &q)| pi * libm::log(pi / (q / num_sum).max(1e-300)))
        .sum()
}

/// Exact t-SNE of `n x dim` row-major features into two dimensions.
pub fn tsne(features: &[f64], dim: usize, labels: Vec<PointLabel>, config: &TsneConfig) -> Result<Embedding2D> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(Error::Shape("features are not rows x dim".into()));
    }
    let n = features.len() / dim;
    if labels.len() != n {
        return Err(Error::Shape(alloc::format!("{} labels for {n} points", labels.len())));
    }
    if !(config.perplexity > 0.0) || (n as f64) <= 3.0 * config.perplexity {
        return Err(Error::Config(alloc::format!(
            "t-SNE needs more than 3 x perplexity ({}) points, got {n}",
            config.perplexity
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite features".into()));
    }
    let dist = squared_distances(features, n, dim);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }
    let cond = conditional_affinities(&dist, n, config.perplexity);
    let mut p = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = alloc::vec![0.0; 2 * n];
    let mut gains = alloc::vec![1.0f64; 2 * n];
    let lr = config.learning_rate.unwrap_or(n as f64 / 12.0);
    let mut num = alloc::vec![0.0; n * n];
    let mut grad = alloc::vec![0.0; 2 * n];
    let mut kl_history = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iterations;
        let exag = if exaggerate { config.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut num_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                num_sum += 2.0 * q;
            }
        }
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exag * p[i * n + j] - q / num_sum) * q;
                gx += m * (y[2 * i] - y[2 * j]);
                gy += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            let g = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                gains[k] * 0.8
            };
            gains[k] = g.max(0.01);
            update[k] = momentum * update[k] - lr * gains[k] * grad[k];
            y[k] += update[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        for i in 0..n {
            y[2 * i] -= mx / n as f64;
            y[2 * i + 1] -= my / n as f64;
        }
        kl_history.push(kl_divergence(&p, &num, num_sum));
    }
    // KL of the final positions
    let mut num_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                num_sum += num[i * n + j];
            }
        }
    }
    let kl = kl_divergence(&p, &num, num_sum);
    let points: Vec<[f64; 2]> = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Degenerate("t-SNE produced non-finite coordinates".into()));
    }
    Ok(Embedding2D {
        points,
        labels,
        kl,
        kl_history,
    })
}
