use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<f64>,
    pub inertia: f64,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(x: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&x[first * dim..(first + 1) * dim]);
    let mut best: Vec<f64> = (0..n).map(|i| sq(&x[i * dim..(i + 1) * dim], &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if r < b {
                    idx = i;
                    break;
                }
                r -= b;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = centroids.len();
        centroids.extend_from_slice(&x[pick * dim..(pick + 1) * dim]);
        for i in 0..n {
            best[i] = best[i].min(sq(&x[i * dim..(i + 1) * dim], &centroids[c..c + dim]));
        }
    }

    let mut labels = alloc::vec![0usize; n];
    for iter in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let xi = &x[i * dim..(i + 1) * dim];
            let mut arg = 0;
            let mut dmin = f64::INFINITY;
            for c in 0..k {
                let d = sq(xi, &centroids[c * dim..(c + 1) * dim]);
                if d < dmin {
                    dmin = d;
                    arg = c;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = alloc::vec![0.0; k * dim];
        let mut counts = alloc::vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for t in 0..dim {
                sums[labels[i] * dim + t] += x[i * dim + t];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move an empty centroid onto the point farthest from its own
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq(&x[a * dim..(a + 1) * dim], &centroids[labels[a] * dim..(labels[a] + 1) * dim]);
                        let db = sq(&x[b * dim..(b + 1) * dim], &centroids[labels[b] * dim..(labels[b] + 1) * dim]);
                        da.partial_cmp(&db).unwrap_or(core::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&x[far * dim..(far + 1) * dim]);
            } else {
                for t in 0..dim {
                    centroids[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sq(&x[i * dim..(i + 1) * dim], &centroids[labels[i] * dim..(labels[i] + 1) * dim]))
        .sum();
    KMeans { labels, centroids, inertia }
}

/// Lloyd's k-means with k-means++ seeding; the lowest-inertia of `restarts`
/// runs is kept.
pub fn kmeans(x: &[f64], dim: usize, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(Error::Shape("points are not rows x dim".into()));
    }
    let n = x.len() / dim;
    if k == 0 || k > n {
        return Err(Error::Config(alloc::format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(x, n, dim, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Minimum-cost perfect assignment of an `n x n` cost matrix (rows to
/// columns). Returns `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // potentials formulation, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = alloc::vec![0.0; n + 1];
    let mut v = alloc::vec![0.0; n + 1];
    let mut p = alloc::vec![0usize; n + 1];
    let mut way = alloc::vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = alloc::vec![inf; n + 1];
        let mut used = alloc::vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = alloc::vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of points whose cluster maps to their true label under the best
/// one-to-one matching of clusters to labels.
pub fn cluster_agreement(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return 0.0;
    }
    let index = |xs: &[usize]| {
        let mut m = BTreeMap::new();
        for &x in xs {
            let next = m.len();
            m.entry(x).or_insert(next);
        }
        m
    };
    let (pi, ti) = (index(predicted), index(truth));
    let size = pi.len().max(ti.len());
    let mut counts = alloc::vec![0.0; size * size];
    for (p, t) in predicted.iter().zip(truth) {
        counts[pi[p] * size + ti[t]] += 1.0;
    }
    let cost: Vec<f64> = counts.iter().map(|c| -c).collect();
    let assign = hungarian(&cost, size);
    let matched: f64 = (0..size).map(|r| counts[r * size + assign[r]]).sum();
    matched / predicted.len() as f64
}
