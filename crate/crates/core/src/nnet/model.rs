use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block1::{self, Block1Cache};
use super::layers::{
    avgpool_time, avgpool_time_backward, batchnorm, batchnorm_backward, cross_entropy,
    cross_entropy_grad, dense_softmax, dense_softmax_backward, dropout, dropout_backward, elu,
    elu_backward, separable_conv, separable_conv_backward, BatchNorm, BnCache, Mode,
};
use super::{Real, Tensor4};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub f1: usize,
    pub f2: usize,
    pub depth: usize,
    pub temporal_kernel_len: usize,
    pub separable_kernel_len: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference(8, 256, 12)
    }
}

impl ModelConfig {
    /// 96 temporal and separable filters, depth 1, kernels 256 and 16.
    pub fn reference(channels: usize, samples: usize, classes: usize) -> Self {
        Self {
            channels,
            samples,
            classes,
            f1: 96,
            f2: 96,
            depth: 1,
            temporal_kernel_len: 256,
            separable_kernel_len: 16,
            pool1: 4,
            pool2: 8,
            dropout_rate: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("channels", self.channels),
            ("samples", self.samples),
            ("classes", self.classes),
            ("f1", self.f1),
            ("f2", self.f2),
            ("depth", self.depth),
            ("temporal_kernel_len", self.temporal_kernel_len),
            ("separable_kernel_len", self.separable_kernel_len),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(alloc::format!("model {name} must be positive")));
            }
        }
        if !self.samples.is_multiple_of(self.pool1 * self.pool2) {
            return Err(Error::Config(alloc::format!(
                "samples {} not divisible by pooling {}",
                self.samples,
                self.pool1 * self.pool2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(alloc::format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch norm epsilon must be positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of spatial filters, `D * F1`.
    pub fn spatial_filters(&self) -> usize {
        self.depth * self.f1
    }

    /// Width of the flattened feature vector, `F2 * T / (pool1 * pool2)`.
    pub fn flat_len(&self) -> usize {
        self.f2 * self.samples / (self.pool1 * self.pool2)
    }

    pub fn param_counts(&self) -> ParamCounts {
        let j = self.spatial_filters();
        ParamCounts {
            conv1: self.temporal_kernel_len * self.f1,
            bn1: 2 * self.f1,
            depthwise: self.channels * j,
            bn2: 2 * j,
            separable: self.separable_kernel_len * j + self.f2 * j,
            bn3: 2 * self.f2,
            dense: self.classes * self.flat_len(),
        }
    }

    /// Output shape after every layer, excluding the batch axis.
    pub fn shape_chain(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (c, t, j, f2) = (self.channels, self.samples, self.spatial_filters(), self.f2);
        let t4 = t / self.pool1;
        let t32 = t4 / self.pool2;
        alloc::vec![
            ("input", alloc::vec![c, t]),
            ("reshape", alloc::vec![1, c, t]),
            ("conv2d", alloc::vec![self.f1, c, t]),
            ("batchnorm", alloc::vec![self.f1, c, t]),
            ("depthwise_conv2d", alloc::vec![j, 1, t]),
            ("batchnorm", alloc::vec![j, 1, t]),
            ("elu", alloc::vec![j, 1, t]),
            ("average_pool2d", alloc::vec![j, 1, t4]),
            ("dropout", alloc::vec![j, 1, t4]),
            ("separable_conv2d", alloc::vec![f2, 1, t4]),
            ("batchnorm", alloc::vec![f2, 1, t4]),
            ("elu", alloc::vec![f2, 1, t4]),
            ("average_pool2d", alloc::vec![f2, 1, t32]),
            ("dropout", alloc::vec![f2, 1, t32]),
            ("flatten", alloc::vec![f2 * t32]),
            ("dense", alloc::vec![self.classes]),
        ]
    }
}

/// Trainable parameter counts per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub conv1: usize,
    pub bn1: usize,
    pub depthwise: usize,
    pub bn2: usize,
    pub separable: usize,
    pub bn3: usize,
    pub dense: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.conv1 + self.bn1 + self.depthwise + self.bn2 + self.separable + self.bn3 + self.dense
    }
}

/// Names of the trainable tensors, in the order used by [`Gradients`] and
/// the optimizer.
pub const TRAINABLE_NAMES: [&str; 11] = [
    "conv1",
    "bn1.gamma",
    "bn1.beta",
    "depthwise",
    "bn2.gamma",
    "bn2.beta",
    "separable.depthwise",
    "separable.pointwise",
    "bn3.gamma",
    "bn3.beta",
    "dense",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// `(F1, 1, 1, K)`
    pub conv1: Tensor4<T>,
    pub bn1: BatchNorm<T>,
    /// `(D*F1, 1, C, 1)`
    pub depthwise: Tensor4<T>,
    pub bn2: BatchNorm<T>,
    /// `(D*F1, 1, 1, K2)`
    pub sep_depth: Tensor4<T>,
    /// `(F2, D*F1, 1, 1)`
    pub sep_point: Tensor4<T>,
    pub bn3: BatchNorm<T>,
    /// `(N, 1, 1, F2*T/32)`
    pub dense: Tensor4<T>,
}

impl<T: Real> ModelParams<T> {
    /// Uniform weights in `+-1/sqrt(fan_in)`, unit batch-norm scale, and the
    /// depthwise rows projected to norm at most 1.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let j = config.spatial_filters();
        let mut uniform = |shape: [usize; 4], fan_in: usize| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            Tensor4::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
        };
        let conv1 = uniform([config.f1, 1, 1, config.temporal_kernel_len], config.temporal_kernel_len);
        let depthwise = uniform([j, 1, config.channels, 1], config.channels);
        let sep_depth = uniform([j, 1, 1, config.separable_kernel_len], config.separable_kernel_len);
        let sep_point = uniform([config.f2, j, 1, 1], j);
        let dense = uniform([config.classes, 1, 1, config.flat_len()], config.flat_len());
        let mut params = Self {
            conv1,
            bn1: BatchNorm::new(config.f1),
            depthwise,
            bn2: BatchNorm::new(j),
            sep_depth,
            sep_point,
            bn3: BatchNorm::new(config.f2),
            dense,
        };
        params.apply_max_norm(1.0);
        Ok(params)
    }

    /// Rescales every spatial filter whose L2 norm exceeds `limit`.
    pub fn apply_max_norm(&mut self, limit: f64) {
        let c = self.depthwise.shape()[2];
        for row in self.depthwise.data_mut().chunks_exact_mut(c) {
            let norm = libm::sqrt(row.iter().map(|v| v.f64() * v.f64()).sum::<f64>());
            if norm > limit {
                let s = T::of(limit / norm);
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
        }
    }

    /// Largest spatial-filter norm.
    pub fn max_spatial_norm(&self) -> f64 {
        let c = self.depthwise.shape()[2];
        self.depthwise
            .data()
            .chunks_exact(c)
            .map(|row| libm::sqrt(row.iter().map(|v| v.f64() * v.f64()).sum::<f64>()))
            .fold(0.0, f64::max)
    }

    pub fn trainable(&self) -> [&[T]; 11] {
        [
            self.conv1.data(),
            &self.bn1.gamma,
            &self.bn1.beta,
            self.depthwise.data(),
            &self.bn2.gamma,
            &self.bn2.beta,
            self.sep_depth.data(),
            self.sep_point.data(),
            &self.bn3.gamma,
            &self.bn3.beta,
            self.dense.data(),
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut [T]; 11] {
        [
            self.conv1.data_mut(),
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            self.depthwise.data_mut(),
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            self.sep_depth.data_mut(),
            self.sep_point.data_mut(),
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
            self.dense.data_mut(),
        ]
    }

    /// Every stored tensor including running statistics, in declaration order.
    pub fn state(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        out.push(("conv1".into(), self.conv1.data()));
        push_bn(&mut out, "bn1", &self.bn1);
        out.push(("depthwise".into(), self.depthwise.data()));
        push_bn(&mut out, "bn2", &self.bn2);
        out.push(("separable.depthwise".into(), self.sep_depth.data()));
        out.push(("separable.pointwise".into(), self.sep_point.data()));
        push_bn(&mut out, "bn3", &self.bn3);
        out.push(("dense".into(), self.dense.data()));
        out
    }

    /// Mutable view matching [`ModelParams::state`].
    pub fn state_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.conv1.data_mut());
        push_bn_mut(&mut out, &mut self.bn1);
        out.push(self.depthwise.data_mut());
        push_bn_mut(&mut out, &mut self.bn2);
        out.push(self.sep_depth.data_mut());
        out.push(self.sep_point.data_mut());
        push_bn_mut(&mut out, &mut self.bn3);
        out.push(self.dense.data_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.state().iter().all(|(_, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Element-wise cast, e.g. to `f64` for gradient checks.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let t = |x: &Tensor4<T>| x.data().iter().map(|v| U::of(v.f64())).collect::<Vec<U>>();
        let tensor = |x: &Tensor4<T>| Tensor4::from_vec(x.shape(), t(x)).expect("same shape");
        let v = |x: &[T]| x.iter().map(|e| U::of(e.f64())).collect::<Vec<U>>();
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: v(&b.gamma),
            beta: v(&b.beta),
            running_mean: v(&b.running_mean),
            running_var: v(&b.running_var),
        };
        ModelParams {
            conv1: tensor(&self.conv1),
            bn1: bn(&self.bn1),
            depthwise: tensor(&self.depthwise),
            bn2: bn(&self.bn2),
            sep_depth: tensor(&self.sep_depth),
            sep_point: tensor(&self.sep_point),
            bn3: bn(&self.bn3),
            dense: tensor(&self.dense),
        }
    }
}

fn push_bn<'a, T: Real>(out: &mut Vec<(String, &'a [T])>, name: &str, bn: &'a BatchNorm<T>) {
    out.push((alloc::format!("{name}.gamma"), &bn.gamma));
    out.push((alloc::format!("{name}.beta"), &bn.beta));
    out.push((alloc::format!("{name}.running_mean"), &bn.running_mean));
    out.push((alloc::format!("{name}.running_var"), &bn.running_var));
}

fn push_bn_mut<'a, T: Real>(out: &mut Vec<&'a mut [T]>, bn: &'a mut BatchNorm<T>) {
    out.push(&mut bn.gamma);
    out.push(&mut bn.beta);
    out.push(&mut bn.running_mean);
    out.push(&mut bn.running_var);
}

/// Gradient per trainable tensor, in [`TRAINABLE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: [Vec<T>; 11],
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        TRAINABLE_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|e| e.is_finite()))
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    block1: Block1Cache<T>,
    a2: Tensor4<T>,
    bn2: Option<BnCache<T>>,
    mask1: Option<Vec<T>>,
    d1: Tensor4<T>,
    a3: Tensor4<T>,
    bn3: Option<BnCache<T>>,
    p2_shape: [usize; 4],
    mask2: Option<Vec<T>>,
    flat: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.d1.shape()[0]
    }
}

/// Class probabilities (`n x N`, row-major) and argmax class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub probabilities: Vec<T>,
    pub labels: Vec<usize>,
}

const PREDICT_CHUNK: usize = 64;

/// The network: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCnn<T = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> CompactCnn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let fresh = ModelParams::<T>::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let want: Vec<usize> = fresh.state().iter().map(|(_, d)| d.len()).collect();
        let got: Vec<usize> = params.state().iter().map(|(_, d)| d.len()).collect();
        if want != got {
            return Err(Error::Shape("parameters do not match the model configuration".into()));
        }
        Ok(Self { config, params })
    }

    fn input_shape(&self, x: &Tensor4<T>) -> Result<()> {
        let [_, one, c, t] = x.shape();
        if one != 1 || c != self.config.channels || t != self.config.samples {
            return Err(Error::Shape(alloc::format!(
                "model expects (n, 1, {}, {}), got {:?}",
                self.config.channels,
                self.config.samples,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Full forward pass. Train mode uses batch statistics and draws dropout
    /// masks from `rng`; infer mode ignores `rng`.
    pub fn forward(&self, x: &Tensor4<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<ForwardCache<T>> {
        self.input_shape(x)?;
        let cfg = &self.config;
        let p = &self.params;
        let eps = cfg.bn_epsilon;
        let (z1, block1) = block1::forward(x, &p.conv1, &p.bn1, &p.depthwise, mode, eps)?;
        let (a2, bn2) = batchnorm(&z1, &p.bn2, mode, eps)?;
        let p1 = avgpool_time(&elu(&a2), cfg.pool1)?;
        let (d1, mask1) = dropout(&p1, cfg.dropout_rate, mode, rng)?;
        let s = separable_conv(&d1, &p.sep_depth, &p.sep_point)?;
        let (a3, bn3) = batchnorm(&s, &p.bn3, mode, eps)?;
        let p2 = avgpool_time(&elu(&a3), cfg.pool2)?;
        let p2_shape = p2.shape();
        let (d2, mask2) = dropout(&p2, cfg.dropout_rate, mode, rng)?;
        let n = x.shape()[0];
        let flat = d2.into_vec();
        let (_, probs) = dense_softmax(&flat, p.dense.data(), n, cfg.classes)?;
        Ok(ForwardCache {
            block1,
            a2,
            bn2,
            mask1,
            d1,
            a3,
            bn3,
            p2_shape,
            mask2,
            flat,
            probs,
        })
    }

    /// Mean cross-entropy of a cached forward pass against class indices.
    pub fn loss(&self, cache: &ForwardCache<T>, targets: &[usize]) -> Result<T> {
        let t = self.one_hot(targets, cache.rows())?;
        Ok(cross_entropy(&cache.probs, &t, self.config.classes))
    }

    fn one_hot(&self, targets: &[usize], rows: usize) -> Result<Vec<T>> {
        let classes = self.config.classes;
        if targets.len() != rows {
            return Err(Error::Shape(alloc::format!("{} targets for {rows} rows", targets.len())));
        }
        let mut t = alloc::vec![T::zero(); rows * classes];
        for (i, &k) in targets.iter().enumerate() {
            if k >= classes {
                return Err(Error::UnknownClass(k));
            }
            t[i * classes + k] = T::one();
        }
        Ok(t)
    }

    /// Loss and gradients for a train-mode forward pass over `x`.
    pub fn backward(&self, x: &Tensor4<T>, cache: &ForwardCache<T>, targets: &[usize]) -> Result<(T, Gradients<T>)> {
        let cfg = &self.config;
        let p = &self.params;
        let n = cache.rows();
        let (Some(bn2), Some(bn3)) = (&cache.bn2, &cache.bn3) else {
            return Err(Error::Config("backward needs a train-mode forward pass".into()));
        };
        let t = self.one_hot(targets, n)?;
        let loss = cross_entropy(&cache.probs, &t, cfg.classes);
        let dlogits = cross_entropy_grad(&cache.probs, &t, n);
        let (dflat, ddense) = dense_softmax_backward(&cache.flat, p.dense.data(), &dlogits, n, cfg.classes);
        let dd2 = Tensor4::from_vec(cache.p2_shape, dflat)?;
        let dp2 = dropout_backward(&dd2, cache.mask2.as_deref());
        let de3 = avgpool_time_backward(&dp2, cfg.pool2);
        let da3 = elu_backward(&cache.a3, &de3);
        let (ds, dg3, db3) = batchnorm_backward(&da3, bn3, &p.bn3.gamma)?;
        let (dd1, dsd, dsp) = separable_conv_backward(&cache.d1, &p.sep_depth, &p.sep_point, &ds)?;
        let dp1 = dropout_backward(&dd1, cache.mask1.as_deref());
        let de2 = avgpool_time_backward(&dp1, cfg.pool1);
        let da2 = elu_backward(&cache.a2, &de2);
        let (dz1, dg2, db2) = batchnorm_backward(&da2, bn2, &p.bn2.gamma)?;
        let b1 = block1::backward(x, &p.conv1, &p.bn1, &p.depthwise, &cache.block1, &dz1)?;
        let grads = Gradients {
            values: [
                b1.conv1,
                b1.gamma,
                b1.beta,
                b1.depthwise,
                dg2,
                db2,
                dsd.into_vec(),
                dsp.into_vec(),
                dg3,
                db3,
                ddense,
            ],
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Degenerate("non-finite loss or gradient".into()));
        }
        Ok((loss, grads))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let m = self.config.bn_momentum;
        let p = &mut self.params;
        p.bn1.update_running(&cache.block1.mean, &cache.block1.var, m);
        if let Some(c) = &cache.bn2 {
            p.bn2.update_running(&c.mean, &c.var, m);
        }
        if let Some(c) = &cache.bn3 {
            p.bn3.update_running(&c.mean, &c.var, m);
        }
    }

    fn infer(&self, x: &Tensor4<T>) -> Result<ForwardCache<T>> {
        // dropout is the identity in infer mode and never touches the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(x, Mode::Infer, &mut rng)
    }

    fn chunks(&self, x: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        self.input_shape(x)?;
        let [n, _, c, t] = x.shape();
        let per = c * t;
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            out.push(Tensor4::from_vec([end - start, 1, c, t], x.data()[start * per..end * per].to_vec())?);
            start = end;
        }
        Ok(out)
    }

    /// Inference-mode probabilities and argmax class indices.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Prediction<T>> {
        let classes = self.config.classes;
        let mut probabilities = Vec::with_capacity(x.shape()[0] * classes);
        for chunk in self.chunks(x)? {
            probabilities.extend(self.infer(&chunk)?.probs);
        }
        let labels = probabilities
            .chunks_exact(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect();
        Ok(Prediction { probabilities, labels })
    }

    /// Inference-mode hidden activations, one row per input window.
    /// Layer 1 is the output of the first block, layer 2 the output of the
    /// second block and layer 3 the flattened features feeding the dense layer.
    /// Returns `(width, row-major values)`.
    pub fn activations(&self, x: &Tensor4<T>, layer: usize) -> Result<(usize, Vec<T>)> {
        if !(1..=3).contains(&layer) {
            return Err(Error::InvalidLayer(layer));
        }
        let mut out = Vec::new();
        let mut width = 0;
        for chunk in self.chunks(x)? {
            let cache = self.infer(&chunk)?;
            let n = cache.rows();
            match layer {
                1 => {
                    width = cache.d1.len() / n;
                    out.extend_from_slice(cache.d1.data());
                }
                _ => {
                    width = cache.flat.len() / n;
                    out.extend_from_slice(&cache.flat);
                }
            }
        }
        if width == 0 {
            width = match layer {
                1 => self.config.spatial_filters() * self.config.samples / self.config.pool1,
                _ => self.config.flat_len(),
            };
        }
        Ok((width, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 2,
            samples: 32,
            classes: 3,
            f1: 2,
            f2: 2,
            depth: 1,
            temporal_kernel_len: 8,
            separable_kernel_len: 4,
            pool1: 4,
            pool2: 8,
            dropout_rate: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    fn input(n: usize, cfg: &ModelConfig, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn([n, 1, cfg.channels, cfg.samples], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn reference_parameter_counts() {
        let c = ModelConfig::reference(8, 256, 12).param_counts();
        assert_eq!(
            [c.conv1, c.bn1, c.depthwise, c.bn2, c.separable, c.bn3, c.dense],
            [24576, 192, 768, 192, 10752, 192, 9216]
        );
        assert_eq!(c.total(), 45888);
        let model = CompactCnn::<f32>::new(ModelConfig::reference(8, 256, 12), 0).unwrap();
        let stored: usize = model.params.trainable().iter().map(|t| t.len()).sum();
        assert_eq!(stored, 45888);
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny();
        c.samples = 33;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.f1 = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_respects_max_norm() {
        let mut cfg = tiny();
        cfg.channels = 1;
        let model = CompactCnn::<f64>::new(cfg, 3).unwrap();
        assert!(model.params.max_spatial_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_input_and_weights_give_zero_conv_gradients() {
        let cfg = tiny();
        let mut model = CompactCnn::<f64>::new(cfg.clone(), 1).unwrap();
        for t in model.params.trainable_mut() {
            t.fill(0.0);
        }
        let x = Tensor4::zeros([4, 1, cfg.channels, cfg.samples]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cache = model.forward(&x, Mode::Train, &mut rng).unwrap();
        let (loss, g) = model.backward(&x, &cache, &[0, 1, 2, 0]).unwrap();
        assert!((loss - libm::log(3.0)).abs() < 1e-12);
        for name in ["conv1", "depthwise", "separable.depthwise", "separable.pointwise"] {
            assert!(g.get(name).unwrap().iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn zero_dense_predicts_uniform() {
        let cfg = tiny();
        let mut model = CompactCnn::<f64>::new(cfg.clone(), 4).unwrap();
        model.params.dense.data_mut().fill(0.0);
        let p = model.predict(&input(5, &cfg, 5)).unwrap();
        assert!(p.probabilities.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn predictions_ignore_batch_order() {
        let cfg = tiny();
        let model = CompactCnn::<f64>::new(cfg.clone(), 6).unwrap();
        let x = input(70, &cfg, 7);
        let per = cfg.channels * cfg.samples;
        let mut rev = Vec::new();
        for i in (0..70).rev() {
            rev.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
        }
        let xr = Tensor4::from_vec(x.shape(), rev).unwrap();
        let a = model.predict(&x).unwrap();
        let b = model.predict(&xr).unwrap();
        for i in 0..70 {
            assert_eq!(a.labels[i], b.labels[69 - i]);
            assert_eq!(&a.probabilities[i * 3..i * 3 + 3], &b.probabilities[(69 - i) * 3..(69 - i) * 3 + 3]);
        }
        for row in a.probabilities.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn activation_widths() {
        let cfg = ModelConfig::reference(8, 256, 12);
        let model = CompactCnn::<f32>::new(cfg.clone(), 0).unwrap();
        let x = Tensor4::from_fn([2, 1, 8, 256], |[_, _, c, t]| libm::sinf((c * 7 + t) as f32 * 0.1));
        let (w1, a1) = model.activations(&x, 1).unwrap();
        assert_eq!(w1, 6144);
        assert_eq!(a1.len(), 2 * 6144);
        let (w3, a3) = model.activations(&x, 3).unwrap();
        assert_eq!(w3, 768);
        assert_eq!(a3.len(), 2 * 768);
        assert!(matches!(model.activations(&x, 4), Err(Error::InvalidLayer(4))));
        let mut dup = x.data()[..2048].to_vec();
        dup.extend_from_slice(&x.data()[..2048]);
        let xd = Tensor4::from_vec([2, 1, 8, 256], dup).unwrap();
        let (_, ad) = model.activations(&xd, 3).unwrap();
        assert_eq!(&ad[..768], &ad[768..]);
    }

    #[test]
    fn shape_chain_matches_layers() {
        let cfg = ModelConfig::reference(8, 256, 12);
        let chain = cfg.shape_chain();
        assert_eq!(chain[2].1, alloc::vec![96, 8, 256]);
        assert_eq!(chain[7].1, alloc::vec![96, 1, 64]);
        assert_eq!(chain[12].1, alloc::vec![96, 1, 8]);
        assert_eq!(chain[14].1, alloc::vec![768]);
        assert_eq!(chain[15].1, alloc::vec![12]);
    }

    #[test]
    fn running_stats_change_only_on_update() {
        let cfg = tiny();
        let mut model = CompactCnn::<f64>::new(cfg.clone(), 8).unwrap();
        let x = input(6, &cfg, 9).map(|v| v * 3.0 + 1.0);
        let before = model.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cache = model.forward(&x, Mode::Train, &mut rng).unwrap();
        assert_eq!(model.params, before);
        model.update_running_stats(&cache);
        assert_ne!(model.params.bn1.running_mean, before.bn1.running_mean);
        assert_ne!(model.params.bn3.running_var, before.bn3.running_var);
    }
}
