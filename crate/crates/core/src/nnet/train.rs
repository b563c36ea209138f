use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::Mode;
use super::model::{CompactCnn, ModelConfig};
use super::{Real, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Full passes over the training set.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Fraction of windows held out for a per-epoch validation loss.
    pub val_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            val_split: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::Config(alloc::format!("val_split {} outside [0, 1)", self.val_split)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Labeled windows, `inputs` laid out `(n, C, T)` row-major and `labels`
/// holding class indices in `0..N`.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a, T> {
    pub inputs: &'a [T],
    pub labels: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: CompactCnn<T>,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation loss per epoch; empty without a validation split.
    pub val_curve: Vec<f64>,
}

fn gather<T: Real>(set: &TrainSet<'_, T>, idx: &[usize], per: usize, c: usize, t: usize) -> Result<(Tensor4<T>, Vec<usize>)> {
    let mut data = Vec::with_capacity(idx.len() * per);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&set.inputs[i * per..(i + 1) * per]);
        labels.push(set.labels[i]);
    }
    Ok((Tensor4::from_vec([idx.len(), 1, c, t], data)?, labels))
}

/// Trains a freshly initialized network. Weights come from `config.seed`;
/// batch order and dropout masks from a separate stream of the same seed.
pub fn train<T: Real>(model_config: &ModelConfig, config: &TrainConfig, set: TrainSet<'_, T>) -> Result<TrainOutcome<T>> {
    train_with(model_config, config, set, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, loss)` after every epoch.
pub fn train_with<T: Real>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    set: TrainSet<'_, T>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    model_config.validate()?;
    let (c, t) = (model_config.channels, model_config.samples);
    let per = c * t;
    let n = set.labels.len();
    if set.inputs.len() != n * per {
        return Err(Error::Shape(alloc::format!(
            "{} input values for {n} windows of {c} x {t}",
            set.inputs.len()
        )));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= model_config.classes) {
        return Err(Error::UnknownClass(bad));
    }
    let mut model = CompactCnn::<T>::new(model_config.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..n).collect();
    let n_val = libm::floor(config.val_split * n as f64) as usize;
    let val_idx = if n_val > 0 {
        order.shuffle(&mut rng);
        order.drain(..n_val).collect()
    } else {
        Vec::new()
    };
    if order.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let mut adam = AdamState::for_model(config.adam, &model.params);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (x, y) = gather(&set, batch, per, c, t)?;
            let cache = model.forward(&x, Mode::Train, &mut rng)?;
            let (loss, grads) = match model.backward(&x, &cache, &y) {
                Ok(r) => r,
                Err(Error::Degenerate(_)) => return Err(Error::Divergence { epoch }),
                Err(e) => return Err(e),
            };
            model.update_running_stats(&cache);
            adam_step(&mut model.params, &grads, &mut adam)?;
            total += loss.f64() * batch.len() as f64;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() || !model.params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_curve.push(mean);
        if !val_idx.is_empty() {
            let (x, y) = gather(&set, &val_idx, per, c, t)?;
            let p = model.predict(&x)?;
            let k = model_config.classes;
            let v: f64 = y
                .iter()
                .enumerate()
                .map(|(i, &l)| -libm::log(p.probabilities[i * k + l].f64().max(1e-12)))
                .sum::<f64>()
                / y.len() as f64;
            val_curve.push(v);
        }
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        val_curve,
    })
}
