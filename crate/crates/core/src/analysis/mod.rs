//! Inspection of trained networks and of the data itself: temporal kernel
//! spectra, embeddings of hidden activations, and per-segment phase.

pub mod cluster;
pub mod phase;
pub mod spectrum;
pub mod tsne;

use alloc::vec::Vec;

pub use cluster::{cluster_agreement, hungarian, kmeans, KMeans};
pub use phase::{
    circular_mean, estimate_phase_amplitude, phase_estimates, phase_step, segment_phase_report, wrap_degrees, PhaseAmp,
    PhaseCell,
};
pub use spectrum::{kernel_spectrum, KernelSpectrum};
pub use tsne::{conditional_affinities, tsne, Embedding2D, PointLabel, TsneConfig};

use crate::dataset::Trial;
use crate::error::{Error, Result};
use crate::nnet::{CompactCnn, Real, Tensor4};

/// Spectrum of every first-layer temporal kernel, in filter order.
pub fn temporal_kernel_spectra<T: Real>(model: &CompactCnn<T>, sample_rate_hz: f64) -> Vec<KernelSpectrum> {
    let k = model.config.temporal_kernel_len;
    model
        .params
        .conv1
        .data()
        .chunks(k)
        .map(|row| {
            let taps: Vec<f64> = row.iter().map(|v| v.f64()).collect();
            kernel_spectrum(&taps, sample_rate_hz)
        })
        .collect()
}

/// Packs trials into a `(n, 1, C, T)` network input.
pub fn trials_to_input<T: Real>(trials: &[&Trial]) -> Result<Tensor4<T>> {
    let Some(first) = trials.first() else {
        return Err(Error::Shape("no trials".into()));
    };
    let (c, t) = (first.channels, first.samples);
    let mut data = Vec::with_capacity(trials.len() * c * t);
    for tr in trials {
        if tr.channels != c || tr.samples != t {
            return Err(Error::Shape("trials differ in shape".into()));
        }
        data.extend(tr.data.iter().map(|&v| T::of(f64::from(v))));
    }
    Tensor4::from_vec([trials.len(), 1, c, t], data)
}

/// Hidden activations of `layer` for each trial, as `(width, row-major f64)`,
/// together with the identity of each row.
pub fn extract_activations<T: Real>(
    model: &CompactCnn<T>,
    trials: &[&Trial],
    layer: usize,
) -> Result<(usize, Vec<f64>, Vec<PointLabel>)> {
    let x = trials_to_input::<T>(trials)?;
    let (width, values) = model.activations(&x, layer)?;
    let labels = trials
        .iter()
        .map(|t| PointLabel {
            class_id: t.class_id,
            subject: t.subject,
            block: t.block,
            segment: t.segment,
        })
        .collect();
    Ok((width, values.into_iter().map(|v| v.f64()).collect(), labels))
}
