//! Whole-dataset preprocessing: band-pass, decimate, cut into segments.

use rayon::prelude::*;
use ssvep_core::dataset::{Dataset, Trial};
use ssvep_core::signal::Preprocessor;
use ssvep_core::{Error, Result};

use crate::config::SignalConfig;

/// True when trials are already one segment long at the decimated rate.
pub fn looks_preprocessed(ds: &Dataset, signal: &SignalConfig) -> bool {
    ds.layout()
        .is_some_and(|(_, t, fs)| (signal.segment_seconds * fs - t as f64).abs() < 1e-9)
}

/// Filters, decimates and segments every trial. Output trials keep their
/// parent's labels and carry their 0-based segment index; order is parent
/// order, then segment order.
pub fn preprocess(ds: &Dataset, signal: &SignalConfig) -> Result<Dataset> {
    ds.validate()?;
    let Some((_, t, fs)) = ds.layout() else {
        return Ok(ds.clone());
    };
    if signal.decimation == 0 {
        return Err(Error::ZeroFactor);
    }
    let epoch = signal.epoch(t as f64 / fs, fs);
    let chain = Preprocessor::new(&signal.filter(fs), signal.decimation, epoch)?;
    let per_trial: Vec<Vec<Trial>> = ds
        .trials
        .par_iter()
        .map(|tr| {
            let segs = chain.apply(&tr.matrix())?;
            Ok(segs
                .into_iter()
                .map(|s| Trial::from_matrix(&s.data, tr.subject, tr.class_id, tr.block, s.index, epoch.sample_rate_hz))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        trials: per_trial.into_iter().flatten().collect(),
        channel_names: ds.channel_names.clone(),
        stimulus: ds.stimulus.clone(),
        provenance: format!(
            "{}; band-pass {}-{} Hz order {} zero-phase, decimated by {}, {} s segments",
            ds.provenance,
            signal.low_cut_hz,
            signal.high_cut_hz,
            signal.order,
            signal.decimation,
            signal.segment_seconds
        ),
    })
}
