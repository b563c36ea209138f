//! Plot-ready CSV files for the analysis suite.

use std::path::Path;

use ssvep_core::analysis::{
    extract_activations, segment_phase_report, temporal_kernel_spectra, tsne, Embedding2D, PhaseCell, TsneConfig,
};
use ssvep_core::dataset::{Dataset, Trial};
use ssvep_core::nnet::CompactCnn;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error(transparent)]
    Core(#[from] ssvep_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `kernel,frequency_hz,power` for every first-layer temporal kernel.
pub fn write_kernel_spectra(model: &CompactCnn<f32>, sample_rate_hz: f64, path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kernel", "frequency_hz", "power"])?;
    for (k, s) in temporal_kernel_spectra(model, sample_rate_hz).iter().enumerate() {
        for (f, p) in s.frequencies_hz.iter().zip(&s.power) {
            w.write_record([k.to_string(), f.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Embeds hidden activations of `layer` for `trials`.
pub fn embed(
    model: &CompactCnn<f32>,
    trials: &[&Trial],
    layer: usize,
    config: &TsneConfig,
) -> Result<Embedding2D, OutputError> {
    let (width, values, labels) = extract_activations(model, trials, layer)?;
    Ok(tsne(&values, width, labels, config)?)
}

/// `x,y,class_id,subject,block,segment`, one row per point.
pub fn write_tsne_points(e: &Embedding2D, path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "class_id", "subject", "block", "segment"])?;
    for (p, l) in e.points.iter().zip(&e.labels) {
        w.write_record([
            p[0].to_string(),
            p[1].to_string(),
            l.class_id.to_string(),
            l.subject.to_string(),
            l.block.to_string(),
            l.segment.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per class, channel and segment index: circular mean phase and mean
/// amplitude. Missing values are empty fields.
pub fn write_phase_report(ds: &Dataset, path: &Path) -> Result<Vec<PhaseCell>, OutputError> {
    let cells = segment_phase_report(ds)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "class_id",
        "frequency_hz",
        "channel",
        "segment",
        "count",
        "mean_phase_deg",
        "resultant_length",
        "mean_amplitude",
        "amplitude_sem",
    ])?;
    for c in &cells {
        w.write_record([
            c.class_id.to_string(),
            c.frequency_hz.to_string(),
            c.channel.to_string(),
            c.segment.to_string(),
            c.count.to_string(),
            opt(c.mean_phase_deg),
            opt(c.resultant_length),
            opt(c.mean_amplitude),
            opt(c.amplitude_sem),
        ])?;
    }
    w.flush()?;
    Ok(cells)
}
