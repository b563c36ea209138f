use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Phase and amplitude of one channel of one window at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAmp {
    /// In `[0, 360)`.
    pub phase_deg: f64,
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub channel: usize,
    pub segment: usize,
}

/// Wraps degrees into `[0, 360)`.
pub fn wrap_degrees(d: f64) -> f64 {
    let mut w = libm::fmod(d, 360.0);
    if w < 0.0 {
        w += 360.0;
    }
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Least-squares fit of `a cos(2 pi f t) + b sin(2 pi f t)` over `x`, with
/// `t = n / fs`. The phase is `atan2(-b, a)`, so `cos(2 pi f t + theta)` reports
/// `theta`: a cosine is at 0 degrees and each later start point advances it.
/// Channel and segment are left at 0 for the caller to fill in.
pub fn estimate_phase_amplitude(x: &[f64], frequency_hz: f64, sample_rate_hz: f64) -> Result<PhaseAmp> {
    if !(frequency_hz > 0.0) || frequency_hz >= sample_rate_hz / 2.0 {
        return Err(Error::Config(alloc::format!(
            "frequency {frequency_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            sample_rate_hz / 2.0
        )));
    }
    let (mut cc, mut ss, mut cs, mut xc, mut xs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (n, &v) in x.iter().enumerate() {
        let arg = 2.0 * PI * frequency_hz * n as f64 / sample_rate_hz;
        let (c, s) = (libm::cos(arg), libm::sin(arg));
        cc += c * c;
        ss += s * s;
        cs += c * s;
        xc += v * c;
        xs += v * s;
    }
    let det = cc * ss - cs * cs;
    if !(det > 1e-12 * (cc * ss).max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("window too short to separate sine and cosine".into()));
    }
    let a = (xc * ss - xs * cs) / det;
    let b = (xs * cc - xc * cs) / det;
    Ok(PhaseAmp {
        phase_deg: wrap_degrees(libm::atan2(-b, a).to_degrees()),
        amplitude: libm::sqrt(a * a + b * b),
        frequency_hz,
        channel: 0,
        segment: 0,
    })
}

/// Circular mean direction (degrees) and mean resultant length of angles.
/// The direction is `None` when the resultant vanishes.
pub fn circular_mean(angles_deg: &[f64]) -> (Option<f64>, f64) {
    if angles_deg.is_empty() {
        return (None, 0.0);
    }
    let n = angles_deg.len() as f64;
    let (s, c) = angles_deg.iter().fold((0.0, 0.0), |(s, c), a| {
        let r = a.to_radians();
        (s + libm::sin(r), c + libm::cos(r))
    });
    let r = libm::sqrt(s * s + c * c) / n;
    if r < 1e-9 {
        (None, 0.0)
    } else {
        (Some(wrap_degrees(libm::atan2(s, c).to_degrees())), r.min(1.0))
    }
}

/// Aggregate of one (class, channel, segment) cell. Empty cells and cells with
/// no defined mean direction carry `None` instead of zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub class_id: usize,
    pub frequency_hz: f64,
    pub channel: usize,
    pub segment: usize,
    pub count: usize,
    pub mean_phase_deg: Option<f64>,
    pub resultant_length: Option<f64>,
    pub mean_amplitude: Option<f64>,
    /// Standard error of the mean amplitude; needs two or more windows.
    pub amplitude_sem: Option<f64>,
}

/// Per-window estimates at each window's stimulus frequency, one entry per
/// (trial, channel), alongside the trial's class.
pub fn phase_estimates(ds: &Dataset) -> Result<Vec<(usize, PhaseAmp)>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    for t in &ds.trials {
        let f = ds.stimulus.get(t.class_id)?.frequency_hz;
        for ch in 0..t.channels {
            buf.clear();
            buf.extend(t.row(ch).iter().map(|&v| f64::from(v)));
            let mut pa = estimate_phase_amplitude(&buf, f, t.sample_rate_hz)?;
            pa.channel = ch;
            pa.segment = t.segment;
            out.push((t.class_id, pa));
        }
    }
    Ok(out)
}

/// Circular mean phase and mean amplitude for every class, channel and
/// segment index present in the dataset.
pub fn segment_phase_report(ds: &Dataset) -> Result<Vec<PhaseCell>> {
    let Some((channels, _, _)) = ds.layout() else {
        return Ok(Vec::new());
    };
    let segments: BTreeSet<usize> = ds.trials.iter().map(|t| t.segment).collect();
    let estimates = phase_estimates(ds)?;
    let mut cells = Vec::new();
    for stim in &ds.stimulus.entries {
        for ch in 0..channels {
            for &seg in &segments {
                let hits: Vec<&PhaseAmp> = estimates
                    .iter()
                    .filter(|(c, p)| *c == stim.class_id && p.channel == ch && p.segment == seg)
                    .map(|(_, p)| p)
                    .collect();
                let count = hits.len();
                let mut cell = PhaseCell {
                    class_id: stim.class_id,
                    frequency_hz: stim.frequency_hz,
                    channel: ch,
                    segment: seg,
                    count,
                    mean_phase_deg: None,
                    resultant_length: None,
                    mean_amplitude: None,
                    amplitude_sem: None,
                };
                if count > 0 {
                    let phases: Vec<f64> = hits.iter().map(|p| p.phase_deg).collect();
                    let (mean, r) = circular_mean(&phases);
                    cell.mean_phase_deg = mean;
                    cell.resultant_length = Some(r);
                    let amps: Vec<f64> = hits.iter().map(|p| p.amplitude).collect();
                    let m = amps.iter().sum::<f64>() / count as f64;
                    cell.mean_amplitude = Some(m);
                    if count > 1 {
                        let var = amps.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (count - 1) as f64;
                        cell.amplitude_sem = Some(libm::sqrt(var / count as f64));
                    }
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

/// Circular difference `b - a` in `[0, 360)`.
pub fn phase_step(a_deg: f64, b_deg: f64) -> f64 {
    wrap_degrees(b_deg - a_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{StimulusTable, Trial};
    use nalgebra::DMatrix;

    fn tone(f: f64, phase: f64, start: usize, len: usize) -> Vec<f64> {
        (start..start + len)
            .map(|n| libm::cos(2.0 * PI * f * n as f64 / 256.0 + phase))
            .collect()
    }

    #[test]
    fn convention_anchors() {
        let c = estimate_phase_amplitude(&tone(12.25, 0.0, 0, 256), 12.25, 256.0).unwrap();
        assert!(c.phase_deg < 1e-4 || c.phase_deg > 360.0 - 1e-4);
        assert!((c.amplitude - 1.0).abs() < 1e-6);
        let s = estimate_phase_amplitude(&tone(12.25, -PI / 2.0, 0, 256), 12.25, 256.0).unwrap();
        assert!((s.phase_deg - 270.0).abs() < 1e-4);
        let q = estimate_phase_amplitude(&tone(12.25, PI / 2.0, 0, 256), 12.25, 256.0).unwrap();
        assert!((q.phase_deg - 90.0).abs() < 1e-4);
    }

    #[test]
    fn continuous_tone_advances_a_quarter_turn_per_second() {
        for f in [12.25, 9.25] {
            let phases: Vec<f64> = (0..4)
                .map(|s| estimate_phase_amplitude(&tone(f, 0.4, s * 256, 256), f, 256.0).unwrap().phase_deg)
                .collect();
            for s in 0..3 {
                assert!((phase_step(phases[s], phases[s + 1]) - 90.0).abs() < 0.01, "{f}: {phases:?}");
            }
            assert!((phase_step(phases[0], phases[2]) - 180.0).abs() < 0.01);
        }
    }

    #[test]
    fn amplitude_invariance() {
        let x: Vec<f64> = tone(10.75, 1.1, 0, 256).iter().map(|v| v + 0.01 * libm::sin(*v * 9.0)).collect();
        let a = estimate_phase_amplitude(&x, 10.75, 256.0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v).collect();
        let b = estimate_phase_amplitude(&y, 10.75, 256.0).unwrap();
        assert!((a.phase_deg - b.phase_deg).abs() < 1e-9);
        assert!((b.amplitude - 3.5 * a.amplitude).abs() < 1e-9);
    }

    #[test]
    fn nyquist_is_rejected() {
        assert!(estimate_phase_amplitude(&[0.0; 256], 128.0, 256.0).is_err());
        assert!(estimate_phase_amplitude(&[0.0; 256], 0.0, 256.0).is_err());
    }

    #[test]
    fn circular_statistics() {
        let (m, r) = circular_mean(&[0.0, 180.0]);
        assert!(m.is_none() && r < 1e-9);
        let (m, r) = circular_mean(&[350.0, 10.0]);
        assert!(m.unwrap() < 1e-9 || m.unwrap() > 360.0 - 1e-9);
        assert!((r - libm::cos(10f64.to_radians())).abs() < 1e-12);
        let (m, r) = circular_mean(&[42.0; 5]);
        assert!((m.unwrap() - 42.0).abs() < 1e-9 && (r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_marks_missing_cells() {
        let mut stimulus = StimulusTable::twelve_class();
        stimulus.entries.truncate(2);
        let mk = |class: usize, seg: usize, phase: f64| {
            let f = stimulus.entries[class].frequency_hz;
            let row = tone(f, phase, 0, 256);
            Trial::from_matrix(&DMatrix::from_fn(1, 256, |_, n| row[n]), 0, class, 0, seg, 256.0)
        };
        let ds = Dataset {
            trials: alloc::vec![mk(0, 0, 0.0), mk(0, 0, 0.0), mk(0, 1, 0.0), mk(0, 1, PI)],
            channel_names: alloc::vec!["Oz".into()],
            stimulus: stimulus.clone(),
            provenance: "test".into(),
        };
        let cells = segment_phase_report(&ds).unwrap();
        assert_eq!(cells.len(), 4);
        assert!((cells[0].resultant_length.unwrap() - 1.0).abs() < 1e-6);
        assert!(cells[0].amplitude_sem.unwrap() < 1e-6);
        assert!(cells[1].mean_phase_deg.is_none());
        assert!(cells[1].resultant_length.unwrap() < 1e-6);
        assert_eq!(cells[2].count, 0);
        assert!(cells[2].mean_amplitude.is_none());
    }
}
