//! Preprocessing chain: Butterworth band-pass design, zero-phase filtering,
//! decimation and epoch segmentation.
//!
//! All arithmetic is done in `f64`. Filters are realized as cascades of
//! second-order sections in transposed direct form II.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band-pass filter request.
///
/// `order` is the order of the analog low-pass prototype, so the designed
/// band-pass has `2 * order` poles and is realized with `order` biquads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub order: usize,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    /// 9-30 Hz, order 4 at the given sample rate.
    pub fn ssvep_band(sample_rate_hz: f64) -> Self {
        Self {
            low_cut_hz: 9.0,
            high_cut_hz: 30.0,
            order: 4,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if self.order == 0 {
            return Err(Error::InvalidFilter("order must be at least 1".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidFilter("sample rate must be positive".into()));
        }
        if !(self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz) {
            return Err(Error::InvalidFilter(alloc::format!(
                "need 0 < low cut ({}) < high cut ({})",
                self.low_cut_hz,
                self.high_cut_hz
            )));
        }
        if self.high_cut_hz >= nyquist {
            return Err(Error::InvalidFilter(alloc::format!(
                "high cut {} Hz is at or above Nyquist {} Hz",
                self.high_cut_hz,
                nyquist
            )));
        }
        Ok(())
    }
}

/// Second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response_at(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = Complex64::new(self.b0, 0.0) + z_inv * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z_inv * self.a1 + z2 * self.a2;
        num / den
    }

    /// Both poles strictly inside the unit circle (Jury conditions).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Steady-state transposed-DF2 state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let y = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        [y - self.b0, self.b2 - self.a2 * y]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// Cascade of biquads realizing one IIR filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response_at(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        self.response(freq_hz, sample_rate_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Edge padding used by [`filtfilt`]: `3 * (2 * order + 1)` samples.
    pub fn padlen(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let zero = alloc::vec![[0.0; 2]; self.sections.len()];
        self.filter_from(x, &zero, 0.0)
    }

    /// Causal filtering with each section's state set to `scale * zi[s]`.
    fn filter_from(&self, x: &[f64], zi: &[[f64; 2]], scale: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(zi) {
            let mut z1 = z[0] * scale;
            let mut z2 = z[1] * scale;
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Per-section initial state giving a step-response steady state,
    /// scaled by the DC gain of the preceding sections.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let z = s.step_state();
                let out = [z[0] * scale, z[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }
}

/// Digital Butterworth band-pass via the bilinear transform with
/// pre-warped band edges.
pub fn design_butterworth_bandpass(spec: &FilterSpec) -> Result<BiquadCascade> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let n = spec.order;
    let warp = |f: f64| 2.0 * fs * libm::tan(PI * f / fs);
    let w_lo = warp(spec.low_cut_hz);
    let w_hi = warp(spec.high_cut_hz);
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut upper = Vec::new();
    let mut real = Vec::new();
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let disc = (p * p - 4.0 * w0_sq).sqrt();
        for s in [(p + disc) / 2.0, (p - disc) / 2.0] {
            let z = (2.0 * fs + s) / (2.0 * fs - s);
            if z.im > 1e-12 {
                upper.push(z);
            } else if z.im.abs() <= 1e-12 {
                real.push(z.re);
            }
        }
    }
    if real.len() % 2 != 0 || upper.len() + real.len() / 2 != n {
        return Err(Error::InvalidFilter("pole pairing failed".into()));
    }

    let center = 2.0 * libm::atan(libm::sqrt(w0_sq) / (2.0 * fs));
    let z_inv = Complex64::from_polar(1.0, -center);
    let unit = |a1: f64, a2: f64| {
        let raw = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1,
            a2,
        };
        let g = 1.0 / raw.response_at(z_inv).norm();
        Biquad {
            b0: g,
            b2: -g,
            ..raw
        }
    };

    let mut sections: Vec<Biquad> = upper.iter().map(|p| unit(-2.0 * p.re, p.norm_sqr())).collect();
    for pair in real.chunks_exact(2) {
        sections.push(unit(-(pair[0] + pair[1]), pair[0] * pair[1]));
    }
    Ok(BiquadCascade { sections })
}

/// Forward-backward (zero-phase) filtering with odd-reflection padding.
///
/// The effective magnitude response is `|H|^2` and the output has the same
/// length as the input.
pub fn filtfilt(filter: &BiquadCascade, x: &[f64]) -> Result<Vec<f64>> {
    let padlen = filter.padlen();
    let len = x.len();
    if len <= padlen {
        return Err(Error::SignalTooShort { len, padlen });
    }
    let first = x[0];
    let last = x[len - 1];
    let mut ext = Vec::with_capacity(len + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * last - x[len - 1 - i]));

    let zi = filter.steady_state();
    let mut y = filter.filter_from(&ext, &zi, ext[0]);
    y.reverse();
    let start = y[0];
    let mut y = filter.filter_from(&y, &zi, start);
    y.reverse();
    Ok(y[padlen..padlen + len].to_vec())
}

/// Keeps every `factor`-th sample starting from the first.
pub fn decimate(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::ZeroFactor);
    }
    Ok(x.iter().step_by(factor).copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    pub trial_seconds: f64,
    pub segment_seconds: f64,
    pub sample_rate_hz: f64,
}

impl EpochSpec {
    fn whole(value: f64, what: &str) -> Result<usize> {
        let rounded = libm::round(value);
        if rounded < 1.0 || (value - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::Segmentation(alloc::format!(
                "{what} is {value}, not a positive integer"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn segment_samples(&self) -> Result<usize> {
        Self::whole(self.segment_seconds * self.sample_rate_hz, "segment length in samples")
    }

    pub fn trial_samples(&self) -> Result<usize> {
        Self::whole(self.trial_seconds * self.sample_rate_hz, "trial length in samples")
    }

    pub fn segments_per_trial(&self) -> Result<usize> {
        Self::whole(self.trial_seconds / self.segment_seconds, "segments per trial")
    }
}

/// One window of a trial; `index` is 0-based within the parent epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub data: DMatrix<f64>,
}

/// Splits a channels x samples trial into contiguous non-overlapping
/// segments in temporal order.
pub fn segment_epochs(trial: &DMatrix<f64>, spec: &EpochSpec) -> Result<Vec<Segment>> {
    let count = spec.segments_per_trial()?;
    let seg_len = spec.segment_samples()?;
    let expected = spec.trial_samples()?;
    if trial.ncols() != expected || seg_len * count != expected {
        return Err(Error::Segmentation(alloc::format!(
            "trial has {} samples; expected {} = {} x {}",
            trial.ncols(),
            expected,
            count,
            seg_len
        )));
    }
    Ok((0..count)
        .map(|index| Segment {
            index,
            data: trial.columns(index * seg_len, seg_len).into_owned(),
        })
        .collect())
}

/// Filter, decimate and segment chain applied to whole trials.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub filter: BiquadCascade,
    pub factor: usize,
    pub epoch: EpochSpec,
}

impl Preprocessor {
    /// `epoch.sample_rate_hz` is the rate after decimation.
    pub fn new(filter: &FilterSpec, factor: usize, epoch: EpochSpec) -> Result<Self> {
        if factor == 0 {
            return Err(Error::ZeroFactor);
        }
        let target = filter.sample_rate_hz / factor as f64;
        if (target - epoch.sample_rate_hz).abs() > 1e-9 {
            return Err(Error::Config(alloc::format!(
                "{} Hz / {} = {} Hz does not match the epoch rate {} Hz",
                filter.sample_rate_hz,
                factor,
                target,
                epoch.sample_rate_hz
            )));
        }
        Ok(Self {
            filter: design_butterworth_bandpass(filter)?,
            factor,
            epoch,
        })
    }

    pub fn apply(&self, trial: &DMatrix<f64>) -> Result<Vec<Segment>> {
        let mut rows = Vec::with_capacity(trial.nrows());
        for r in 0..trial.nrows() {
            let row: Vec<f64> = trial.row(r).iter().copied().collect();
            let filtered = filtfilt(&self.filter, &row)?;
            rows.push(decimate(&filtered, self.factor)?);
        }
        let cols = rows.first().map_or(0, Vec::len);
        let reduced = DMatrix::from_fn(trial.nrows(), cols, |r, c| rows[r][c]);
        segment_epochs(&reduced, &self.epoch)
    }
}
