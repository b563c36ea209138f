use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// One-sided power spectrum with bins at `k * fs / len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub power: Vec<f64>,
}

impl KernelSpectrum {
    /// Frequency of the strongest bin.
    pub fn peak_hz(&self) -> f64 {
        let mut best = 0;
        for (i, &p) in self.power.iter().enumerate() {
            if p > self.power[best] {
                best = i;
            }
        }
        self.frequencies_hz.get(best).copied().unwrap_or(0.0)
    }

    /// Share of the power inside `band` that lies within `half_width` of `center_hz`.
    pub fn band_fraction(&self, band: (f64, f64), center_hz: f64, half_width: f64) -> f64 {
        let mut inside = 0.0;
        let mut total = 0.0;
        for (&f, &p) in self.frequencies_hz.iter().zip(&self.power) {
            if f >= band.0 && f <= band.1 {
                total += p;
                if (f - center_hz).abs() <= half_width + 1e-9 {
                    inside += p;
                }
            }
        }
        if total > 0.0 {
            inside / total
        } else {
            0.0
        }
    }
}

/// `|X_k|^2` of the discrete Fourier transform for `k = 0..=len/2`, with the
/// interior bins doubled to fold in their negative-frequency mirror. The sum
/// over all bins then equals `len * sum(x^2)`.
pub fn kernel_spectrum(kernel: &[f64], sample_rate_hz: f64) -> KernelSpectrum {
    let n = kernel.len();
    if n == 0 {
        return KernelSpectrum {
            frequencies_hz: Vec::new(),
            power: Vec::new(),
        };
    }
    let half = n / 2;
    let mut frequencies_hz = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &x) in kernel.iter().enumerate() {
            // reduce the index first so the angle stays small
            let arg = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            re += x * libm::cos(arg);
            im += x * libm::sin(arg);
        }
        let p = re * re + im * im;
        let mirrored = k != 0 && !(n.is_multiple_of(2) && k == half);
        frequencies_hz.push(k as f64 * sample_rate_hz / n as f64);
        power.push(if mirrored { 2.0 * p } else { p });
    }
    KernelSpectrum { frequencies_hz, power }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_cycle_sine_has_one_bin() {
        let x: Vec<f64> = (0..256).map(|t| libm::sin(2.0 * PI * 12.0 * t as f64 / 256.0)).collect();
        let s = kernel_spectrum(&x, 256.0);
        assert_eq!(s.power.len(), 129);
        assert_eq!(s.peak_hz(), 12.0);
        let total: f64 = s.power.iter().sum();
        assert!(s.power[12] / total > 0.999999);
    }

    #[test]
    fn constant_is_all_dc() {
        let s = kernel_spectrum(&[0.7; 256], 256.0);
        let total: f64 = s.power.iter().sum();
        assert!((s.power[0] - total).abs() < 1e-9 * total);
    }

    #[test]
    fn parseval() {
        for n in [256usize, 255, 16] {
            let x: Vec<f64> = (0..n).map(|t| libm::sin(t as f64 * 1.7) + 0.3 * libm::cos(t as f64 * 0.2)).collect();
            let s = kernel_spectrum(&x, 256.0);
            let lhs: f64 = s.power.iter().sum();
            let rhs = n as f64 * x.iter().map(|v| v * v).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-8 * rhs, "{n}");
        }
    }

    #[test]
    fn band_fraction_of_pure_tone() {
        let x: Vec<f64> = (0..256).map(|t| libm::cos(2.0 * PI * 10.0 * t as f64 / 256.0)).collect();
        let s = kernel_spectrum(&x, 256.0);
        assert!(s.band_fraction((9.0, 30.0), 10.0, 1.0) > 0.999);
        assert!(s.band_fraction((9.0, 30.0), 20.0, 1.0) < 1e-9);
    }
}
