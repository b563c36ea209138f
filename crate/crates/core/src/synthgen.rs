//! Ground-truth synthetic SSVEP generator.
//!
//! Each channel carries `g_c * (sin(2 pi f t + phi) + h * sin(4 pi f t + 2 phi))`
//! plus white Gaussian noise. Channel gains `g_c` are drawn once per subject.
//! Every trial uses its own ChaCha stream keyed by (subject, block, class), so
//! generation order does not affect the output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StimulusTable, Trial};
use crate::error::{Error, Result};

/// Band in which signal and noise power are compared for the SNR.
pub const SNR_BAND_HZ: (f64, f64) = (9.0, 30.0);
/// Range of the uniform per-subject channel gains.
pub const GAIN_RANGE: (f64, f64) = (0.5, 1.5);

const CHANNEL_NAMES: [&str; 8] = ["PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub stimulus: StimulusTable,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub trial_seconds: f64,
    pub trials_per_class: usize,
    pub subjects: usize,
    pub snr_db: f64,
    pub harmonic_gain: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    /// Ten subjects, 15 blocks of 12 four-second trials, 8 channels at 2048 Hz.
    fn default() -> Self {
        Self {
            stimulus: StimulusTable::twelve_class(),
            channels: 8,
            sample_rate_hz: 2048.0,
            trial_seconds: 4.0,
            trials_per_class: 15,
            subjects: 10,
            snr_db: 0.0,
            harmonic_gain: 0.5,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.stimulus.validate()?;
        if self.channels == 0 || self.trials_per_class == 0 || self.subjects == 0 {
            return Err(Error::Config(
                "channels, trials_per_class and subjects must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.harmonic_gain) {
            return Err(Error::Config("harmonic_gain must lie in [0, 1]".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.trial_seconds > 0.0 && self.snr_db.is_finite()) {
            return Err(Error::Config("sample rate and trial length must be positive".into()));
        }
        let samples = self.trial_seconds * self.sample_rate_hz;
        if (samples - libm::round(samples)).abs() > 1e-9 {
            return Err(Error::Config("trial length is not a whole number of samples".into()));
        }
        Ok(())
    }

    pub fn trial_samples(&self) -> usize {
        libm::round(self.trial_seconds * self.sample_rate_hz) as usize
    }

    pub fn channel_names(&self) -> Vec<String> {
        if self.channels == CHANNEL_NAMES.len() {
            CHANNEL_NAMES.iter().map(|s| String::from(*s)).collect()
        } else {
            (0..self.channels).map(|i| format!("Ch{i}")).collect()
        }
    }

    /// Standard deviation of the white noise for a subject with these gains.
    fn noise_std(&self, gains: &[f64]) -> f64 {
        let mean_sq = gains.iter().map(|g| g * g).sum::<f64>() / gains.len() as f64;
        let signal_power = mean_sq * (1.0 + self.harmonic_gain * self.harmonic_gain) / 2.0;
        let nyquist = self.sample_rate_hz / 2.0;
        let band = SNR_BAND_HZ.1.min(nyquist) - SNR_BAND_HZ.0.min(nyquist);
        let in_band_fraction = band / nyquist;
        let noise_in_band = signal_power / libm::pow(10.0, self.snr_db / 10.0);
        libm::sqrt(noise_in_band / in_band_fraction)
    }
}

fn gains_stream(subject: usize) -> u64 {
    u64::MAX - subject as u64
}

fn trial_stream(subject: usize, block: usize, class_id: usize) -> u64 {
    ((subject as u64) << 42) | ((block as u64) << 21) | class_id as u64
}

/// Per-channel gains of a subject.
pub fn subject_gains(config: &SynthConfig, subject: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(gains_stream(subject));
    (0..config.channels)
        .map(|_| rng.random_range(GAIN_RANGE.0..GAIN_RANGE.1))
        .collect()
}

/// RNG for one trial; independent of generation order.
pub fn trial_rng(config: &SynthConfig, subject: usize, block: usize, class_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(trial_stream(subject, block, class_id));
    rng
}

/// Noise-free response of one unit-gain channel at sample `n`.
pub fn clean_waveform(frequency_hz: f64, phase_rad: f64, harmonic_gain: f64, t: f64) -> f64 {
    let arg = 2.0 * PI * frequency_hz * t + phase_rad;
    libm::sin(arg) + harmonic_gain * libm::sin(2.0 * arg)
}

/// Generates one channels x samples trial for `subject` and `class_id`.
pub fn generate_trial<R: Rng>(
    config: &SynthConfig,
    subject: usize,
    class_id: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let stim = *config.stimulus.get(class_id)?;
    let gains = subject_gains(config, subject);
    let sigma = config.noise_std(&gains);
    let samples = config.trial_samples();
    let wave: Vec<f64> = (0..samples)
        .map(|n| {
            let t = n as f64 / config.sample_rate_hz;
            clean_waveform(stim.frequency_hz, stim.phase_rad, config.harmonic_gain, t)
        })
        .collect();
    let mut out = DMatrix::zeros(config.channels, samples);
    for (c, g) in gains.iter().enumerate() {
        for (n, w) in wave.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            out[(c, n)] = g * w + sigma * noise;
        }
    }
    Ok(out)
}

/// Full labeled dataset ordered by subject, then block, then class.
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut trials =
        Vec::with_capacity(config.subjects * config.trials_per_class * config.stimulus.len());
    for subject in 0..config.subjects {
        for block in 0..config.trials_per_class {
            for class_id in config.stimulus.class_ids() {
                let mut rng = trial_rng(config, subject, block, class_id);
                let m = generate_trial(config, subject, class_id, &mut rng)?;
                trials.push(Trial::from_matrix(&m, subject, class_id, block, 0, config.sample_rate_hz));
            }
        }
    }
    Ok(Dataset {
        trials,
        channel_names: config.channel_names(),
        stimulus: config.stimulus.clone(),
        provenance: format!(
            "synthetic: seed {}, snr {} dB, harmonic gain {}, {} subjects x {} trials/class",
            config.rng_seed, config.snr_db, config.harmonic_gain, config.subjects, config.trials_per_class
        ),
    })
}
