//! In-memory dataset container and leave-one-subject-out fold construction.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub class_id: usize,
    pub frequency_hz: f64,
    pub phase_rad: f64,
}

/// Class-to-flicker mapping, ordered by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusTable {
    pub entries: Vec<Stimulus>,
}

impl StimulusTable {
    /// Twelve targets, 9.25-14.75 Hz in 0.5 Hz steps. Phases cycle through
    /// quarter turns.
    pub fn twelve_class() -> Self {
        let entries = (0..12)
            .map(|k| Stimulus {
                class_id: k,
                frequency_hz: 9.25 + 0.5 * k as f64,
                phase_rad: (k % 4) as f64 * PI / 2.0,
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Result<&Stimulus> {
        self.entries
            .iter()
            .find(|s| s.class_id == class_id)
            .ok_or(Error::UnknownClass(class_id))
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|s| s.class_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("stimulus table is empty".into()));
        }
        let ids: BTreeSet<usize> = self.class_ids().collect();
        if ids.len() != self.entries.len() {
            return Err(Error::Config("duplicate class ids in stimulus table".into()));
        }
        if self
            .entries
            .windows(2)
            .any(|w| !(w[1].frequency_hz > w[0].frequency_hz))
        {
            return Err(Error::Config("stimulus frequencies must be strictly increasing".into()));
        }
        if self.entries.iter().any(|s| !(s.frequency_hz > 0.0 && s.phase_rad.is_finite())) {
            return Err(Error::Config("stimulus frequencies must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled channels x samples window. Data is row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub data: Vec<f32>,
    pub channels: usize,
    pub samples: usize,
    pub subject: usize,
    pub class_id: usize,
    pub block: usize,
    pub segment: usize,
    pub sample_rate_hz: f64,
}

impl Trial {
    pub fn from_matrix(
        m: &DMatrix<f64>,
        subject: usize,
        class_id: usize,
        block: usize,
        segment: usize,
        sample_rate_hz: f64,
    ) -> Self {
        let (channels, samples) = m.shape();
        let mut data = Vec::with_capacity(channels * samples);
        for r in 0..channels {
            data.extend(m.row(r).iter().map(|&v| v as f32));
        }
        Self {
            data,
            channels,
            samples,
            subject,
            class_id,
            block,
            segment,
            sample_rate_hz,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.channels, self.samples, |r, c| {
            f64::from(self.data[r * self.samples + c])
        })
    }

    pub fn row(&self, channel: usize) -> &[f32] {
        &self.data[channel * self.samples..(channel + 1) * self.samples]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub channel_names: Vec<String>,
    pub stimulus: StimulusTable,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// (channels, samples, sample rate) shared by every trial.
    pub fn layout(&self) -> Option<(usize, usize, f64)> {
        self.trials.first().map(|t| (t.channels, t.samples, t.sample_rate_hz))
    }

    pub fn subjects(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.trials.iter().map(|t| t.subject).collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.stimulus.validate()?;
        let Some((channels, samples, rate)) = self.layout() else {
            return Ok(());
        };
        if self.channel_names.len() != channels {
            return Err(Error::Dataset(alloc::format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                channels
            )));
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.channels != channels || t.samples != samples || t.sample_rate_hz != rate {
                return Err(Error::Dataset(alloc::format!("trial {i} has a different layout")));
            }
            if t.data.len() != channels * samples {
                return Err(Error::Dataset(alloc::format!("trial {i} has a wrong data length")));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(alloc::format!("trial {i} contains NaN or Inf")));
            }
            if self.stimulus.get(t.class_id).is_err() {
                return Err(Error::Dataset(alloc::format!(
                    "trial {i} has class {} outside the stimulus table",
                    t.class_id
                )));
            }
        }
        Ok(())
    }
}

/// Train/test partition holding out one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoFold {
    pub test_subject: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl LosoFold {
    /// Checks disjointness, coverage and subject isolation against `ds`.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        let mut seen = alloc::vec![false; ds.len()];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= ds.len() || seen[i] {
                return Err(Error::Dataset(alloc::format!(
                    "fold for subject {} has an invalid or repeated index {i}",
                    self.test_subject
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dataset("fold does not cover every trial".into()));
        }
        if self
            .train_indices
            .iter()
            .any(|&i| ds.trials[i].subject == self.test_subject)
        {
            return Err(Error::Dataset(alloc::format!(
                "test subject {} leaks into training",
                self.test_subject
            )));
        }
        if self
            .test_indices
            .iter()
            .any(|&i| ds.trials[i].subject != self.test_subject)
        {
            return Err(Error::Dataset("test set holds another subject".into()));
        }
        Ok(())
    }
}

/// One fold per subject, ordered by subject index.
pub fn loso_folds(ds: &Dataset) -> Result<Vec<LosoFold>> {
    let subjects = ds.subjects();
    if subjects.len() < 2 {
        return Err(Error::Dataset(alloc::format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .into_iter()
        .map(|test_subject| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| ds.trials[i].subject == test_subject);
            LosoFold {
                test_subject,
                train_indices: train,
                test_indices: test,
            }
        })
        .collect())
}
