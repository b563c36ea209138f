//! Run configuration. Every section has defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssvep_core::analysis::TsneConfig;
use ssvep_core::combined_cca::Fusion;
use ssvep_core::nnet::{ModelConfig, TrainConfig};
use ssvep_core::signal::{EpochSpec, FilterSpec};
use ssvep_core::synthgen::SynthConfig;

use crate::datastore::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub order: usize,
    /// Keep every `decimation`-th sample after filtering.
    pub decimation: usize,
    pub segment_seconds: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            low_cut_hz: 9.0,
            high_cut_hz: 30.0,
            order: 4,
            decimation: 8,
            segment_seconds: 1.0,
        }
    }
}

impl SignalConfig {
    pub fn filter(&self, sample_rate_hz: f64) -> FilterSpec {
        FilterSpec {
            low_cut_hz: self.low_cut_hz,
            high_cut_hz: self.high_cut_hz,
            order: self.order,
            sample_rate_hz,
        }
    }

    pub fn epoch(&self, trial_seconds: f64, source_rate_hz: f64) -> EpochSpec {
        EpochSpec {
            trial_seconds,
            segment_seconds: self.segment_seconds,
            sample_rate_hz: source_rate_hz / self.decimation.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ModelSection {
    /// `channels`, `samples` and `classes` are taken from the dataset at run time.
    pub network: ModelConfig,
    pub train: TrainConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    pub n_harmonics: usize,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self { n_harmonics: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinedCcaConfig {
    pub fusion: Fusion,
}

impl Default for CombinedCcaConfig {
    fn default() -> Self {
        Self {
            fusion: Fusion::SignedSquare,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Every segment is scored on its own.
    #[default]
    Segment,
    /// Segments of one parent trial vote; ties go to the lowest class id.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub methods: Vec<String>,
    pub scoring: Scoring,
    /// Restrict training and testing to these segment indices.
    pub segments: Option<Vec<usize>>,
    /// Permute class labels among each subject's segments before splitting.
    pub shuffle_labels: bool,
    pub shuffle_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            methods: vec!["cnn".into(), "cca".into(), "combined_cca".into()],
            scoring: Scoring::Segment,
            segments: None,
            shuffle_labels: false,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tsne: TsneConfig,
    pub layer: usize,
    /// Cap on embedded points, taken in dataset order; `None` embeds all.
    pub max_points: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tsne: TsneConfig::default(),
            layer: 3,
            max_points: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub signal: SignalConfig,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub cca: CcaConfig,
    pub combined_cca: CombinedCcaConfig,
    pub harness: HarnessConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies a global seed to every stochastic stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.rng_seed = seed;
        self.model.train.seed = seed;
        self.harness.shuffle_seed = seed;
        self.analysis.tsne.seed = seed;
        self
    }

    /// The fully materialized document.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact resolved document.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
