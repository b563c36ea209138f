//! Run manifests: what ran, with which configuration, on which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datastore::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&fs::read(path)?),
        })
    }
}

/// Written as `manifest.json` next to a command's outputs. Wall time lives
/// here only, so the other outputs stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_seconds: f64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, threads: usize) -> Self {
        let seeds = BTreeMap::from([
            ("synth".to_string(), config.synth.rng_seed),
            ("train".to_string(), config.model.train.seed),
            ("shuffle".to_string(), config.harness.shuffle_seed),
            ("tsne".to_string(), config.analysis.tsne.seed),
        ]);
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seeds,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_seconds: 0.0,
            config: config.clone(),
        }
    }

    /// Digests the files and writes `manifest.json` and `config.resolved.json`
    /// into `dir`.
    pub fn finish(mut self, dir: &Path, inputs: &[PathBuf], outputs: &[PathBuf], wall: f64) -> std::io::Result<PathBuf> {
        self.inputs = inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?;
        self.outputs = outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?;
        self.wall_time_seconds = wall;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.resolved.json"), self.config.resolved_json())?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self).expect("manifest serializes"))?;
        Ok(path)
    }
}
