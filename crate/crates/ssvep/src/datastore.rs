//! `SSVEPDS1` dataset files.
//!
//! Layout: the 8 magic bytes `SSVEPDS1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the `(n_trials, C, T)` tensor as contiguous
//! little-endian `f32` in C order. The header carries the payload's SHA-256.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssvep_core::dataset::{Dataset, StimulusTable, Trial};

pub const MAGIC: &[u8; 8] = b"SSVEPDS1";
const MAGIC_STEM: &[u8; 7] = b"SSVEPDS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an SSVEPDS file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated tensor block: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{0} unexpected bytes after the tensor block")]
    TrailingBytes(u64),
    #[error("payload checksum mismatch")]
    Checksum,
    #[error("invalid dataset: {0}")]
    Invalid(#[from] ssvep_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub subject: usize,
    pub class_id: usize,
    pub block: usize,
    pub segment: usize,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub endianness: String,
    /// `[n_trials, channels, samples]`
    pub shape: [usize; 3],
    pub channel_names: Vec<String>,
    pub stimulus: StimulusTable,
    pub provenance: String,
    pub payload_sha256: String,
    pub trials: Vec<TrialRecord>,
}

fn payload_bytes(ds: &Dataset) -> Vec<u8> {
    let n: usize = ds.trials.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(4 * n);
    for t in &ds.trials {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a validated dataset to bytes.
pub fn encode(ds: &Dataset) -> Result<Vec<u8>, FormatError> {
    ds.validate()?;
    let (c, t) = ds
        .layout()
        .map_or((ds.channel_names.len(), 0), |(c, t, _)| (c, t));
    let payload = payload_bytes(ds);
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: "float32".into(),
        endianness: "little".into(),
        shape: [ds.trials.len(), c, t],
        channel_names: ds.channel_names.clone(),
        stimulus: ds.stimulus.clone(),
        provenance: ds.provenance.clone(),
        payload_sha256: sha256_hex(&payload),
        trials: ds
            .trials
            .iter()
            .map(|t| TrialRecord {
                subject: t.subject,
                class_id: t.class_id,
                block: t.block,
                segment: t.segment,
                sample_rate_hz: t.sample_rate_hz,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a file into header and payload after checking magic and version.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8]), FormatError> {
    if bytes.len() < 8 || &bytes[..7] != MAGIC_STEM {
        return Err(FormatError::BadMagic);
    }
    if &bytes[..8] != MAGIC {
        return Err(FormatError::Version {
            found: String::from_utf8_lossy(&bytes[7..8]).into_owned(),
        });
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| FormatError::Header("missing header length".into()))?;
    let len = u64::from_le_bytes(len_bytes);
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| FormatError::Header(format!("header length {len} exceeds the file")))?
        as usize;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(FormatError::Version {
            found: header.format_version.to_string(),
        });
    }
    if header.dtype != "float32" || header.endianness != "little" {
        return Err(FormatError::Header(format!(
            "unsupported tensor encoding {} / {}",
            header.dtype, header.endianness
        )));
    }
    if header.trials.len() != header.shape[0] {
        return Err(FormatError::Header(format!(
            "{} trial records for shape {:?}",
            header.trials.len(),
            header.shape
        )));
    }
    Ok((header, &bytes[end..]))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let (header, payload) = read_header(bytes)?;
    let [n, c, t] = header.shape;
    let expected = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(t))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FormatError::Header(format!("shape {:?} overflows", header.shape)))?
        as u64;
    let found = payload.len() as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FormatError::TrailingBytes(found - expected));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(FormatError::Checksum);
    }
    let per = c * t;
    let trials = header
        .trials
        .iter()
        .enumerate()
        .map(|(i, r)| Trial {
            data: payload[i * per * 4..(i + 1) * per * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            channels: c,
            samples: t,
            subject: r.subject,
            class_id: r.class_id,
            block: r.block,
            segment: r.segment,
            sample_rate_hz: r.sample_rate_hz,
        })
        .collect();
    let ds = Dataset {
        trials,
        channel_names: header.channel_names,
        stimulus: header.stimulus,
        provenance: header.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes atomically: the file appears complete or not at all.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    decode(&fs::read(path)?)
}

/// Summary of a structurally valid file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileSummary {
    pub shape: [usize; 3],
    pub subjects: usize,
    pub payload_sha256: String,
}

pub fn validate_file(path: &Path) -> Result<FileSummary, FormatError> {
    let ds = load_dataset(path)?;
    let bytes = payload_bytes(&ds);
    Ok(FileSummary {
        shape: [
            ds.trials.len(),
            ds.layout().map_or(ds.channel_names.len(), |l| l.0),
            ds.layout().map_or(0, |l| l.1),
        ],
        subjects: ds.subjects().len(),
        payload_sha256: sha256_hex(&bytes),
    })
}
