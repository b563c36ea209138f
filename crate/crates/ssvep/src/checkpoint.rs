//! `SSVEPNN1` model checkpoints: magic, `u64` header length, JSON header with
//! the model configuration and block sizes, then every parameter block
//! (running statistics included) as little-endian `f32` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ssvep_core::nnet::{CompactCnn, ModelConfig};

use crate::datastore::{sha256_hex, write_atomic, FormatError};

pub const MAGIC: &[u8; 8] = b"SSVEPNN1";
const MAGIC_STEM: &[u8; 7] = b"SSVEPNN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub blocks: Vec<Block>,
    pub payload_sha256: String,
}

pub fn encode(model: &CompactCnn<f32>) -> Result<Vec<u8>, FormatError> {
    let state = model.params.state();
    let mut payload = Vec::new();
    for (_, block) in &state {
        for v in *block {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: 1,
        config: model.config.clone(),
        blocks: state
            .iter()
            .map(|(name, d)| Block {
                name: name.clone(),
                len: d.len(),
            })
            .collect(),
        payload_sha256: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<CompactCnn<f32>, FormatError> {
    if bytes.len() < 8 || &bytes[..7] != MAGIC_STEM {
        return Err(FormatError::BadMagic);
    }
    if &bytes[..8] != MAGIC {
        return Err(FormatError::Version {
            found: String::from_utf8_lossy(&bytes[7..8]).into_owned(),
        });
    }
    let len = bytes
        .get(8..16)
        .map(|s| u64::from_le_bytes(s.try_into().expect("8 bytes")))
        .ok_or_else(|| FormatError::Header("missing header length".into()))?;
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| FormatError::Header(format!("header length {len} exceeds the file")))?
        as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.format_version != 1 {
        return Err(FormatError::Version {
            found: header.format_version.to_string(),
        });
    }
    let payload = &bytes[end..];
    let expected: u64 = header.blocks.iter().map(|b| 4 * b.len as u64).sum();
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
    let mut model = CompactCnn::<f32>::new(header.config, 0)?;
    let names: Vec<String> = model.params.state().into_iter().map(|(n, _)| n).collect();
    let mut offset = 0;
    let mut slots = model.params.state_mut();
    if slots.len() != header.blocks.len() {
        return Err(FormatError::Header(format!(
            "{} parameter blocks, model has {}",
            header.blocks.len(),
            slots.len()
        )));
    }
    for ((slot, block), name) in slots.iter_mut().zip(&header.blocks).zip(&names) {
        if block.name != *name || block.len != slot.len() {
            return Err(FormatError::Header(format!(
                "block {} ({}) does not match {} ({})",
                block.name,
                block.len,
                name,
                slot.len()
            )));
        }
        for (dst, b) in slot.iter_mut().zip(payload[offset..offset + 4 * block.len].chunks_exact(4)) {
            *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        offset += 4 * block.len;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &CompactCnn<f32>, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CompactCnn<f32>, FormatError> {
    decode(&fs::read(path)?)
}
