//! Flat binary containers: an 8-byte ASCII magic, a little-endian `u64`
//! count, then that many little-endian `f64` values.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use perturbopt_core::perturb::AdaptiveState;
use perturbopt_core::{FilterLayout, ParamVector};

use crate::error::{HarnessError, Result};

pub const PVEC_MAGIC: [u8; 8] = *b"PVEC0001";
pub const ASTA_MAGIC: [u8; 8] = *b"ASTA0001";

pub fn encode(magic: [u8; 8], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: [u8; 8], bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < 16 {
        return Err(format!("file too short for a header: {} bytes", bytes.len()));
    }
    if bytes[..8] != magic {
        return Err(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..8])
        ));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if len.checked_mul(8) != Some(body.len() as u64) {
        return Err(format!("header declares {len} values but body holds {} bytes", body.len()));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn read_container(path: &Path, magic: [u8; 8]) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(magic, &bytes).map_err(|m| HarnessError::format(path, m))
}

fn write_container(path: &Path, magic: [u8; 8], values: &[f64]) -> Result<()> {
    fs::write(path, encode(magic, values)).map_err(|e| HarnessError::io(path, e))
}

pub fn save_params(path: &Path, w: &ParamVector) -> Result<()> {
    write_container(path, PVEC_MAGIC, w.values())
}

/// Raw values; the file does not carry a layout.
pub fn load_values(path: &Path) -> Result<Vec<f64>> {
    read_container(path, PVEC_MAGIC)
}

pub fn load_params(path: &Path, layout: Arc<FilterLayout>) -> Result<ParamVector> {
    let values = load_values(path)?;
    if values.len() != layout.total_dim() {
        return Err(HarnessError::format(
            path,
            format!("checkpoint holds {} values, model expects {}", values.len(), layout.total_dim()),
        ));
    }
    Ok(ParamVector::new(values, layout)?)
}

pub fn save_adaptive_state(path: &Path, state: &AdaptiveState) -> Result<()> {
    write_container(path, ASTA_MAGIC, &state.to_flat())
}

pub fn load_adaptive_state(path: &Path) -> Result<AdaptiveState> {
    let flat = read_container(path, ASTA_MAGIC)?;
    AdaptiveState::from_flat(&flat).map_err(|e| HarnessError::format(path, e.to_string()))
}
