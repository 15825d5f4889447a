//! Versioned binary checkpoints.
//!
//! Layout: a JSON header line (format version, model configuration, and the
//! hash of the run configuration that produced the weights), then each
//! parameter tensor as a named little-endian f64 blob. Loading verifies the
//! version, the configuration, and every tensor length.

use std::io::Read as _;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{DacnError, Result};

use super::net::{ModelConfig, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    /// SHA-256 of the run configuration, for provenance checks.
    pub config_hash: String,
}

pub fn save(params: &ModelParams, config_hash: &str, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: params.cfg.clone(),
        config_hash: config_hash.to_string(),
    };
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &header)?;
    buf.push(b'\n');
    let mut io_err = None;
    params.visit(|_, slice| {
        if io_err.is_some() {
            return;
        }
        if let Err(e) = buf.write_u64::<LittleEndian>(slice.len() as u64) {
            io_err = Some(e);
            return;
        }
        for &x in slice {
            if let Err(e) = buf.write_f64::<LittleEndian>(x) {
                io_err = Some(e);
                return;
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let data = std::fs::read(path)?;
    let nl = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DacnError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&data[..nl])
        .map_err(|e| DacnError::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(DacnError::Checkpoint(format!(
            "format version {} not supported (expected {})",
            header.format_version, FORMAT_VERSION
        )));
    }
    let mut params = ModelParams::zeros(&header.model)?;
    let mut cursor = &data[nl + 1..];
    let mut read_err = None;
    params.visit_mut(|_, slice| {
        if read_err.is_some() {
            return;
        }
        let len = match cursor.read_u64::<LittleEndian>() {
            Ok(l) => l as usize,
            Err(e) => {
                read_err = Some(format!("truncated tensor header: {e}"));
                return;
            }
        };
        if len != slice.len() {
            read_err = Some(format!(
                "tensor length mismatch: file has {len}, model expects {}",
                slice.len()
            ));
            return;
        }
        for x in slice.iter_mut() {
            match cursor.read_f64::<LittleEndian>() {
                Ok(v) => *x = v,
                Err(e) => {
                    read_err = Some(format!("truncated tensor data: {e}"));
                    return;
                }
            }
        }
    });
    if let Some(msg) = read_err {
        return Err(DacnError::Checkpoint(msg));
    }
    let mut rest = [0u8; 1];
    if cursor.read(&mut rest)? != 0 {
        return Err(DacnError::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok((params, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig::tiny(3, 8, 4);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, "abc123", &path).unwrap();
        let (back, header) = load(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(header.config_hash, "abc123");
        assert_eq!(header.model, cfg);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig::tiny(3, 8, 4);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, "h", &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() - 9]).unwrap();
        assert!(matches!(load(&path), Err(DacnError::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::tiny(3, 8, 4);
        let header = CheckpointHeader {
            format_version: 99,
            model: cfg,
            config_hash: String::new(),
        };
        let mut buf = serde_json::to_vec(&header).unwrap();
        buf.push(b'\n');
        std::fs::write(&path, buf).unwrap();
        assert!(matches!(load(&path), Err(DacnError::Checkpoint(_))));
    }
}
