use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload that follows the header line.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: String,
    pub config: ModelConfig,
    /// Optimizer steps taken to produce these weights.
    #[serde(default)]
    pub step: usize,
    pub tensors: Vec<ManifestEntry>,
}

/// Writes a header JSON line followed by little-endian f32 data in manifest
/// order. The file is written beside `path` and renamed into place.
pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams<f32>,
    step: usize,
) -> Result<()> {
    let mut offset = 0;
    let mut tensors = Vec::new();
    for (info, data) in params.tensors() {
        if info.shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("tensor {} has {} elements", info.name, data.len())));
        }
        tensors.push(ManifestEntry { name: info.name, shape: info.shape, offset });
        offset += data.len() * 4;
    }
    let header =
        CheckpointHeader { version: CHECKPOINT_VERSION.to_string(), config: config.clone(), step, tensors };
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        for (_, data) in params.tensors() {
            for v in data {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&tmp, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(&line).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported checkpoint version {:?}", header.version),
        });
    }
    header.config.validate()?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let mut params = ModelParams::<f32>::zeros(&header.config);
    let slots = params.tensors_mut();
    if slots.len() != header.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint lists {} tensors, config needs {}",
            header.tensors.len(),
            slots.len()
        )));
    }
    let mut end = 0;
    for ((info, data), entry) in slots.into_iter().zip(&header.tensors) {
        if info.name != entry.name || info.shape != entry.shape {
            return Err(Error::Shape(format!(
                "expected {} {:?}, found {} {:?}",
                info.name, info.shape, entry.name, entry.shape
            )));
        }
        let len = data.len() * 4;
        let chunk = bytes
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Shape(format!("tensor {} runs past the end of the payload", entry.name)))?;
        for (v, c) in data.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        end = end.max(entry.offset + len);
    }
    if end != bytes.len() {
        return Err(Error::Shape(format!("{} trailing payload bytes", bytes.len() - end)));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NormPlacement;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for placement in [NormPlacement::PreLn, NormPlacement::Sandwich] {
            let cfg = ModelConfig { norm_placement: placement, ..ModelConfig::tiny() };
            let p = ModelParams::<f32>::init(&cfg, 3).unwrap();
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&path, &cfg, &p, 12).unwrap();
            let (h, q) = load_checkpoint(&path).unwrap();
            assert_eq!(h.config, cfg);
            assert_eq!(h.step, 12);
            assert_eq!(p, q);
            assert_eq!(h.tensors[0].offset, 0);
            assert_eq!(h.tensors[1].offset, 64 * 16 * 4);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &cfg, &ModelParams::init(&cfg, 1).unwrap(), 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
