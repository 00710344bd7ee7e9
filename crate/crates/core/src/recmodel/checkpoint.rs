//! Versioned binary model checkpoints.
//!
//! Layout: 8-byte magic, little-endian u32 format version, 32-byte SHA-256
//! digest of the canonical (JSON) model configuration, u32 parameter count,
//! then per parameter: u32 name length, name bytes, u32 rows, u32 cols, and
//! rows×cols little-endian 64-bit floats in row-major order. Parameters are
//! written in sorted-name order so save is a pure function of the model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{ModelConfig, RecommenderModel};

const MAGIC: &[u8; 8] = b"TDCKPT01";
const VERSION: u32 = 1;

/// Digest of the canonical serialized configuration.
pub fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("model config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    hasher.finalize().into()
}

pub fn save_checkpoint(model: &RecommenderModel, path: &Path) -> Result<()> {
    if !model.params.all_finite() {
        return Err(Error::Checkpoint(
            "refusing to save non-finite parameters".to_string(),
        ));
    }
    let display = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&display, e))?);
    let wio = |e: std::io::Error| Error::io(&display, e);
    w.write_all(MAGIC).map_err(wio)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(wio)?;
    w.write_all(&config_digest(&model.config)).map_err(wio)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())
        .map_err(wio)?;
    for (name, value) in model.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(wio)?;
        w.write_all(name.as_bytes()).map_err(wio)?;
        w.write_all(&(value.nrows() as u32).to_le_bytes())
            .map_err(wio)?;
        w.write_all(&(value.ncols() as u32).to_le_bytes())
            .map_err(wio)?;
        for v in value.iter() {
            w.write_all(&v.to_le_bytes()).map_err(wio)?;
        }
    }
    w.flush().map_err(wio)
}

/// Load parameters saved for exactly this configuration.
pub fn load_checkpoint(cfg: &ModelConfig, path: &Path) -> Result<RecommenderModel> {
    let display = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(&display, e))?);
    let rio = |e: std::io::Error| Error::io(&display, e);
    let bad = |msg: &str| Error::Checkpoint(format!("{display}: {msg}"));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rio)?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(rio)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(rio)?;
    if digest != config_digest(cfg) {
        return Err(bad(
            "config digest mismatch: checkpoint was written for a different configuration",
        ));
    }
    r.read_exact(&mut word).map_err(rio)?;
    let count = u32::from_le_bytes(word) as usize;

    let mut model = RecommenderModel::new(cfg.clone())?;
    if count != model.params.len() {
        return Err(bad(&format!(
            "{count} parameter blocks, model defines {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        r.read_exact(&mut word).map_err(rio)?;
        let name_len = u32::from_le_bytes(word) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(rio)?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("non-UTF-8 name"))?;
        r.read_exact(&mut word).map_err(rio)?;
        let rows = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(rio)?;
        let cols = u32::from_le_bytes(word) as usize;
        let expected = model
            .params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.dim())
            .ok_or_else(|| bad(&format!("unknown parameter block `{name}`")))?;
        if expected != (rows, cols) {
            return Err(bad(&format!(
                "parameter `{name}` has shape {rows}x{cols}, expected {}x{}",
                expected.0, expected.1
            )));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf).map_err(rio)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(&format!("parameter `{name}` contains non-finite values")));
        }
        let arr = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| bad(&format!("parameter `{name}`: {e}")))?;
        model.params.set(&name, arr);
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest).map_err(rio)? {
        0 => Ok(model),
        _ => Err(bad("trailing bytes after final parameter block")),
    }
}
