//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `KGBM` |
//! | 4 | format version, u32 = 1 |
//! | 1 | model kind (0 RESCAL, 1 DISTMULT, 2 HolE, 3 ComplEx, 4 TransE) |
//! | 4 | N, u32 |
//! | 4 | K, u32 |
//! | 4 | r, u32 |
//!
//! followed by every parameter array as row-major f64 in block order
//! (entities then relations; ComplEx: `A_re, A_im, R_re, R_im`).
//!
//! A sidecar text file `<model>.meta` holds `key = value` lines with the
//! hyperparameters and the dataset checksum.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Embedding, Model, ModelKind, Scorer};
use crate::error::{KgError, Result};

pub const MAGIC: &[u8; 4] = b"KGBM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.kind().code());
    for v in [model.num_entities(), model.num_relations(), model.dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in model.blocks() {
        for v in block.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN {
        return Err(KgError::Format("file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(KgError::Format("bad magic".into()));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(KgError::Format(format!("unsupported version {version}")));
    }
    let kind = ModelKind::from_code(bytes[8])
        .ok_or_else(|| KgError::Format(format!("unknown model kind {}", bytes[8])))?;
    let n = read_u32(bytes, 9) as usize;
    let k = read_u32(bytes, 13) as usize;
    let r = read_u32(bytes, 17) as usize;
    let mut model = Model::zeros(kind, n, k, r);
    let expected = HEADER_LEN + 8 * model.num_params();
    if bytes.len() != expected {
        return Err(KgError::Format(format!(
            "payload size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let mut chunks = bytes[HEADER_LEN..].chunks_exact(8);
    for block in model.blocks_mut() {
        for (v, c) in block.data.iter_mut().zip(&mut chunks) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    Ok(model)
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn read_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| KgError::io(path, e))?;
    from_bytes(&bytes)
}

/// `<model>.meta`
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_sidecar(model_path: &Path, entries: &[(String, String)]) -> Result<()> {
    write_atomic(&sidecar_path(model_path), render_kv(entries).as_bytes())
}

pub fn read_sidecar(model_path: &Path) -> Result<Vec<(String, String)>> {
    let path = sidecar_path(model_path);
    let text = fs::read_to_string(&path).map_err(|e| KgError::io(&path, e))?;
    parse_kv(&text, &path)
}

pub(crate) fn render_kv(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses flat `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| KgError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: "expected 'key = value'".into(),
        })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory and renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| KgError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| KgError::io(path, e))
}
