//! Binary tensor files, content hashing and run records.
//!
//! Every feature file and checkpoint tensor uses the same layout: the magic
//! bytes `OMSR`, a little-endian u32 row count, a little-endian u32 column
//! count, then row-major little-endian f32 values.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"OMSR";

/// Encode a matrix into the `OMSR` byte layout.
pub fn tensor_to_bytes(data: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = data.dim();
    let mut out = Vec::with_capacity(12 + rows * cols * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for row in data.rows() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8], origin: &Path) -> Result<Array2<f64>> {
    if bytes.len() < 12 || &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::format(origin, "missing OMSR magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} bytes for {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for chunk in bytes[12..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(origin, "non-finite value in tensor"));
        }
        values.push(v as f64);
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::format(origin, e.to_string()))
}

pub fn write_tensor(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&tensor_to_bytes(data))
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    tensor_from_bytes(&bytes, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Derive a child seed from a master seed and a context label. Stable across
/// platforms and thread schedules, so any parallel worker can recompute it.
pub fn derive_seed(master: u64, context: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(context.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[0..8].try_into().unwrap())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Provenance attached to every emitted artifact. `record_hash` covers the
/// command, resolved configuration and input hashes — wall time is recorded
/// but excluded so reruns of the same inputs produce the same hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_snapshot: serde_json::Value,
    pub input_hash: String,
    pub artifacts: Vec<String>,
    pub record_hash: String,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn new(
        command: impl Into<String>,
        config_snapshot: serde_json::Value,
        input_hash: impl Into<String>,
        artifacts: Vec<String>,
        wall_time_secs: f64,
    ) -> Self {
        let command = command.into();
        let input_hash = input_hash.into();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(config_snapshot.to_string().as_bytes());
        h.update(input_hash.as_bytes());
        for a in &artifacts {
            h.update(a.as_bytes());
        }
        let record_hash = hex::encode(h.finalize());
        RunRecord {
            command,
            config_snapshot,
            input_hash,
            artifacts,
            record_hash,
            wall_time_secs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("run_record.json"), self)
    }
}

/// Guard against silent overwrites: an existing non-empty target requires
/// `force`.
pub fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = path
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(true);
        if non_empty && !force {
            return Err(Error::WouldOverwrite(path.to_path_buf()));
        }
        if non_empty {
            fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
        }
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn prepare_out_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Hash a directory's contents (file names + bytes) in sorted order,
/// skipping `run_record.json` and run logs so timing never leaks into
/// content hashes.
pub fn hash_dir_contents(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let name = f.strip_prefix(dir).unwrap_or(&f);
        let name_str = name.to_string_lossy();
        if name_str == "run_record.json" || name_str == "run_log.jsonl" {
            continue;
        }
        h.update(name_str.as_bytes());
        h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
