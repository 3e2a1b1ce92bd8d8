//! Binary checkpoint archive shared by the predictor and the policy.
//!
//! Layout (all integers little-endian `u32`, all floats little-endian `f32`):
//!
//! ```text
//! magic "EVONCKPT"
//! n_meta   { key_len key_bytes val_len val_bytes } * n_meta
//! n_tensor { name_len name_bytes n_rows n_cols f32-row-major-data } * n_tensor
//! ```
//!
//! Values are stored as `f32` row-major; the in-memory stores are `f64`, so a
//! save/load round trip quantizes to `f32` precision. Metadata carries model
//! configuration for compatibility checks at load time.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::store::ParamStore;
use crate::NnetError;

const MAGIC: &[u8; 8] = b"EVONCKPT";

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, NnetError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(NnetError::Format(format!("string length {len} implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| NnetError::Format(e.to_string()))
}

/// Writes every tensor of `store` plus `meta` to `path`.
pub fn save(
    store: &ParamStore,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<(), NnetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, meta.len() as u32)?;
    for (k, v) in meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    let tensors = store.snapshot();
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, arr) in &tensors {
        write_str(&mut w, name)?;
        let (rows, cols) = arr.dim();
        write_u32(&mut w, rows as u32)?;
        write_u32(&mut w, cols as u32)?;
        for &x in arr.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an archive into `(tensors, meta)` without imposing a model shape.
pub fn load_raw(
    path: &Path,
) -> Result<(BTreeMap<String, Array2<f64>>, BTreeMap<String, String>), NnetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnetError::Format("bad magic; not a checkpoint".to_string()));
    }
    let n_meta = read_u32(&mut r)?;
    let mut meta = BTreeMap::new();
    for _ in 0..n_meta {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.insert(k, v);
    }
    let n_tensor = read_u32(&mut r)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..n_tensor {
        let name = read_str(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(NnetError::Format(format!(
                "tensor `{name}` dims {rows}x{cols} implausible"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| NnetError::Format(e.to_string()))?;
        tensors.insert(name, arr);
    }
    Ok((tensors, meta))
}

/// Restores tensors into an already constructed store (same architecture).
/// Every tensor in the archive must exist in the store with matching shape,
/// and vice versa.
pub fn restore(store: &mut ParamStore, path: &Path) -> Result<BTreeMap<String, String>, NnetError> {
    let (tensors, meta) = load_raw(path)?;
    let expected: Vec<String> = store.names().map(str::to_string).collect();
    for name in &expected {
        if !tensors.contains_key(name) {
            return Err(NnetError::Format(format!(
                "checkpoint missing tensor `{name}`"
            )));
        }
    }
    for (name, arr) in tensors {
        if !store.contains(&name) {
            return Err(NnetError::Format(format!(
                "checkpoint has unknown tensor `{name}`"
            )));
        }
        if store.get(&name).dim() != arr.dim() {
            return Err(NnetError::Format(format!(
                "tensor `{name}` shape mismatch: store {:?} vs checkpoint {:?}",
                store.get(&name).dim(),
                arr.dim()
            )));
        }
        store.set(&name, arr)?;
    }
    Ok(meta)
}
