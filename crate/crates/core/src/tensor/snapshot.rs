//! Binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"TGTSNAP1"
//! count      u64       number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims (rank x u64)
//!   values   product(dims) x f64 (IEEE-754 bits)
//! ```
//!
//! Values are stored bit-for-bit, so a round trip is exact.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::ParamStore;

const MAGIC: &[u8; 8] = b"TGTSNAP1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a tensor snapshot (bad magic)")]
    BadMagic,
    #[error("truncated snapshot while reading {0}")]
    Truncated(String),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("unexpected tensor `{0}`")]
    Unexpected(String),
}

pub fn write_to(store: &ParamStore, w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, p) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N], SnapshotError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| SnapshotError::Truncated(what.to_string()))?;
    Ok(buf)
}

pub fn read_from(r: &mut impl Read) -> Result<ParamStore, SnapshotError> {
    let magic: [u8; 8] = read_exact(r, "magic")?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let count = u64::from_le_bytes(read_exact(r, "count")?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(r, "name length")?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| SnapshotError::Truncated("name".into()))?;
        let name = String::from_utf8(name).map_err(|_| SnapshotError::BadName)?;
        let rank = u32::from_le_bytes(read_exact(r, "rank")?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(r, &name)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(r, &name)?));
        }
        store.insert(name, &shape, data);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), SnapshotError> {
    let io_err = |source| SnapshotError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    write_to(store, &mut w).and_then(|_| w.flush()).map_err(io_err)
}

pub fn load(path: &Path) -> Result<ParamStore, SnapshotError> {
    let file = std::fs::File::open(path).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    read_from(&mut io::BufReader::new(file))
}

/// Checks that `loaded` has exactly the tensors and shapes of `template`.
pub fn check_compatible(template: &ParamStore, loaded: &ParamStore) -> Result<(), SnapshotError> {
    for (name, p) in template.iter() {
        let found = loaded.get(name).map_err(|_| SnapshotError::Missing(name.clone()))?;
        if found.shape != p.shape {
            return Err(SnapshotError::ShapeMismatch {
                name: name.clone(),
                expected: p.shape.clone(),
                found: found.shape.clone(),
            });
        }
    }
    if let Some(extra) = loaded.names().find(|n| !template.contains(n)) {
        return Err(SnapshotError::Unexpected(extra.clone()));
    }
    Ok(())
}
