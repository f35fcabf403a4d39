//! Binary vector store: `WRDESC1`, u64 vector length, u64 count, then
//! row-major little-endian f64 values in manifest order. Image ids live in a
//! sidecar text file `<path>.ids`, one per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::corpus::write_id_index;
use crate::error::{Error, Result};

pub const DESC_MAGIC: &[u8; 7] = b"WRDESC1";

/// Row-major set of equal-length vectors with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl VectorSet {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        Ok(VectorSet { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        VectorSet::new(ids, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks(0) panics, and a zero-dim set has no data anyway
        (0..self.len()).map(move |i| self.row(i))
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_vectors(path: &Path, set: &VectorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(DESC_MAGIC)?;
    put(&(set.dim as u64).to_le_bytes())?;
    put(&(set.len() as u64).to_le_bytes())?;
    for v in &set.data {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_id_index(&ids_path(path), &set.ids)
}

pub fn read_vectors(path: &Path) -> Result<VectorSet> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < DESC_MAGIC.len() || &bytes[..DESC_MAGIC.len()] != DESC_MAGIC {
        return Err(Error::BadMagic { expected: "WRDESC1" });
    }
    let header = DESC_MAGIC.len() + 16;
    if bytes.len() < header {
        return Err(Error::PayloadLength {
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let dim = word(7);
    let count = word(15);
    let expected = dim
        .checked_mul(count)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(header as u64))
        .ok_or_else(|| Error::Malformed("vector store header overflows".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadLength {
            expected,
            found: bytes.len() as u64,
        });
    }
    let data: Vec<f64> = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let ids_file = ids_path(path);
    let f = File::open(&ids_file).map_err(|e| Error::io(&ids_file, e))?;
    let ids = BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&ids_file, e))?;
    if ids.len() as u64 != count {
        return Err(Error::IdMismatch(format!(
            "{} lists {} ids for {count} vectors",
            ids_file.display(),
            ids.len()
        )));
    }
    VectorSet::new(ids, dim as usize, data)
}
