//! Distance metrics, tiled all-pairs distance matrices, the matrix file
//! formats, and leave-one-out ranking.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::VectorSet;
use crate::error::{Error, Result};

pub const DIST_MAGIC: &[u8; 7] = b"WRDIST1";
pub const DEFAULT_TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Manhattan,
    Euclidean,
    /// Σ (a−b)²/(a+b) over bins with a+b > 0, no ½ factor.
    ChiSquare,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Manhattan => "manhattan",
            Metric::Euclidean => "euclidean",
            Metric::ChiSquare => "chi_square",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manhattan" | "l1" => Ok(Metric::Manhattan),
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "chi_square" | "chi2" => Ok(Metric::ChiSquare),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (expected manhattan, euclidean or chi_square)"
            ))),
        }
    }
}

#[inline]
fn distance_unchecked(a: &[f64], b: &[f64], m: Metric) -> f64 {
    match m {
        Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::ChiSquare => a
            .iter()
            .zip(b)
            .filter(|(x, y)| *x + *y > 0.0)
            .map(|(x, y)| (x - y) * (x - y) / (x + y))
            .sum(),
    }
}

fn check_chi_input(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| x < 0.0) {
        Some(index) => Err(Error::NegativeInput {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

pub fn distance(a: &[f64], b: &[f64], m: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if m == Metric::ChiSquare {
        check_chi_input(a)?;
        check_chi_input(b)?;
    }
    Ok(distance_unchecked(a, b, m))
}

/// Square matrix of f32 distances indexed in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f32>,
    ids: Vec<String>,
}

impl DistanceMatrix {
    /// Validates shape, finiteness, non-negativity and a zero diagonal.
    pub fn new(ids: Vec<String>, values: Vec<f32>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::IdMismatch(format!(
                "{} ids for {} matrix entries",
                n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Malformed(format!(
                "entry ({}, {}) = {} is not a non-negative finite distance",
                i / n,
                i % n,
                values[i]
            )));
        }
        if let Some(i) = (0..n).find(|&i| values[i * n + i] != 0.0) {
            return Err(Error::Malformed(format!("diagonal entry {i} is not zero")));
        }
        Ok(DistanceMatrix { n, values, ids })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Applies `f` to every off-diagonal entry.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<DistanceMatrix> {
        let n = self.n;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if i / n == i % n { 0.0 } else { f(v) })
            .collect();
        DistanceMatrix::new(self.ids.clone(), values)
    }
}

/// Raw pointer into the output buffer shared by the mirroring pass.
#[derive(Clone, Copy)]
struct SharedOut(*mut f32);
// SAFETY: the mirroring pass writes only strictly-lower entries and reads only
// strictly-upper ones; every lower entry is written by exactly one row task.
unsafe impl Send for SharedOut {}
unsafe impl Sync for SharedOut {}

/// All-pairs distances computed in `tile × tile` blocks of the upper
/// triangle and mirrored, accumulating in f64. Runs on the current rayon
/// pool; install a sized pool to control the worker count.
pub fn compute_distance_matrix(set: &VectorSet, metric: Metric, tile: usize) -> Result<DistanceMatrix> {
    let n = set.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot build a distance matrix of zero vectors".into()));
    }
    if tile == 0 {
        return Err(Error::InvalidArgument("tile size must be >= 1".into()));
    }
    if metric == Metric::ChiSquare {
        for row in set.rows() {
            check_chi_input(row)?;
        }
    }
    let mut values = vec![0f32; n * n];

    // Each task owns one band of `tile` rows and fills the tiles of that band
    // on or right of the diagonal.
    values
        .par_chunks_mut(tile * n)
        .enumerate()
        .for_each(|(band, out)| {
            let r0 = band * tile;
            let rows = out.len() / n;
            for c0 in (r0..n).step_by(tile) {
                let c1 = (c0 + tile).min(n);
                for ri in 0..rows {
                    let i = r0 + ri;
                    let a = set.row(i);
                    for j in c0.max(i + 1)..c1 {
                        out[ri * n + j] = distance_unchecked(a, set.row(j), metric) as f32;
                    }
                }
            }
        });

    let shared = SharedOut(values.as_mut_ptr());
    (1..n).into_par_iter().for_each(move |i| {
        let p = shared;
        for j in 0..i {
            // SAFETY: (j, i) with j < i lies in the upper triangle, which this
            // pass never writes; (i, j) is written only by task i.
            unsafe {
                *p.0.add(i * n + j) = *p.0.add(j * n + i);
            }
        }
    });

    Ok(DistanceMatrix {
        n,
        values,
        ids: set.ids.clone(),
    })
}

/// Reference all-pairs loop without tiling or symmetry.
pub fn naive_distance_matrix(set: &VectorSet, metric: Metric) -> Result<Vec<f64>> {
    let n = set.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = distance(set.row(i), set.row(j), metric)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Csv,
}

/// Binary: `WRDIST1`, u32 n, n × (u32 length + UTF-8 id), n² LE f32.
/// CSV: header `query_id,<ids...>`, one row per query, 9 significant digits.
pub fn write_matrix(mtx: &DistanceMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    match format {
        MatrixFormat::Binary => {
            let n = u32::try_from(mtx.n)
                .map_err(|_| Error::InvalidArgument("matrix too large for u32 size".into()))?;
            w.write_all(DIST_MAGIC).map_err(io)?;
            w.write_all(&n.to_le_bytes()).map_err(io)?;
            for id in &mtx.ids {
                w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
                w.write_all(id.as_bytes()).map_err(io)?;
            }
            for v in &mtx.values {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        MatrixFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            let header = std::iter::once("query_id").chain(mtx.ids.iter().map(String::as_str));
            cw.write_record(header).map_err(|e| Error::Malformed(e.to_string()))?;
            for (i, id) in mtx.ids.iter().enumerate() {
                let row = std::iter::once(id.clone())
                    .chain(mtx.row(i).iter().map(|v| format!("{v:.8e}")));
                cw.write_record(row).map_err(|e| Error::Malformed(e.to_string()))?;
            }
            cw.flush().map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads either format, detected by the binary magic.
pub fn read_matrix(path: &Path) -> Result<DistanceMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(DIST_MAGIC) {
        parse_binary(&bytes)
    } else if bytes.starts_with(b"query_id") {
        parse_csv(&bytes)
    } else {
        Err(Error::BadMagic { expected: "WRDIST1" })
    }
}

fn parse_binary(bytes: &[u8]) -> Result<DistanceMatrix> {
    let truncated = |expected: usize| Error::PayloadLength {
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    let mut at = DIST_MAGIC.len();
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| truncated(at + 4))
    };
    let n = word(at)? as usize;
    at += 4;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = word(at)? as usize;
        at += 4;
        let raw = bytes.get(at..at + len).ok_or_else(|| truncated(at + len))?;
        ids.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| Error::Malformed("image id is not UTF-8".into()))?,
        );
        at += len;
    }
    let expected = n
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(at))
        .ok_or_else(|| Error::Malformed("matrix header overflows".into()))?;
    if bytes.len() != expected {
        return Err(truncated(expected));
    }
    let values = bytes[at..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DistanceMatrix::new(ids, values)
}

fn parse_csv(bytes: &[u8]) -> Result<DistanceMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| Error::Malformed(e.to_string()))?
        .clone();
    let ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(Error::IdMismatch(format!(
                "row {} has {} values for {n} ids",
                i + 1,
                rec.len().saturating_sub(1)
            )));
        }
        if i >= n || rec[0] != ids[i] {
            return Err(Error::IdMismatch(format!(
                "row {} query `{}` does not match column order",
                i + 1,
                &rec[0]
            )));
        }
        for field in rec.iter().skip(1) {
            values.push(field.trim().parse::<f32>().map_err(|_| {
                Error::Malformed(format!("row {}: `{field}` is not a number", i + 1))
            })?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::IdMismatch(format!("{rows} rows for {n} ids")));
    }
    DistanceMatrix::new(ids, values)
}

/// Gallery order for one query: every other index, ascending distance, ties
/// by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query: usize,
    pub order: Vec<usize>,
}

pub fn rank_for_query(mtx: &DistanceMatrix, q: usize) -> Result<Ranking> {
    if q >= mtx.n {
        return Err(Error::IndexOutOfRange { index: q, len: mtx.n });
    }
    let gallery: Vec<usize> = (0..mtx.n).collect();
    Ok(rank_within(mtx, q, &gallery))
}

/// Ranks `gallery` (ascending manifest indices) for query `q`, skipping `q`.
pub fn rank_within(mtx: &DistanceMatrix, q: usize, gallery: &[usize]) -> Ranking {
    let row = mtx.row(q);
    let mut order: Vec<usize> = gallery.iter().copied().filter(|&j| j != q).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    Ranking { query: q, order }
}
