//! PCA projection followed by the signed square root (Hellinger) map and ℓ2
//! normalization.
//!
//! The PCA basis is fit either on an external descriptor set
//! ([`FitMode::Classification`]) or on the evaluated corpus itself
//! ([`FitMode::Retrieval`]); nothing else differs between the two.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::VectorSet;
use crate::error::{Error, Result};

pub const DEFAULT_PCA_DIM: usize = 200;
pub const PCA_MAGIC: &[u8; 6] = b"WRPCA1";

/// Inputs whose largest magnitude is at or below this are treated as zero by
/// [`hellinger_l2`]. Centering identical descriptors leaves round-off of this
/// order rather than exact zeros.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Classification,
    Retrieval,
}

impl FitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMode::Classification => "classification",
            FitMode::Retrieval => "retrieval",
        }
    }

    fn code(self) -> u8 {
        match self {
            FitMode::Classification => 0,
            FitMode::Retrieval => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FitMode::Classification),
            1 => Ok(FitMode::Retrieval),
            other => Err(Error::Malformed(format!("unknown fit mode code {other}"))),
        }
    }
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(FitMode::Classification),
            "retrieval" => Ok(FitMode::Retrieval),
            other => Err(Error::Config(format!(
                "unknown PCA mode `{other}` (expected classification or retrieval)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub input_dim: usize,
    pub k: usize,
    pub mean: Vec<f64>,
    /// `k × input_dim`, row-major, orthonormal rows.
    pub components: Vec<f64>,
    /// Sample variance along each component (denominator n−1).
    pub explained_variance: Vec<f64>,
    pub fit_mode: FitMode,
    pub fit_corpus_id: String,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// `components · (d − mean)`.
    pub fn project(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: d.len(),
            });
        }
        let centered: Vec<f64> = d.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.k)
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(c, x)| c * x)
                    .sum()
            })
            .collect())
    }

    /// Projection scaled to unit variance per component; zero-variance
    /// components map to 0.
    pub fn project_whitened(&self, d: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.project(d)?;
        for (v, var) in p.iter_mut().zip(&self.explained_variance) {
            *v = if *var > 0.0 { *v / var.sqrt() } else { 0.0 };
        }
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
        put(PCA_MAGIC)?;
        put(&(self.input_dim as u64).to_le_bytes())?;
        put(&(self.k as u64).to_le_bytes())?;
        put(&[self.fit_mode.code()])?;
        put(&(self.fit_corpus_id.len() as u32).to_le_bytes())?;
        put(self.fit_corpus_id.as_bytes())?;
        for v in self.mean.iter().chain(&self.components).chain(&self.explained_variance) {
            put(&v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(PCA_MAGIC.len()).ok() != Some(&PCA_MAGIC[..]) {
            return Err(Error::BadMagic { expected: "WRPCA1" });
        }
        let input_dim = cur.u64()? as usize;
        let k = cur.u64()? as usize;
        let fit_mode = FitMode::from_code(cur.take(1)?[0])?;
        let id_len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
        let fit_corpus_id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|_| Error::Malformed("corpus id is not UTF-8".into()))?;
        let floats = input_dim
            .checked_mul(k + 1)
            .and_then(|v| v.checked_add(k))
            .ok_or_else(|| Error::Malformed("model header overflows".into()))?;
        let expected = (cur.at + floats * 8) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::PayloadLength {
                expected,
                found: bytes.len() as u64,
            });
        }
        let mut values = bytes[cur.at..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mean: Vec<f64> = values.by_ref().take(input_dim).collect();
        let components: Vec<f64> = values.by_ref().take(k * input_dim).collect();
        let explained_variance: Vec<f64> = values.collect();
        Ok(PcaModel {
            input_dim,
            k,
            mean,
            components,
            explained_variance,
            fit_mode,
            fit_corpus_id,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::PayloadLength {
                expected: (self.at + n) as u64,
                found: self.bytes.len() as u64,
            },
        )?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Fits principal components by SVD of the mean-centered data matrix.
///
/// Components are ordered by decreasing singular value and signed so that
/// the largest-magnitude coordinate of each is positive. The number kept is
/// `min(dim, n − 1, input_dim)`.
pub fn fit_pca(samples: &VectorSet, dim: usize, mode: FitMode, corpus_id: &str) -> Result<PcaModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("PCA dimension must be >= 1".into()));
    }
    let d = samples.dim;
    let mut mean = vec![0.0; d];
    for row in samples.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| samples.row(i)[j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Internal("SVD did not produce right singular vectors".into()))?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let k = dim.min(n - 1).min(d);

    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, &v)| if v.abs() > best.1 { (j, v.abs()) } else { best })
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend_from_slice(&row);
        explained_variance.push(sv[idx] * sv[idx] / (n - 1) as f64);
    }
    Ok(PcaModel {
        input_dim: d,
        k,
        mean,
        components,
        explained_variance,
        fit_mode: mode,
        fit_corpus_id: corpus_id.to_string(),
    })
}

/// Result of [`hellinger_l2`]: unit-norm values, or zeros with `degenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Elementwise `sign(x)·√|x|`, then ℓ2 normalization.
pub fn hellinger_l2(v: &[f64]) -> Embedding {
    if v.iter().all(|x| x.abs() <= DEGENERATE_TOL) {
        return Embedding {
            values: vec![0.0; v.len()],
            degenerate: true,
        };
    }
    let mut out: Vec<f64> = v.iter().map(|&x| x.signum() * x.abs().sqrt()).collect();
    // zero stays zero rather than picking up signum(0.0) = 1
    for (o, x) in out.iter_mut().zip(v) {
        if *x == 0.0 {
            *o = 0.0;
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.iter_mut().for_each(|x| *x /= norm);
    Embedding {
        values: out,
        degenerate: false,
    }
}

/// Where the PCA basis comes from.
#[derive(Debug, Clone, Copy)]
pub enum PcaSource<'a> {
    /// Fit on the corpus being embedded (retrieval scenario).
    SelfFit,
    /// Fit on an external training set (classification scenario).
    External(&'a VectorSet),
    /// Reuse an already fitted model.
    Model(&'a PcaModel),
}

impl<'a> PcaSource<'a> {
    pub fn for_mode(mode: FitMode, external: Option<&'a VectorSet>) -> Result<Self> {
        match (mode, external) {
            (FitMode::Retrieval, _) => Ok(PcaSource::SelfFit),
            (FitMode::Classification, Some(t)) => Ok(PcaSource::External(t)),
            (FitMode::Classification, None) => Err(Error::InvalidArgument(
                "classification mode needs an external training descriptor set".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub fit_mode: FitMode,
    pub model: PcaModel,
    pub embeddings: VectorSet,
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmbedOptions {
    pub whiten: bool,
}

pub fn embed_corpus(
    descriptors: &VectorSet,
    source: PcaSource<'_>,
    dim: usize,
    corpus_id: &str,
    opts: EmbedOptions,
) -> Result<EmbeddingBatch> {
    let model = match source {
        PcaSource::SelfFit => fit_pca(descriptors, dim, FitMode::Retrieval, corpus_id)?,
        PcaSource::External(train) => {
            if train.dim != descriptors.dim {
                return Err(Error::DimensionMismatch {
                    expected: train.dim,
                    found: descriptors.dim,
                });
            }
            fit_pca(train, dim, FitMode::Classification, "external")?
        }
        PcaSource::Model(m) => m.clone(),
    };
    if model.input_dim != descriptors.dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            found: descriptors.dim,
        });
    }
    let embedded = (0..descriptors.len())
        .into_par_iter()
        .map(|i| {
            let row = descriptors.row(i);
            let p = if opts.whiten {
                model.project_whitened(row)?
            } else {
                model.project(row)?
            };
            Ok(hellinger_l2(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = embedded.iter().map(|e| e.degenerate).collect();
    let data: Vec<f64> = embedded.into_iter().flat_map(|e| e.values).collect();
    Ok(EmbeddingBatch {
        fit_mode: model.fit_mode,
        embeddings: VectorSet::new(descriptors.ids.clone(), model.k, data)?,
        model,
        degenerate,
    })
}
