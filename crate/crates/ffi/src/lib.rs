//! C ABI over the writer-retrieval engine.
//!
//! Every entry point returns a [`WrStatus`]; on failure the message is kept
//! per thread and can be fetched with [`wr_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_load`/`*_read`/`*_fit`/`*_compute` calls
//! and released with the matching `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use writer_retrieval::corpus::{load_manifest, CorpusManifest};
use writer_retrieval::descriptor::{extract_descriptor, read_vectors, write_vectors, LbpConfig, VectorSet};
use writer_retrieval::embed::{embed_corpus, fit_pca, hellinger_l2, EmbedOptions, FitMode, PcaModel, PcaSource};
use writer_retrieval::evaluate::{evaluate_matrix, EvalReport};
use writer_retrieval::preprocess::GrayImage;
use writer_retrieval::retrieval::{
    compute_distance_matrix, distance, read_matrix, write_matrix, DistanceMatrix, MatrixFormat, Metric,
};
use writer_retrieval::{Error, ErrorClass};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InputData = 3,
    BufferTooSmall = 4,
    Undefined = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrMetric {
    Manhattan = 0,
    Euclidean = 1,
    ChiSquare = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrFitMode {
    Classification = 0,
    Retrieval = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrMatrixFormat {
    Binary = 0,
    Csv = 1,
}

pub struct WrManifest(CorpusManifest);
pub struct WrVectorSet(VectorSet);
pub struct WrPcaModel(PcaModel);
pub struct WrDistanceMatrix(DistanceMatrix);
pub struct WrReport(EvalReport);

impl From<WrMetric> for Metric {
    fn from(m: WrMetric) -> Self {
        match m {
            WrMetric::Manhattan => Metric::Manhattan,
            WrMetric::Euclidean => Metric::Euclidean,
            WrMetric::ChiSquare => Metric::ChiSquare,
        }
    }
}

impl From<WrFitMode> for FitMode {
    fn from(m: WrFitMode) -> Self {
        match m {
            WrFitMode::Classification => FitMode::Classification,
            WrFitMode::Retrieval => FitMode::Retrieval,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(WrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UndefinedAp => WrStatus::Undefined,
            _ => match e.class() {
                ErrorClass::Usage => WrStatus::InvalidArgument,
                ErrorClass::InputData => WrStatus::InputData,
                ErrorClass::Internal => WrStatus::Internal,
            },
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: WrStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            WrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(WrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(fail(WrStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(WrStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(WrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(WrStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(WrStatus::NullPointer, "output pointer is null"));
    }
    *out = v;
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out_len < src.len() {
        return Err(fail(
            WrStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(fail(WrStatus::NullPointer, "output buffer is null"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn wr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- manifest ----

#[no_mangle]
pub unsafe extern "C" fn wr_manifest_load(path: *const c_char, out: *mut *mut WrManifest) -> WrStatus {
    guard(|| {
        let m = load_manifest(&path_arg(path)?)?;
        put(out, WrManifest(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_manifest_len(m: *const WrManifest) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn wr_manifest_free(m: *mut WrManifest) {
    free(m)
}

// ---- descriptors ----

/// Length of the descriptor produced for `n_radii` radii.
#[no_mangle]
pub extern "C" fn wr_descriptor_dim(n_radii: usize) -> usize {
    n_radii * 256
}

/// LBP descriptor of an 8-bit grayscale buffer (row-major, `width * height`
/// bytes). `radii` may be null for the default radii 1..=12.
#[no_mangle]
pub unsafe extern "C" fn wr_extract_descriptor(
    pixels: *const u8,
    width: usize,
    height: usize,
    radii: *const usize,
    n_radii: usize,
    use_mask: bool,
    out: *mut f64,
    out_len: usize,
) -> WrStatus {
    guard(|| {
        let px = slice_arg(pixels, width.saturating_mul(height), "pixels")?;
        let img = GrayImage::new(width, height, px.to_vec())?;
        let mut cfg = if radii.is_null() {
            LbpConfig::default()
        } else {
            LbpConfig::with_radii(slice_arg(radii, n_radii, "radii")?.to_vec())
        };
        cfg.use_mask = use_mask;
        let d = extract_descriptor(&img, &cfg)?;
        copy_out(&d.values, out, out_len)
    })
}

// ---- vector sets ----

/// Builds a set from `n` NUL-terminated ids and an `n * dim` row-major buffer.
#[no_mangle]
pub unsafe extern "C" fn wr_vectors_new(
    ids: *const *const c_char,
    n: usize,
    dim: usize,
    data: *const f64,
    out: *mut *mut WrVectorSet,
) -> WrStatus {
    guard(|| {
        let raw = slice_arg(ids, n, "ids")?;
        let mut names = Vec::with_capacity(n);
        for &p in raw {
            if p.is_null() {
                return Err(fail(WrStatus::NullPointer, "id is null"));
            }
            let s = CStr::from_ptr(p)
                .to_str()
                .map_err(|_| fail(WrStatus::InvalidArgument, "id is not valid UTF-8"))?;
            names.push(s.to_string());
        }
        let values = slice_arg(data, n.saturating_mul(dim), "data")?.to_vec();
        put(out, WrVectorSet(VectorSet::new(names, dim, values)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_vectors_read(path: *const c_char, out: *mut *mut WrVectorSet) -> WrStatus {
    guard(|| {
        let v = read_vectors(&path_arg(path)?)?;
        put(out, WrVectorSet(v))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_vectors_write(set: *const WrVectorSet, path: *const c_char) -> WrStatus {
    guard(|| {
        let set = deref(set, "vector set")?;
        write_vectors(&path_arg(path)?, &set.0)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_vectors_len(set: *const WrVectorSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn wr_vectors_dim(set: *const WrVectorSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim)
}

/// Copies row `i` into `out`.
#[no_mangle]
pub unsafe extern "C" fn wr_vectors_row(set: *const WrVectorSet, i: usize, out: *mut f64, out_len: usize) -> WrStatus {
    guard(|| {
        let set = &deref(set, "vector set")?.0;
        if i >= set.len() {
            return Err(fail(
                WrStatus::InvalidArgument,
                format!("row {i} out of range for {} rows", set.len()),
            ));
        }
        copy_out(set.row(i), out, out_len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_vectors_free(set: *mut WrVectorSet) {
    free(set)
}

// ---- PCA + Hellinger ----

#[no_mangle]
pub unsafe extern "C" fn wr_pca_fit(
    samples: *const WrVectorSet,
    dim: usize,
    mode: WrFitMode,
    out: *mut *mut WrPcaModel,
) -> WrStatus {
    guard(|| {
        let s = deref(samples, "samples")?;
        let m = fit_pca(&s.0, dim, mode.into(), "ffi")?;
        put(out, WrPcaModel(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_pca_read(path: *const c_char, out: *mut *mut WrPcaModel) -> WrStatus {
    guard(|| {
        let m = PcaModel::read(&path_arg(path)?)?;
        put(out, WrPcaModel(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_pca_write(model: *const WrPcaModel, path: *const c_char) -> WrStatus {
    guard(|| {
        let m = deref(model, "model")?;
        m.0.write(&path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_pca_input_dim(model: *const WrPcaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim)
}

#[no_mangle]
pub unsafe extern "C" fn wr_pca_k(model: *const WrPcaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.k)
}

/// Projects one descriptor onto the model's `k` components.
#[no_mangle]
pub unsafe extern "C" fn wr_pca_project(
    model: *const WrPcaModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> WrStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let p = m.0.project(slice_arg(input, input_len, "input")?)?;
        copy_out(&p, out, out_len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_pca_free(model: *mut WrPcaModel) {
    free(model)
}

/// Signed square root followed by l2 normalization. `degenerate` (may be
/// null) is set when the input was numerically zero.
#[no_mangle]
pub unsafe extern "C" fn wr_hellinger_l2(
    input: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
    degenerate: *mut bool,
) -> WrStatus {
    guard(|| {
        let e = hellinger_l2(slice_arg(input, len, "input")?);
        copy_out(&e.values, out, out_len)?;
        if !degenerate.is_null() {
            *degenerate = e.degenerate;
        }
        Ok(())
    })
}

/// Projects every descriptor with `model` (or self-fits `dim` components
/// when `model` is null) and applies the Hellinger map.
#[no_mangle]
pub unsafe extern "C" fn wr_embed(
    descriptors: *const WrVectorSet,
    model: *const WrPcaModel,
    dim: usize,
    out: *mut *mut WrVectorSet,
) -> WrStatus {
    guard(|| {
        let d = deref(descriptors, "descriptors")?;
        let source = match model.as_ref() {
            Some(m) => PcaSource::Model(&m.0),
            None => PcaSource::SelfFit,
        };
        let batch = embed_corpus(&d.0, source, dim, "ffi", EmbedOptions::default())?;
        put(out, WrVectorSet(batch.embeddings))
    })
}

// ---- distances ----

#[no_mangle]
pub unsafe extern "C" fn wr_distance(
    a: *const f64,
    b: *const f64,
    len: usize,
    metric: WrMetric,
    out: *mut f64,
) -> WrStatus {
    guard(|| {
        let d = distance(slice_arg(a, len, "a")?, slice_arg(b, len, "b")?, metric.into())?;
        write_out(out, d)
    })
}

/// All-pairs matrix of a vector set. `tile == 0` selects the default.
#[no_mangle]
pub unsafe extern "C" fn wr_distmat_compute(
    set: *const WrVectorSet,
    metric: WrMetric,
    tile: usize,
    out: *mut *mut WrDistanceMatrix,
) -> WrStatus {
    guard(|| {
        let s = deref(set, "vector set")?;
        let tile = if tile == 0 {
            writer_retrieval::retrieval::DEFAULT_TILE
        } else {
            tile
        };
        let m = compute_distance_matrix(&s.0, metric.into(), tile)?;
        put(out, WrDistanceMatrix(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_distmat_read(path: *const c_char, out: *mut *mut WrDistanceMatrix) -> WrStatus {
    guard(|| {
        let m = read_matrix(&path_arg(path)?)?;
        put(out, WrDistanceMatrix(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_distmat_write(
    mtx: *const WrDistanceMatrix,
    path: *const c_char,
    format: WrMatrixFormat,
) -> WrStatus {
    guard(|| {
        let m = deref(mtx, "matrix")?;
        let format = match format {
            WrMatrixFormat::Binary => MatrixFormat::Binary,
            WrMatrixFormat::Csv => MatrixFormat::Csv,
        };
        write_matrix(&m.0, &path_arg(path)?, format)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_distmat_n(mtx: *const WrDistanceMatrix) -> usize {
    mtx.as_ref().map_or(0, |m| m.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn wr_distmat_get(mtx: *const WrDistanceMatrix, i: usize, j: usize, out: *mut f32) -> WrStatus {
    guard(|| {
        let m = &deref(mtx, "matrix")?.0;
        if i >= m.n() || j >= m.n() {
            return Err(fail(
                WrStatus::InvalidArgument,
                format!("({i}, {j}) out of range for n = {}", m.n()),
            ));
        }
        write_out(out, m.get(i, j))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_distmat_free(mtx: *mut WrDistanceMatrix) {
    free(mtx)
}

// ---- evaluation ----

/// Leave-one-image-out evaluation; matrix ids must match the manifest order.
#[no_mangle]
pub unsafe extern "C" fn wr_evaluate(
    mtx: *const WrDistanceMatrix,
    manifest: *const WrManifest,
    out: *mut *mut WrReport,
) -> WrStatus {
    guard(|| {
        let m = deref(mtx, "matrix")?;
        let man = deref(manifest, "manifest")?;
        let r = evaluate_matrix(&m.0, &man.0)?;
        put(out, WrReport(r))
    })
}

/// Mean average precision; `WR_STATUS_UNDEFINED` when no query had a
/// relevant item.
#[no_mangle]
pub unsafe extern "C" fn wr_report_map(report: *const WrReport, out: *mut f64) -> WrStatus {
    guard(|| {
        let r = deref(report, "report")?;
        let v = r.0.map.ok_or_else(|| fail(WrStatus::Undefined, "no included queries"))?;
        write_out(out, v)
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_report_top1(report: *const WrReport, out: *mut f64) -> WrStatus {
    guard(|| {
        let r = deref(report, "report")?;
        let v = r.0.top1.ok_or_else(|| fail(WrStatus::Undefined, "no included queries"))?;
        write_out(out, v)
    })
}

#[no_mangle]
pub unsafe extern "C" fn wr_report_used_queries(report: *const WrReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.used_queries)
}

#[no_mangle]
pub unsafe extern "C" fn wr_report_excluded_queries(report: *const WrReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.excluded_queries)
}

#[no_mangle]
pub unsafe extern "C" fn wr_report_free(report: *mut WrReport) {
    free(report)
}
