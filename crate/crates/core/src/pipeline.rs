//! Stage orchestration shared by the `wr` binary and the integration tests.
//!
//! Every stage reads its inputs, writes its artifacts under an output
//! directory and records a run log (`<stage>.run.json`) holding the config,
//! SHA-256 digests of the direct inputs and the crate version. Nothing in an
//! artifact depends on wall-clock time, so identical inputs and config give
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{save_manifest, CorpusManifest, ManifestEntry};
use crate::descriptor::{
    extract_descriptor, read_vectors, write_vectors, Interpolation, LbpConfig, VectorSet,
};
use crate::embed::{embed_corpus, fit_pca, EmbedOptions, EmbeddingBatch, FitMode, PcaModel, PcaSource};
use crate::error::{Error, Result};
use crate::evaluate::{competition_subsets, evaluate_matrix, evaluate_subsets, format_table, EvalReport, SubsetDef, SubsetReport};
use crate::preprocess::{crop_border, deskew_projection, load_gray, resize_max_dim, save_png, GrayImage};
use crate::retrieval::{compute_distance_matrix, write_matrix, DistanceMatrix, MatrixFormat, Metric};

pub const WORKERS_ENV: &str = "WR_WORKERS";

fn default_output_dir() -> PathBuf {
    PathBuf::from("wr-out")
}
fn default_crop() -> usize {
    crate::preprocess::DEFAULT_CROP_MARGIN
}
fn default_resize() -> usize {
    crate::preprocess::DEFAULT_RESIZE_TARGET
}
fn default_radii() -> Vec<usize> {
    (1..=12).collect()
}
fn default_mask_dilation() -> usize {
    3
}
fn default_pca_dim() -> usize {
    crate::embed::DEFAULT_PCA_DIM
}
fn default_metric() -> Metric {
    Metric::Manhattan
}
fn default_tile() -> usize {
    crate::retrieval::DEFAULT_TILE
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

/// Flat key-value run configuration. Every field defaults to the baseline
/// setting: 42 px crop, 2000 px resize, radii 1–12, 200-d PCA, Manhattan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// External training corpus for classification-mode PCA.
    #[serde(default)]
    pub train_manifest: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Apply crop/resize/deskew before descriptor extraction.
    #[serde(default = "default_true")]
    pub preprocess: bool,
    #[serde(default = "default_crop")]
    pub crop_margin: usize,
    #[serde(default = "default_resize")]
    pub resize_target: usize,
    #[serde(default)]
    pub deskew: bool,
    #[serde(default = "default_radii")]
    pub radii: Vec<usize>,
    #[serde(default)]
    pub use_mask: bool,
    #[serde(default = "default_mask_dilation")]
    pub mask_dilation: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default = "default_pca_dim")]
    pub pca_dim: usize,
    /// PCA modes for `run-all`; empty means retrieval, plus classification
    /// when a training manifest is configured.
    #[serde(default)]
    pub pca_modes: Vec<FitMode>,
    #[serde(default)]
    pub whiten: bool,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// `name=tag,tag` definitions; empty means the competition groupings.
    #[serde(default)]
    pub subsets: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.lbp().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.pca_dim == 0 {
            return Err(Error::Config("pca_dim must be >= 1".into()));
        }
        if self.tile == 0 {
            return Err(Error::Config("tile must be >= 1".into()));
        }
        if self.resize_target == 0 {
            return Err(Error::Config("resize_target must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.subset_defs()?;
        if self.pca_modes.contains(&FitMode::Classification) && self.train_manifest.is_none() {
            return Err(Error::Config(
                "classification PCA mode requires train_manifest".into(),
            ));
        }
        Ok(())
    }

    pub fn lbp(&self) -> LbpConfig {
        LbpConfig {
            radii: self.radii.clone(),
            neighbors: 8,
            use_mask: self.use_mask,
            mask_dilation: self.mask_dilation,
            interpolation: self.interpolation,
        }
    }

    pub fn modes(&self) -> Vec<FitMode> {
        if !self.pca_modes.is_empty() {
            return self.pca_modes.clone();
        }
        let mut m = vec![FitMode::Retrieval];
        if self.train_manifest.is_some() {
            m.push(FitMode::Classification);
        }
        m
    }

    pub fn subset_defs(&self) -> Result<Vec<SubsetDef>> {
        if self.subsets.is_empty() {
            return Ok(competition_subsets());
        }
        self.subsets.iter().map(|s| SubsetDef::parse(s)).collect()
    }
}

/// Parses `1-12`, `1,2,4` or a mix like `1-3,8`.
pub fn parse_radii(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad radius `{t}`")))
        };
        match part.split_once('-') {
            Some((a, b)) => out.extend(num(a)?..=num(b)?),
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

/// Runs `f` on a rayon pool with `workers` threads (or the global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Internal(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable identifier for a corpus: digest of its ordered image ids.
pub fn corpus_id(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())[..16].to_string()
}

#[derive(Debug, Serialize)]
struct RunLog<'a> {
    stage: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
}

pub fn write_run_log(out_dir: &Path, stage: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    let mut digests = BTreeMap::new();
    for p in inputs {
        digests.insert(p.display().to_string(), sha256_file(p)?);
    }
    let log = RunLog {
        stage,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        inputs: digests,
    };
    write_json(&out_dir.join(format!("{stage}.run.json")), &log)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Crop, downscale and optionally deskew one page.
pub fn preprocess_page(img: &GrayImage, cfg: &RunConfig) -> Result<GrayImage> {
    let img = crop_border(img, cfg.crop_margin)?;
    let img = resize_max_dim(&img, cfg.resize_target)?;
    Ok(if cfg.deskew { deskew_projection(&img).1 } else { img })
}

fn with_image_context(e: Error, id: &str) -> Error {
    match e {
        Error::ImageTooSmall { width, height, requirement } => Error::ImageTooSmall {
            width,
            height,
            requirement: format!("{requirement} (image `{id}`)"),
        },
        other => other,
    }
}

/// Writes preprocessed pages as PNG plus a manifest pointing at them.
pub fn stage_preprocess(manifest: &CorpusManifest, cfg: &RunConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let img_dir = out_dir.join("images");
    ensure_dir(&img_dir)?;
    let entries = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let e = &manifest.entries()[i];
            let img = load_gray(&manifest.resolved_path(i))?;
            let img = preprocess_page(&img, cfg).map_err(|err| with_image_context(err, &e.image_id))?;
            let rel = PathBuf::from("images").join(format!("{}.png", e.image_id));
            save_png(&img, &out_dir.join(&rel))?;
            Ok(ManifestEntry {
                path: rel,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = CorpusManifest::new(entries)?.with_base_dir(out_dir);
    save_manifest(&out, &out_dir.join("manifest.csv"))?;
    Ok(out)
}

/// Descriptors for every manifest entry, in manifest order.
pub fn extract_corpus(manifest: &CorpusManifest, cfg: &RunConfig) -> Result<VectorSet> {
    let lbp = cfg.lbp();
    lbp.validate()?;
    let rows = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let id = &manifest.entries()[i].image_id;
            let img = load_gray(&manifest.resolved_path(i))?;
            let img = if cfg.preprocess { preprocess_page(&img, cfg) } else { Ok(img) }
                .map_err(|e| with_image_context(e, id))?;
            extract_descriptor(&img, &lbp)
                .map(|d| d.values)
                .map_err(|e| with_image_context(e, id))
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = manifest.ids().map(String::from).collect();
    if rows.is_empty() {
        return VectorSet::new(ids, lbp.dim(), Vec::new());
    }
    VectorSet::from_rows(ids, &rows)
}

pub fn stage_extract(manifest: &CorpusManifest, cfg: &RunConfig, out_path: &Path) -> Result<VectorSet> {
    let set = extract_corpus(manifest, cfg)?;
    write_vectors(out_path, &set)?;
    Ok(set)
}

pub fn stage_fit_pca(descriptors: &VectorSet, cfg: &RunConfig, mode: FitMode, out_path: &Path) -> Result<PcaModel> {
    let model = fit_pca(descriptors, cfg.pca_dim, mode, &corpus_id(&descriptors.ids))?;
    model.write(out_path)?;
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub fit_mode: FitMode,
    pub fit_corpus_id: String,
    pub k: usize,
    pub whitened: bool,
    pub degenerate_ids: Vec<String>,
}

/// Writes `embeddings.bin` (+ `.ids`), `embeddings.json` and `pca.bin`.
pub fn stage_embed(
    descriptors: &VectorSet,
    source: PcaSource<'_>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<EmbeddingBatch> {
    ensure_dir(out_dir)?;
    let batch = embed_corpus(
        descriptors,
        source,
        cfg.pca_dim,
        &corpus_id(&descriptors.ids),
        EmbedOptions { whiten: cfg.whiten },
    )?;
    write_vectors(&out_dir.join("embeddings.bin"), &batch.embeddings)?;
    batch.model.write(&out_dir.join("pca.bin"))?;
    let meta = EmbeddingMeta {
        fit_mode: batch.fit_mode,
        fit_corpus_id: batch.model.fit_corpus_id.clone(),
        k: batch.model.k,
        whitened: cfg.whiten,
        degenerate_ids: batch
            .embeddings
            .ids
            .iter()
            .zip(&batch.degenerate)
            .filter(|(_, &d)| d)
            .map(|(id, _)| id.clone())
            .collect(),
    };
    write_json(&out_dir.join("embeddings.json"), &meta)?;
    Ok(batch)
}

pub fn stage_distmat(
    embeddings: &VectorSet,
    cfg: &RunConfig,
    out_path: &Path,
    format: MatrixFormat,
) -> Result<DistanceMatrix> {
    let mtx = compute_distance_matrix(embeddings, cfg.metric, cfg.tile)?;
    write_matrix(&mtx, out_path, format)?;
    Ok(mtx)
}

/// Full report of one matrix: overall scores, subset breakdown and the
/// per-query AP table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub label: String,
    pub metric: Metric,
    pub overall: EvalReport,
    pub subsets: Vec<SubsetReport>,
}

impl ReportFile {
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, &EvalReport)> = vec![("all".into(), &self.overall)];
        rows.extend(
            self.subsets
                .iter()
                .filter(|s| s.report.total_queries > 0)
                .map(|s| (s.name.clone(), &s.report)),
        );
        format_table(&rows)
    }
}

pub fn stage_evaluate(
    mtx: &DistanceMatrix,
    manifest: &CorpusManifest,
    defs: &[SubsetDef],
    label: &str,
    metric: Metric,
    out_path: &Path,
) -> Result<ReportFile> {
    let overall = evaluate_matrix(mtx, manifest)?;
    let subsets = evaluate_subsets(mtx, manifest, defs)?;
    let report = ReportFile {
        label: label.to_string(),
        metric,
        overall,
        subsets,
    };
    write_json(out_path, &report)?;
    Ok(report)
}

/// Mode-by-mode result of `run_all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub modes: Vec<ModeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: FitMode,
    pub map: Option<f64>,
    pub top1: Option<f64>,
    pub used_queries: usize,
    pub excluded_queries: usize,
    pub subsets: BTreeMap<String, Option<f64>>,
}

impl RunSummary {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16}  {:>8}  {:>8}  {:>6}  {:>8}\n",
            "pca mode", "mAP[%]", "top1[%]", "used", "excluded"
        );
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        for m in &self.modes {
            out.push_str(&format!(
                "{:<16}  {:>8}  {:>8}  {:>6}  {:>8}\n",
                m.mode.as_str(),
                pct(m.map),
                pct(m.top1),
                m.used_queries,
                m.excluded_queries
            ));
        }
        out
    }
}

/// preprocess → extract → embed (per mode) → distance matrix → evaluate.
/// Writes everything under `cfg.output_dir`; returns the per-mode reports.
pub fn run_all(cfg: &RunConfig) -> Result<(RunSummary, Vec<ReportFile>)> {
    cfg.validate()?;
    let manifest_path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("run-all needs a manifest".into()))?;
    let modes = cfg.modes();
    let defs = cfg.subset_defs()?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;

    let manifest = crate::corpus::load_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let train_manifest = match (&cfg.train_manifest, modes.contains(&FitMode::Classification)) {
        (Some(p), true) => Some(crate::corpus::load_manifest(p)?),
        _ => None,
    };

    let descriptors = stage_extract(&manifest, cfg, &out.join("descriptors.bin"))?;
    let train = train_manifest
        .as_ref()
        .map(|m| stage_extract(m, cfg, &out.join("train-descriptors.bin")))
        .transpose()?;

    let mut reports = Vec::new();
    let mut summary = RunSummary { modes: Vec::new() };
    for mode in modes {
        let dir = out.join(mode.as_str());
        let source = PcaSource::for_mode(mode, train.as_ref())?;
        let batch = stage_embed(&descriptors, source, cfg, &dir)?;
        let mtx = stage_distmat(&batch.embeddings, cfg, &dir.join("distances.bin"), MatrixFormat::Binary)?;
        let report = stage_evaluate(&mtx, &manifest, &defs, mode.as_str(), cfg.metric, &dir.join("report.json"))?;
        summary.modes.push(ModeSummary {
            mode,
            map: report.overall.map,
            top1: report.overall.top1,
            used_queries: report.overall.used_queries,
            excluded_queries: report.overall.excluded_queries,
            subsets: report
                .subsets
                .iter()
                .filter(|s| s.report.total_queries > 0)
                .map(|s| (s.name.clone(), s.report.map))
                .collect(),
        });
        fs::write(dir.join("report.txt"), report.table()).map_err(|e| Error::io(&dir, e))?;
        reports.push(report);
    }
    write_json(&out.join("summary.json"), &summary)?;
    fs::write(out.join("comparison.txt"), summary.table()).map_err(|e| Error::io(out, e))?;

    let mut inputs: Vec<&Path> = vec![manifest_path];
    if let Some(p) = cfg.train_manifest.as_deref() {
        inputs.push(p);
    }
    write_run_log(out, "run-all", cfg, &inputs)?;
    Ok((summary, reports))
}

/// Loads a vector store, mapping a missing file to a clear message.
pub fn load_vectors(path: &Path) -> Result<VectorSet> {
    read_vectors(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_baseline() {
        let c = RunConfig::default();
        assert_eq!(c.crop_margin, 42);
        assert_eq!(c.resize_target, 2000);
        assert_eq!(c.radii, (1..=12).collect::<Vec<_>>());
        assert_eq!(c.pca_dim, 200);
        assert_eq!(c.metric, Metric::Manhattan);
        assert_eq!(c.modes(), vec![FitMode::Retrieval]);
        c.validate().unwrap();
    }

    #[test]
    fn config_parsing_and_errors() {
        let c = RunConfig::from_toml_str("metric = \"euclidean\"\npca_dim = 50\nradii = [1, 2, 3]\n").unwrap();
        assert_eq!(c.metric, Metric::Euclidean);
        assert_eq!(c.lbp().dim(), 768);
        assert!(matches!(RunConfig::from_toml_str("metric = \"cosine\"\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("colour = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("radii = [3, 2]\n"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml_str("pca_modes = [\"classification\"]\n"),
            Err(Error::Config(_))
        ));
        let c = RunConfig::from_toml_str("train_manifest = \"t.csv\"\n").unwrap();
        assert_eq!(c.modes(), vec![FitMode::Retrieval, FitMode::Classification]);
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn radii_syntax() {
        assert_eq!(parse_radii("1-12").unwrap().len(), 12);
        assert_eq!(parse_radii("1,2,4").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_radii("1-3,8").unwrap(), vec![1, 2, 3, 8]);
        assert!(parse_radii("a").is_err());
    }

    #[test]
    fn corpus_id_is_stable() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(corpus_id(&ids), corpus_id(&ids.clone()));
        assert_ne!(corpus_id(&ids), corpus_id(&["b".to_string(), "a".to_string()]));
    }
}
