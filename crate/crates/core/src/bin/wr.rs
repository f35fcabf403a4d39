//! `wr`: writer retrieval pipeline and evaluation harness.
//!
//! Exit codes: 0 success, 2 usage/config, 3 input data, 4 internal.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use writer_retrieval::corpus::{load_manifest, synth_corpus, SynthSpec};
use writer_retrieval::embed::{FitMode, PcaModel, PcaSource};
use writer_retrieval::error::{Error, ErrorClass, Result};
use writer_retrieval::pipeline::{self, RunConfig, WORKERS_ENV};
use writer_retrieval::retrieval::{read_matrix, MatrixFormat, Metric};

#[derive(Parser)]
#[command(name = "wr", version, about = "Writer retrieval for historical document images")]
struct Cli {
    /// Flat key = value config file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus with a manifest.
    Synth(SynthArgs),
    /// Crop, downscale and optionally deskew every page of a manifest.
    Preprocess(PreprocessArgs),
    /// Extract LBP page descriptors into a vector store.
    Extract(ExtractArgs),
    /// Fit a PCA model on a descriptor store.
    FitPca(FitPcaArgs),
    /// Project descriptors with PCA, then Hellinger + l2 normalize.
    Embed(EmbedArgs),
    /// Compute the all-pairs distance matrix of an embedding store.
    Distmat(DistmatArgs),
    /// Leave-one-image-out evaluation of a distance matrix.
    Evaluate(EvaluateArgs),
    /// Run every stage, for each configured PCA mode.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    writers: usize,
    #[arg(long)]
    pages: usize,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 320)]
    height: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PreprocessFlags {
    #[arg(long)]
    crop_margin: Option<usize>,
    #[arg(long)]
    resize_target: Option<usize>,
    /// Projection-profile rotation correction.
    #[arg(long)]
    deskew: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    flags: PreprocessFlags,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Radii as `1-12` or `1,2,4`.
    #[arg(long)]
    radii: Option<String>,
    /// Pool only over the dilated Otsu foreground.
    #[arg(long)]
    mask: bool,
    /// Images are already preprocessed; skip crop/resize/deskew.
    #[arg(long)]
    no_preprocess: bool,
    #[command(flatten)]
    flags: PreprocessFlags,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Classification,
    Retrieval,
}

impl From<ModeArg> for FitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Classification => FitMode::Classification,
            ModeArg::Retrieval => FitMode::Retrieval,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Manhattan,
    Euclidean,
    ChiSquare,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Manhattan => Metric::Manhattan,
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::ChiSquare => Metric::ChiSquare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

#[derive(Args)]
struct FitPcaArgs {
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long, value_enum, default_value = "retrieval")]
    mode: ModeArg,
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    descriptors: PathBuf,
    /// Reuse a fitted model instead of fitting one.
    #[arg(long, conflicts_with_all = ["mode", "train"])]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Training descriptor store (classification mode).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    whiten: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct DistmatArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Subset definition `name=tag,tag`; repeatable.
    #[arg(long = "subset")]
    subsets: Vec<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    /// PCA mode to run; repeatable.
    #[arg(long = "mode", value_enum)]
    modes: Vec<ModeArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    radii: Option<String>,
    #[arg(long)]
    no_preprocess: bool,
    #[command(flatten)]
    flags: PreprocessFlags,
    #[command(flatten)]
    out: OutArg,
}

fn apply_preprocess(cfg: &mut RunConfig, f: &PreprocessFlags) {
    if let Some(m) = f.crop_margin {
        cfg.crop_margin = m;
    }
    if let Some(t) = f.resize_target {
        cfg.resize_target = t;
    }
    cfg.deskew |= f.deskew;
}

fn apply_out(cfg: &mut RunConfig, out: &OutArg) {
    if let Some(o) = &out.out {
        cfg.output_dir = o.clone();
    }
}

fn manifest_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| Error::Config("no manifest given (--manifest or `manifest` in config)".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }

    match cli.command {
        Command::Synth(a) => {
            apply_out(&mut cfg, &a.out);
            let spec = SynthSpec {
                num_writers: a.writers,
                pages_per_writer: a.pages,
                num_distractors: a.distractors,
                seed: a.seed.unwrap_or(cfg.seed),
                width: a.width,
                height: a.height,
            };
            cfg.seed = spec.seed;
            cfg.validate()?;
            let out = cfg.output_dir.clone();
            let m = pipeline::with_workers(cfg.workers, || synth_corpus(&spec, &out))??;
            pipeline::write_run_log(&out, "synth", &cfg, &[])?;
            println!("wrote {} images to {}", m.len(), out.join("manifest.csv").display());
        }
        Command::Preprocess(a) => {
            apply_out(&mut cfg, &a.out);
            apply_preprocess(&mut cfg, &a.flags);
            cfg.validate()?;
            let mpath = manifest_path(&cfg, &a.manifest)?;
            let manifest = load_manifest(&mpath)?;
            let out = cfg.output_dir.clone();
            pipeline::ensure_dir(&out)?;
            let m = pipeline::with_workers(cfg.workers, || pipeline::stage_preprocess(&manifest, &cfg, &out))??;
            pipeline::write_run_log(&out, "preprocess", &cfg, &[&mpath])?;
            println!("preprocessed {} images into {}", m.len(), out.display());
        }
        Command::Extract(a) => {
            apply_out(&mut cfg, &a.out);
            apply_preprocess(&mut cfg, &a.flags);
            if let Some(r) = &a.radii {
                cfg.radii = pipeline::parse_radii(r)?;
            }
            cfg.use_mask |= a.mask;
            if a.no_preprocess {
                cfg.preprocess = false;
            }
            cfg.validate()?;
            let mpath = manifest_path(&cfg, &a.manifest)?;
            let manifest = load_manifest(&mpath)?;
            let out = cfg.output_dir.clone();
            pipeline::ensure_dir(&out)?;
            let path = out.join("descriptors.bin");
            let set = pipeline::with_workers(cfg.workers, || pipeline::stage_extract(&manifest, &cfg, &path))??;
            pipeline::write_run_log(&out, "extract", &cfg, &[&mpath])?;
            println!("{} descriptors of dimension {} -> {}", set.len(), set.dim, path.display());
        }
        Command::FitPca(a) => {
            apply_out(&mut cfg, &a.out);
            if let Some(d) = a.dim {
                cfg.pca_dim = d;
            }
            cfg.validate()?;
            let set = pipeline::load_vectors(&a.descriptors)?;
            let mode: FitMode = a.mode.into();
            let out = cfg.output_dir.clone();
            pipeline::ensure_dir(&out)?;
            let path = out.join(format!("pca-{}.bin", mode.as_str()));
            let model = pipeline::with_workers(cfg.workers, || pipeline::stage_fit_pca(&set, &cfg, mode, &path))??;
            pipeline::write_run_log(&out, "fit-pca", &cfg, &[&a.descriptors])?;
            println!("PCA {} -> {} ({}) -> {}", model.input_dim, model.k, mode.as_str(), path.display());
        }
        Command::Embed(a) => {
            apply_out(&mut cfg, &a.out);
            if let Some(d) = a.dim {
                cfg.pca_dim = d;
            }
            cfg.whiten |= a.whiten;
            cfg.validate()?;
            let set = pipeline::load_vectors(&a.descriptors)?;
            let model = a.model.as_deref().map(PcaModel::read).transpose()?;
            let train = a.train.as_deref().map(pipeline::load_vectors).transpose()?;
            let source = match &model {
                Some(m) => PcaSource::Model(m),
                None => PcaSource::for_mode(a.mode.map_or(FitMode::Retrieval, Into::into), train.as_ref())?,
            };
            let out = cfg.output_dir.clone();
            let batch = pipeline::with_workers(cfg.workers, || pipeline::stage_embed(&set, source, &cfg, &out))??;
            let mut inputs: Vec<&Path> = vec![&a.descriptors];
            inputs.extend(a.model.as_deref());
            inputs.extend(a.train.as_deref());
            pipeline::write_run_log(&out, "embed", &cfg, &inputs)?;
            println!(
                "{} embeddings of dimension {} ({} PCA), {} degenerate",
                batch.embeddings.len(),
                batch.model.k,
                batch.fit_mode.as_str(),
                batch.degenerate.iter().filter(|&&d| d).count()
            );
        }
        Command::Distmat(a) => {
            apply_out(&mut cfg, &a.out);
            if let Some(m) = a.metric {
                cfg.metric = m.into();
            }
            if let Some(t) = a.tile {
                cfg.tile = t;
            }
            cfg.validate()?;
            let set = pipeline::load_vectors(&a.embeddings)?;
            let (format, name) = match a.format {
                FormatArg::Binary => (MatrixFormat::Binary, "distances.bin"),
                FormatArg::Csv => (MatrixFormat::Csv, "distances.csv"),
            };
            let out = cfg.output_dir.clone();
            pipeline::ensure_dir(&out)?;
            let path = out.join(name);
            let m = pipeline::with_workers(cfg.workers, || pipeline::stage_distmat(&set, &cfg, &path, format))??;
            pipeline::write_run_log(&out, "distmat", &cfg, &[&a.embeddings])?;
            println!("{0}x{0} {1} distances -> {2}", m.n(), cfg.metric.as_str(), path.display());
        }
        Command::Evaluate(a) => {
            apply_out(&mut cfg, &a.out);
            if !a.subsets.is_empty() {
                cfg.subsets = a.subsets.clone();
            }
            cfg.validate()?;
            let mpath = manifest_path(&cfg, &a.manifest)?;
            let manifest = load_manifest(&mpath)?;
            let mtx = read_matrix(&a.matrix)?;
            let defs = cfg.subset_defs()?;
            let out = cfg.output_dir.clone();
            pipeline::ensure_dir(&out)?;
            let report = pipeline::with_workers(cfg.workers, || {
                pipeline::stage_evaluate(&mtx, &manifest, &defs, "evaluate", cfg.metric, &out.join("report.json"))
            })??;
            pipeline::write_run_log(&out, "evaluate", &cfg, &[&a.matrix, &mpath])?;
            print!("{}", report.table());
            println!("{}", report.overall.summary_line());
        }
        Command::RunAll(a) => {
            apply_out(&mut cfg, &a.out);
            apply_preprocess(&mut cfg, &a.flags);
            if a.manifest.is_some() {
                cfg.manifest = a.manifest.clone();
            }
            if a.train_manifest.is_some() {
                cfg.train_manifest = a.train_manifest.clone();
            }
            if !a.modes.is_empty() {
                cfg.pca_modes = a.modes.iter().map(|&m| m.into()).collect();
            }
            if let Some(m) = a.metric {
                cfg.metric = m.into();
            }
            if let Some(r) = &a.radii {
                cfg.radii = pipeline::parse_radii(r)?;
            }
            if a.no_preprocess {
                cfg.preprocess = false;
            }
            cfg.validate()?;
            let (summary, _) = pipeline::with_workers(cfg.workers, || pipeline::run_all(&cfg))??;
            print!("{}", summary.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wr: error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::InputData => 3,
                ErrorClass::Internal => 4,
            })
        }
    }
}
