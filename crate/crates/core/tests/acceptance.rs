//! Acceptance gate. Run with `cargo test -p writer-retrieval --test acceptance`.
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! The optional full-corpus check runs only when `WR_FULL_MANIFEST` (and
//! `WR_FULL_TRAIN_MANIFEST` for the classification mode) point at a
//! manifested copy of the public competition data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use writer_retrieval::corpus::{synth_corpus, CorpusManifest, ManifestEntry, SubsetTag, SynthSpec};
use writer_retrieval::descriptor::{extract_descriptor, LbpConfig, VectorSet};
use writer_retrieval::embed::{fit_pca, FitMode};
use writer_retrieval::evaluate::{average_precision, evaluate_matrix, RelevanceList};
use writer_retrieval::pipeline::{run_all, with_workers, RunConfig};
use writer_retrieval::preprocess::{otsu_binarize, GrayImage};
use writer_retrieval::retrieval::{
    compute_distance_matrix, rank_for_query, read_matrix, write_matrix, MatrixFormat, Metric,
};
use writer_retrieval::Error;

// Tolerances and budgets.
const AP_TOL: f64 = 1e-12;
const AP_BUDGET: Duration = Duration::from_secs(10);
const PCA_ANGLE_TOL: f64 = 1e-8;
const MEAN_PROJ_TOL: f64 = 1e-12;
const DIST_REL_TOL: f64 = 1e-6;
const E2E_MIN_MAP: f64 = 0.90;
const E2E_BUDGET: Duration = Duration::from_secs(300);
const FULL_REF_MAP: f64 = 0.868;
const FULL_MAP_SLACK: f64 = 0.03;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn c1_ap_exhaustive() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut lists = 0;
    for mask in 1u32..(1 << 12) {
        let rel: Vec<bool> = (0..12).map(|i| mask >> i & 1 == 1).collect();
        let want = common::ap_direct(&rel).unwrap();
        let got = average_precision(&RelevanceList::new(rel)).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        lists += 1;
    }
    let elapsed = start.elapsed();
    ensure!(worst <= AP_TOL, "max |AP - oracle| = {worst:e} > {AP_TOL:e}");
    ensure!(elapsed < AP_BUDGET, "took {elapsed:?}");
    ensure!(
        matches!(average_precision(&RelevanceList::new(vec![false; 12])), Err(Error::UndefinedAp)),
        "R = 0 list must be undefined"
    );
    Ok(format!("{lists} lists, max err {worst:.1e}, {elapsed:.2?}"))
}

fn c2_ap_hand_values() -> Outcome {
    let ap = |bits: &[u8]| average_precision(&RelevanceList::from_bits(bits)).unwrap();
    let a = ap(&[1, 0, 1, 0]);
    ensure!((a - 5.0 / 6.0).abs() <= AP_TOL, "AP([1,0,1,0]) = {a}");
    let b = ap(&[0, 1]);
    ensure!((b - 0.5).abs() <= AP_TOL, "AP([0,1]) = {b}");
    for n in 1..=20 {
        let mut bits = vec![1u8; n];
        bits.extend(std::iter::repeat_n(0, 7));
        let p = ap(&bits);
        ensure!(p == 1.0, "perfect ranking with R = {n} gave {p}");
    }
    Ok("5/6, 1/2, perfect = 1.0 exactly".into())
}

fn c3_descriptor_shape() -> Outcome {
    let cfg = LbpConfig::default();
    ensure!(cfg.dim() == 3072, "default dim {}", cfg.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = GrayImage::from_fn(80, 64, |_, _| rng.random()).unwrap();
    let d = extract_descriptor(&img, &cfg).map_err(|e| e.to_string())?;
    ensure!(d.values.len() == 3072, "descriptor length {}", d.values.len());
    let slices: Vec<&[f64]> = d.values.chunks(256).collect();
    ensure!(slices.len() == 12, "{} slices", slices.len());
    for (r, s) in slices.iter().enumerate() {
        let sum: f64 = s.iter().sum();
        ensure!((sum - 1.0).abs() < 1e-12, "slice {r} sums to {sum}");
    }
    let flat = GrayImage::filled(64, 64, 77).unwrap();
    let d = extract_descriptor(&flat, &cfg).map_err(|e| e.to_string())?;
    for (r, s) in d.values.chunks(256).enumerate() {
        ensure!(s[255] == 1.0, "constant image, radius {}: bin 255 = {}", r + 1, s[255]);
        ensure!(s[..255].iter().all(|&v| v == 0.0), "constant image, radius {}: mass off 255", r + 1);
    }
    Ok("3072 dims, 12 unit-sum slices, constant image one-hot at 255".into())
}

fn c4_pca_oracle() -> Outcome {
    let (n, d) = (20, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // anisotropic scales keep the eigenvalues well separated
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (d - j) as f64).collect())
        .collect();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let set = VectorSet::from_rows(ids, &rows).map_err(|e| e.to_string())?;
    let model = fit_pca(&set, d, FitMode::Retrieval, "oracle").map_err(|e| e.to_string())?;
    ensure!(model.k == d, "k = {}", model.k);
    let (vals, vecs) = common::jacobi_eigen(&common::covariance(&rows), d);
    let mut worst = 0.0f64;
    for i in 0..d {
        worst = worst.max(common::line_angle_sine(&vecs[i], model.component(i)));
        let ev = model.explained_variance[i];
        ensure!((ev - vals[i]).abs() <= 1e-9 * vals[0], "variance {i}: {ev} vs {}", vals[i]);
    }
    ensure!(worst < PCA_ANGLE_TOL, "largest principal-angle sine {worst:e}");
    let p = model.project(&model.mean).map_err(|e| e.to_string())?;
    let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(pmax <= MEAN_PROJ_TOL, "projection of mean has |x| = {pmax:e}");
    Ok(format!("max sine {worst:.1e}, mean projects to {pmax:.0e}"))
}

fn c5_otsu_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut degenerate = 0;
    for case in 0..1000 {
        let w = rng.random_range(1..=64usize);
        let h = rng.random_range(1..=64usize);
        // few grey levels in some images to force ties
        let levels = match case % 4 {
            0 => 2,
            1 => 3,
            2 => 16,
            _ => 256,
        };
        let palette: Vec<u8> = (0..levels).map(|_| rng.random()).collect();
        let px: Vec<u8> = (0..w * h).map(|_| palette[rng.random_range(0..levels)]).collect();
        let img = GrayImage::new(w, h, px.clone()).unwrap();
        let got = otsu_binarize(&img);
        match common::otsu_brute(&px) {
            Some(t) => ensure!(
                !got.degenerate && got.threshold == t,
                "case {case} ({w}x{h}): threshold {} vs oracle {t}",
                got.threshold
            ),
            None => {
                degenerate += 1;
                ensure!(got.degenerate && got.threshold == px[0], "case {case}: constant image mishandled");
            }
        }
    }
    Ok(format!("1000 images agree ({degenerate} single-intensity)"))
}

fn c6_blocked_matrix() -> Outcome {
    let n = 200;
    let dim = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let ids = (0..n).map(|i| format!("e{i}")).collect();
    let set = VectorSet::from_rows(ids, &rows).unwrap();
    let mut worst = 0.0f64;
    let mut runs = 0;
    for metric in [Metric::Manhattan, Metric::Euclidean, Metric::ChiSquare] {
        let naive: Vec<f64> = (0..n * n)
            .map(|k| common::naive_distance(&rows[k / n], &rows[k % n], metric.as_str()))
            .collect();
        for tile in [1, 7, 64, n] {
            for workers in [1, 4] {
                let m = with_workers(Some(workers), || compute_distance_matrix(&set, metric, tile))
                    .and_then(|r| r)
                    .map_err(|e| e.to_string())?;
                for (k, (&got, &want)) in m.values().iter().zip(&naive).enumerate() {
                    let err = (got as f64 - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                    let err = if want == 0.0 { got.abs() as f64 } else { err };
                    ensure!(
                        err <= DIST_REL_TOL,
                        "{} tile {tile} workers {workers} entry {k}: {got} vs {want}",
                        metric.as_str()
                    );
                    worst = worst.max(err);
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} configurations, max rel err {worst:.1e}"))
}

fn c7_matrix_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 33;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..5).map(|_| rng.random_range(0.0..1e3)).collect())
        .collect();
    let ids = (0..n).map(|i| format!("id-{i}-é")).collect();
    let set = VectorSet::from_rows(ids, &rows).unwrap();
    let m = compute_distance_matrix(&set, Metric::Euclidean, 8).unwrap();
    let path = dir.path().join("m.bin");
    write_matrix(&m, &path, MatrixFormat::Binary).map_err(|e| e.to_string())?;
    let back = read_matrix(&path).map_err(|e| e.to_string())?;
    ensure!(back.ids() == m.ids(), "ids changed");
    let same = back.values().iter().zip(m.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(same, "values not bit-identical");

    let bytes = std::fs::read(&path).unwrap();
    for cut in [bytes.len() - 1, bytes.len() - 4 * n, 12, 8] {
        let p = dir.path().join(format!("cut{cut}.bin"));
        std::fs::write(&p, &bytes[..cut]).unwrap();
        let r = read_matrix(&p);
        ensure!(
            matches!(r, Err(Error::PayloadLength { .. })),
            "truncated to {cut} bytes: {r:?}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let p = dir.path().join("bad.bin");
    std::fs::write(&p, &bad).unwrap();
    let r = read_matrix(&p);
    ensure!(matches!(r, Err(Error::BadMagic { .. })), "bad magic: {r:?}");
    Ok(format!("{} bytes bit-exact; truncation and bad magic rejected", bytes.len()))
}

fn c8_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let test = synth_corpus(&SynthSpec::new(50, 5, 100, 1), &dir.path().join("test")).map_err(|e| e.to_string())?;
    ensure!(test.len() == 350, "{} test images", test.len());
    synth_corpus(&SynthSpec::new(50, 5, 0, 2), &dir.path().join("train")).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        manifest: Some(dir.path().join("test/manifest.csv")),
        train_manifest: Some(dir.path().join("train/manifest.csv")),
        output_dir: dir.path().join("out"),
        pca_modes: vec![FitMode::Retrieval, FitMode::Classification],
        metric: Metric::Manhattan,
        ..RunConfig::default()
    };
    let (summary, _) = run_all(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut parts = Vec::new();
    ensure!(summary.modes.len() == 2, "{} modes reported", summary.modes.len());
    for m in &summary.modes {
        let map = m.map.ok_or("mAP undefined")?;
        ensure!(map >= E2E_MIN_MAP, "{} mAP {map:.4} < {E2E_MIN_MAP}", m.mode.as_str());
        ensure!(
            m.excluded_queries == 100,
            "{}: {} exclusions",
            m.mode.as_str(),
            m.excluded_queries
        );
        parts.push(format!("{} mAP {:.4}", m.mode.as_str(), map));
    }
    ensure!(elapsed < E2E_BUDGET, "took {elapsed:?}");
    Ok(format!("{}, 100 excluded, {elapsed:.1?}", parts.join(", ")))
}

fn c9_monotone_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for w in 0..15 {
        let centre: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..4.0)).collect();
        let pages = if w < 10 { 4 } else { 1 };
        for p in 0..pages {
            let id = format!("w{w}p{p}");
            rows.push(centre.iter().map(|c| (c + rng.random_range(-1.5..1.5)).abs()).collect::<Vec<f64>>());
            entries.push(ManifestEntry {
                image_id: id,
                path: PathBuf::from("unused.png"),
                writer_id: format!("W{w}"),
                subset: SubsetTag::Synthetic,
            });
        }
    }
    let ids = entries.iter().map(|e| e.image_id.clone()).collect();
    let manifest = CorpusManifest::new(entries).unwrap();
    let set = VectorSet::from_rows(ids, &rows).unwrap();
    let mut checked = 0;
    for metric in [Metric::Manhattan, Metric::Euclidean, Metric::ChiSquare] {
        let m = compute_distance_matrix(&set, metric, 16).unwrap();
        let sq = m.map_values(|x| x * x).map_err(|e| e.to_string())?;
        let a = evaluate_matrix(&m, &manifest).map_err(|e| e.to_string())?;
        let b = evaluate_matrix(&sq, &manifest).map_err(|e| e.to_string())?;
        ensure!(a.map == b.map, "{}: mAP {:?} vs {:?}", metric.as_str(), a.map, b.map);
        ensure!(a.top1 == b.top1, "{}: top-1 {:?} vs {:?}", metric.as_str(), a.top1, b.top1);
        for q in 0..m.n() {
            let ra = rank_for_query(&m, q).unwrap();
            let rb = rank_for_query(&sq, q).unwrap();
            ensure!(ra == rb, "{}: ranking of query {q} changed", metric.as_str());
            checked += 1;
        }
    }
    Ok(format!("{checked} rankings, mAP and top-1 unchanged under x -> x^2"))
}

fn c10_full_corpus() -> Option<Outcome> {
    let manifest = std::env::var_os("WR_FULL_MANIFEST")?;
    Some((|| {
        let train = std::env::var_os("WR_FULL_TRAIN_MANIFEST").ok_or("WR_FULL_TRAIN_MANIFEST is not set")?;
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            manifest: Some(manifest.into()),
            train_manifest: Some(train.into()),
            output_dir: out.path().to_path_buf(),
            pca_modes: vec![FitMode::Retrieval, FitMode::Classification],
            ..RunConfig::default()
        };
        let (summary, _) = run_all(&cfg).map_err(|e| e.to_string())?;
        let get = |mode| {
            summary
                .modes
                .iter()
                .find(|m| m.mode == mode)
                .and_then(|m| m.map)
                .ok_or(format!("{mode:?} mAP missing"))
        };
        let r = get(FitMode::Retrieval)?;
        let c = get(FitMode::Classification)?;
        ensure!(
            (r - FULL_REF_MAP).abs() <= FULL_MAP_SLACK,
            "retrieval mAP {r:.4} outside {FULL_REF_MAP} +/- {FULL_MAP_SLACK}"
        );
        ensure!(r >= c, "retrieval {r:.4} < classification {c:.4}");
        Ok(format!("retrieval {r:.4}, classification {c:.4}"))
    })())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<32} {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<32} {why}");
            false
        }
    }
}

fn main() {
    // `cargo test` passes harness flags such as --list; only listing is honoured.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // failures are reported through the PASS/FAIL lines
    std::panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run("1 ap-exhaustive-12", c1_ap_exhaustive);
    ok &= run("2 ap-hand-values", c2_ap_hand_values);
    ok &= run("3 descriptor-shape", c3_descriptor_shape);
    ok &= run("4 pca-eigen-oracle", c4_pca_oracle);
    ok &= run("5 otsu-exhaustive-oracle", c5_otsu_oracle);
    ok &= run("6 blocked-vs-naive-matrix", c6_blocked_matrix);
    ok &= run("7 matrix-binary-roundtrip", c7_matrix_roundtrip);
    ok &= run("8 synthetic-end-to-end", c8_end_to_end);
    ok &= run("9 monotone-transform-invariance", c9_monotone_invariance);
    match c10_full_corpus() {
        Some(outcome) => ok &= run("10 full-corpus-baseline", || outcome),
        None => println!("SKIP  {:<32} set WR_FULL_MANIFEST to run", "10 full-corpus-baseline"),
    }
    if !ok {
        std::process::exit(1);
    }
}
