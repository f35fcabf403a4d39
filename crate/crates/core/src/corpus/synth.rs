//! Deterministic synthetic handwriting-like pages.
//!
//! Each writer has a fixed slant, stroke width, stroke pitch, x-height, line
//! spacing and ink level. Pages of the same writer differ in phase, gap
//! pattern and pixel noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{save_manifest, CorpusManifest, ManifestEntry, SubsetTag};
use crate::error::{Error, Result};
use crate::preprocess::{save_png, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub num_writers: usize,
    pub pages_per_writer: usize,
    pub num_distractors: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

impl SynthSpec {
    pub fn new(num_writers: usize, pages_per_writer: usize, num_distractors: usize, seed: u64) -> Self {
        SynthSpec {
            num_writers,
            pages_per_writer,
            num_distractors,
            seed,
            width: 320,
            height: 320,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct WriterStyle {
    slant: f64,
    stroke_width: f64,
    pitch: f64,
    x_height: f64,
    line_spacing: f64,
    ink: f64,
    background: f64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ a) ^ b))
}

impl WriterStyle {
    fn draw(rng: &mut impl Rng) -> Self {
        let line_spacing = rng.random_range(16.0..40.0);
        WriterStyle {
            slant: rng.random_range(-40f64..40.0).to_radians(),
            stroke_width: rng.random_range(1.2..4.5),
            pitch: rng.random_range(4.0..13.0),
            x_height: line_spacing * rng.random_range(0.3..0.65),
            line_spacing,
            ink: rng.random_range(20.0..90.0),
            background: rng.random_range(180.0..235.0),
        }
    }
}

fn render_page(style: &WriterStyle, rng: &mut ChaCha8Rng, width: usize, height: usize) -> GrayImage {
    let phase_x: f64 = rng.random_range(0.0..style.pitch);
    let phase_y: f64 = rng.random_range(0.0..style.line_spacing);
    let gap_prob: f64 = rng.random_range(0.1..0.25);
    let word_seed: u64 = rng.random();
    let noise = Normal::new(0.0, 6.0).expect("valid sigma");

    let tan = style.slant.tan();
    let cos = style.slant.cos();
    let half = style.stroke_width / 2.0;
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let yy = y as f64 + phase_y;
        let line = (yy / style.line_spacing).floor();
        let v = yy - line * style.line_spacing;
        for x in 0..width {
            let mut coverage = 0.0;
            if v <= style.x_height + half {
                let u = x as f64 + phase_x + (style.x_height - v) * tan;
                let stroke = (u / style.pitch).floor();
                let du = u - (stroke + 0.5) * style.pitch;
                let gap = {
                    let h = mix(word_seed ^ mix(line as i64 as u64) ^ (stroke as i64 as u64));
                    ((h >> 11) as f64 / (1u64 << 53) as f64) < gap_prob
                };
                if !gap {
                    let dist = (du * cos).abs();
                    let across = (half + 0.5 - dist).clamp(0.0, 1.0);
                    let along = (style.x_height + half + 0.5 - v).clamp(0.0, 1.0).min((v + 0.5).clamp(0.0, 1.0));
                    coverage = across * along;
                }
            }
            let value = style.background - coverage * (style.background - style.ink) + noise.sample(rng);
            pixels.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, pixels).expect("positive dims")
}

/// Writes `images/*.png` and `manifest.csv` under `out_dir` and returns the
/// manifest. The same spec always yields byte-identical files.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest> {
    if spec.num_writers == 0 || spec.pages_per_writer == 0 {
        return Err(Error::InvalidArgument(
            "num_writers and pages_per_writer must be positive".into(),
        ));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument("page size must be positive".into()));
    }
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    // (image_id, writer_id, writer index, page index)
    let mut jobs = Vec::new();
    for w in 0..spec.num_writers {
        for p in 0..spec.pages_per_writer {
            jobs.push((format!("w{w:04}_p{p}"), format!("w{w:04}"), w as u64, p as u64));
        }
    }
    for d in 0..spec.num_distractors {
        let wi = (spec.num_writers + d) as u64;
        jobs.push((format!("d{d:05}"), format!("d{d:05}"), wi, 0));
    }

    let entries = jobs
        .par_iter()
        .map(|(image_id, writer_id, w, p)| {
            let style = WriterStyle::draw(&mut rng_for(spec.seed, *w, u64::MAX));
            let mut page_rng = rng_for(spec.seed, *w, *p);
            let img = render_page(&style, &mut page_rng, spec.width, spec.height);
            let rel = PathBuf::from("images").join(format!("{image_id}.png"));
            save_png(&img, &out_dir.join(&rel))?;
            Ok(ManifestEntry {
                image_id: image_id.clone(),
                path: rel,
                writer_id: writer_id.clone(),
                subset: SubsetTag::Synthetic,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest::new(entries)?.with_base_dir(out_dir);
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_and_classes() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&SynthSpec::new(2, 2, 0, 7), dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        let writers: HashSet<_> = m.entries().iter().map(|e| e.writer_id.as_str()).collect();
        assert_eq!(writers.len(), 2);
        assert!(dir.path().join("manifest.csv").exists());
        for i in 0..m.len() {
            assert!(m.resolved_path(i).exists());
        }
    }

    #[test]
    fn distractors_are_singletons() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::new(1, 3, 4, 3);
        spec.width = 64;
        spec.height = 48;
        let m = synth_corpus(&spec, dir.path()).unwrap();
        assert_eq!(m.len(), 7);
        let q = m.queries();
        assert_eq!(q.iter().filter(|q| q.relevant_count == 0).count(), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(2, 2, 1, 7);
        let ma = synth_corpus(&spec, a.path()).unwrap();
        synth_corpus(&spec, b.path()).unwrap();
        for e in ma.entries() {
            let x = std::fs::read(a.path().join(&e.path)).unwrap();
            let y = std::fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y, "{}", e.image_id);
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.csv")).unwrap(),
            std::fs::read(b.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn zero_writers_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_corpus(&SynthSpec::new(0, 2, 0, 1), dir.path()).is_err());
    }
}
