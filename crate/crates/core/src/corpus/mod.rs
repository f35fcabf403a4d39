//! Dataset manifests and leave-one-out ground truth.
//!
//! A manifest is a CSV file with the header `image_id,path,writer_id,subset`.
//! Lines starting with `#` are ignored. The order of entries fixes the row and
//! column order of every matrix derived from the corpus.

mod synth;

pub use synth::{synth_corpus, SynthSpec};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["image_id", "path", "writer_id", "subset"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetTag {
    Manuscripts,
    LettersA,
    LettersB,
    Charters,
    Synthetic,
}

impl SubsetTag {
    pub const ALL: [SubsetTag; 5] = [
        SubsetTag::Manuscripts,
        SubsetTag::LettersA,
        SubsetTag::LettersB,
        SubsetTag::Charters,
        SubsetTag::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubsetTag::Manuscripts => "manuscripts",
            SubsetTag::LettersA => "letters_a",
            SubsetTag::LettersB => "letters_b",
            SubsetTag::Charters => "charters",
            SubsetTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SubsetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubsetTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownSubsetTag(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: PathBuf,
    /// Distractor pages carry their own singleton writer id.
    pub writer_id: String,
    pub subset: SubsetTag,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    entries: Vec<ManifestEntry>,
    /// Directory relative entry paths are resolved against.
    base_dir: Option<PathBuf>,
}

/// A leave-one-out query: position in the manifest and the number of *other*
/// entries sharing its writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySpec {
    pub query_index: usize,
    pub relevant_count: usize,
}

impl CorpusManifest {
    /// Builds a manifest, rejecting duplicate image ids.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId {
                    line: i + 2,
                    id: e.image_id.clone(),
                });
            }
        }
        Ok(CorpusManifest {
            entries,
            base_dir: None,
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.image_id == image_id)
    }

    /// Path of entry `index`, resolved against the manifest directory when relative.
    pub fn resolved_path(&self, index: usize) -> PathBuf {
        let p = &self.entries[index].path;
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.clone(),
        }
    }

    pub fn relevant_count(&self, image_id: &str) -> Result<usize> {
        let idx = self
            .position(image_id)
            .ok_or_else(|| Error::UnknownImageId(image_id.to_string()))?;
        let writer = &self.entries[idx].writer_id;
        Ok(self
            .entries
            .iter()
            .enumerate()
            .filter(|&(i, e)| i != idx && &e.writer_id == writer)
            .count())
    }

    /// Query specs for every entry, in manifest order.
    pub fn queries(&self) -> Vec<QuerySpec> {
        let mut pages: HashMap<&str, usize> = HashMap::new();
        for e in &self.entries {
            *pages.entry(e.writer_id.as_str()).or_default() += 1;
        }
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| QuerySpec {
                query_index: i,
                relevant_count: pages[e.writer_id.as_str()] - 1,
            })
            .collect()
    }

    /// Entries whose tag is in `tags`, in their original relative order.
    pub fn subset_select(&self, tags: &BTreeSet<SubsetTag>) -> CorpusManifest {
        CorpusManifest {
            entries: self
                .entries
                .iter()
                .filter(|e| tags.contains(&e.subset))
                .cloned()
                .collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Manifest positions of entries whose tag is in `tags`.
    pub fn subset_indices(&self, tags: &BTreeSet<SubsetTag>) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| tags.contains(&e.subset))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            let p = e.path.to_string_lossy();
            w.write_record([
                e.image_id.as_str(),
                p.as_ref(),
                e.writer_id.as_str(),
                e.subset.as_str(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a manifest file. Relative entry paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(file)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(manifest.with_base_dir(base))
}

pub fn parse_manifest(reader: impl std::io::Read) -> Result<CorpusManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let mut header_seen = false;
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::ManifestParse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if !header_seen {
            if rec.iter().ne(MANIFEST_HEADER) {
                return Err(Error::ManifestParse {
                    line,
                    message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
                });
            }
            header_seen = true;
            continue;
        }
        if rec.len() != 4 {
            return Err(Error::ManifestParse {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let image_id = rec[0].to_string();
        if image_id.is_empty() || rec[2].is_empty() {
            return Err(Error::ManifestParse {
                line,
                message: "image_id and writer_id must be non-empty".into(),
            });
        }
        let subset = rec[3].parse::<SubsetTag>().map_err(|_| Error::ManifestParse {
            line,
            message: format!("unknown subset tag `{}`", &rec[3]),
        })?;
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateId { line, id: image_id });
        }
        entries.push(ManifestEntry {
            image_id,
            path: PathBuf::from(&rec[1]),
            writer_id: rec[2].to_string(),
            subset,
        });
    }
    if !header_seen {
        return Err(Error::ManifestParse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(CorpusManifest {
        entries,
        base_dir: None,
    })
}

/// Writes the manifest and ensures the parent directory exists.
pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest.write(path)
}

/// Writes just the image ids, one per line.
pub(crate) fn write_id_index(path: &Path, ids: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for id in ids {
        writeln!(f, "{id}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
