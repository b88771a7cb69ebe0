//! Dataset manifests.
//!
//! A manifest is a UTF-8 CSV with header `id,path,label,fold` and an
//! optional fifth column `drop_segments` (semicolon-separated segment
//! indices to exclude before padding). Paths are resolved relative to the
//! manifest's directory. Fold ids must be contiguous from 1.

use crate::error::{Error, Result};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: String,
    pub fold: u32,
    pub drop_segments: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Sorted distinct class labels; class ids index into this list.
    pub classes: Vec<String>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn num_folds(&self) -> u32 {
        self.entries.iter().map(|e| e.fold).max().unwrap_or(0)
    }

    pub fn class_id(&self, label: &str) -> Option<u32> {
        self.classes.iter().position(|c| c == label).map(|i| i as u32)
    }

    pub fn class_name(&self, id: u32) -> &str {
        &self.classes[id as usize]
    }

    /// Entries of one fold / of all other folds.
    pub fn fold_split(&self, fold: u32) -> (Vec<&ManifestEntry>, Vec<&ManifestEntry>) {
        let eval = self.entries.iter().filter(|e| e.fold == fold).collect();
        let train = self.entries.iter().filter(|e| e.fold != fold).collect();
        (train, eval)
    }
}

/// Load and validate a manifest CSV.
pub fn ingest_dataset(path: &Path) -> Result<DatasetManifest> {
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{path:?}: {e}")))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let expected = ["id", "path", "label", "fold"];
        for (i, want) in expected.iter().enumerate() {
            if headers.get(i).map(str::trim) != Some(*want) {
                return Err(Error::Manifest(format!(
                    "expected header starting with id,path,label,fold; got {headers:?}"
                )));
            }
        }
    }

    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Manifest(e.to_string()))?;
        if record.len() < 4 {
            return Err(Error::Manifest(format!(
                "row {}: expected >= 4 fields, got {}",
                line + 2,
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Manifest(format!("row {}: empty id", line + 2)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let rel = record[1].trim();
        let label = record[2].trim().to_string();
        if label.is_empty() {
            return Err(Error::Manifest(format!("row {}: empty label", line + 2)));
        }
        let fold: u32 = record[3]
            .trim()
            .parse()
            .map_err(|_| Error::Manifest(format!("row {}: bad fold {:?}", line + 2, &record[3])))?;
        if fold == 0 {
            return Err(Error::Manifest(format!(
                "row {}: fold ids start at 1",
                line + 2
            )));
        }
        let drop_segments = match record.get(4) {
            None | Some("") => Vec::new(),
            Some(spec) => spec
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Error::Manifest(format!("row {}: bad drop_segments {spec:?}", line + 2))
                    })
                })
                .collect::<Result<Vec<usize>>>()?,
        };
        entries.push(ManifestEntry {
            id,
            path: root.join(rel),
            label,
            fold,
            drop_segments,
        });
    }
    if entries.is_empty() {
        return Err(Error::Manifest("manifest has no entries".into()));
    }

    // Folds must be contiguous from 1.
    let max_fold = entries.iter().map(|e| e.fold).max().unwrap();
    let present: HashSet<u32> = entries.iter().map(|e| e.fold).collect();
    for f in 1..=max_fold {
        if !present.contains(&f) {
            return Err(Error::Manifest(format!(
                "fold ids must be contiguous from 1; fold {f} is missing (max {max_fold})"
            )));
        }
    }

    let mut classes: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    classes.sort();
    classes.dedup();

    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !e.path.is_file())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }

    Ok(DatasetManifest { entries, classes, root })
}

/// Write a manifest CSV (paths stored relative to the output directory).
pub fn write_manifest(path: &Path, entries: &[(String, String, String, u32)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
    writer
        .write_record(["id", "path", "label", "fold"])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for (id, rel_path, label, fold) in entries {
        writer
            .write_record([id, rel_path, label, &fold.to_string()])
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
