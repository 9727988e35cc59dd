//! Dataset manifests: label-mapped image lists with train/test splits.
//!
//! The on-disk form is CSV with header `path,class_name,class_index,split`,
//! UTF-8, LF newlines. Paths are stored relative to the manifest file and
//! resolved against its directory on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub class_name: String,
    pub class_index: usize,
    pub split: Split,
}

/// An ordered list of samples plus the class table mapping names to
/// contiguous indices starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub classes: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Checks the structural invariants: contiguous class indices that match
    /// the table, and no path assigned to both splits.
    pub fn validate(&self) -> Result<()> {
        for rec in &self.records {
            match self.classes.get(rec.class_index) {
                Some(name) if *name == rec.class_name => {}
                _ => {
                    return Err(Error::Manifest(format!(
                        "record {} has class {} at index {}, which is not in the class table",
                        rec.path, rec.class_name, rec.class_index
                    )))
                }
            }
        }
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for rec in &self.records {
            if let Some(prev) = seen.insert(rec.path.as_str(), rec.split) {
                if prev != rec.split {
                    return Err(Error::Manifest(format!(
                        "path {} appears in both splits",
                        rec.path
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scans `root` (one subdirectory per class), shuffles each class with the
/// seeded PRNG, and splits it at `ratio`.
///
/// The per-class train count is round(ratio·n), clamped so both splits keep
/// at least one sample. Classes and files are visited in sorted order, so
/// the same seed always produces identical manifests.
pub fn build_manifest(root: &Path, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root.to_path_buf(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Manifest(format!(
            "{} contains no class subdirectories",
            root.display()
        )));
    }

    let mut records = Vec::new();
    let mut classes = Vec::new();
    for (class_index, dir) in class_dirs.iter().enumerate() {
        let class_name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Manifest(format!("unreadable class name in {}", dir.display())))?
            .to_string();
        let mut files: Vec<String> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir.clone(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter_map(|p| {
                p.file_name().and_then(|n| n.to_str()).map(|n| format!("{class_name}/{n}"))
            })
            .collect();
        files.sort();
        if files.len() < 2 {
            return Err(Error::Manifest(format!(
                "class {} has {} images; need at least 2 to split",
                class_name,
                files.len()
            )));
        }
        let mut rng = rng::stream(seed, rng::domain::SHUFFLE, class_index as u64, 0);
        shuffle_strings(&mut files, &mut rng);
        let n = files.len();
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for (i, path) in files.into_iter().enumerate() {
            records.push(ManifestRecord {
                path,
                class_name: class_name.clone(),
                class_index,
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
        classes.push(class_name);
    }
    let manifest = DatasetManifest { records, classes };
    manifest.validate()?;
    Ok(manifest)
}

fn shuffle_strings(items: &mut [String], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.below((i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Writes the manifest as CSV next to the dataset.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["path", "class_name", "class_index", "split"])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for rec in &manifest.records {
        let split = match rec.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        writer
            .write_record([&rec.path, &rec.class_name, &rec.class_index.to_string(), split])
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path.to_path_buf(), e))?;
    Ok(())
}

/// Reads a manifest CSV and validates its invariants. The class table is
/// rebuilt from the records.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if row.len() != 4 {
            return Err(Error::Manifest(format!(
                "{}: expected 4 columns, got {}",
                path.display(),
                row.len()
            )));
        }
        let class_index: usize = row[2]
            .parse()
            .map_err(|_| Error::Manifest(format!("invalid class index {:?}", &row[2])))?;
        let split = match &row[3] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::Manifest(format!("invalid split {other:?}"))),
        };
        records.push(ManifestRecord {
            path: row[0].to_string(),
            class_name: row[1].to_string(),
            class_index,
            split,
        });
    }
    if records.is_empty() {
        return Err(Error::Manifest(format!("{} has no records", path.display())));
    }
    let num_classes = records.iter().map(|r| r.class_index).max().unwrap() + 1;
    let mut classes = vec![String::new(); num_classes];
    for rec in &records {
        classes[rec.class_index] = rec.class_name.clone();
    }
    if classes.iter().any(|c| c.is_empty()) {
        return Err(Error::Manifest(format!(
            "{}: class indices are not contiguous from 0",
            path.display()
        )));
    }
    let manifest = DatasetManifest { records, classes };
    manifest.validate()?;
    Ok(manifest)
}

/// Resolves a record path against the directory containing the manifest.
pub fn resolve_path(manifest_path: &Path, record: &ManifestRecord) -> PathBuf {
    let rec_path = Path::new(&record.path);
    if rec_path.is_absolute() {
        rec_path.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(rec_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_dataset(classes: usize, per_class: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for k in 0..classes {
            let class_dir = dir.path().join(format!("class_{k}"));
            fs::create_dir(&class_dir).unwrap();
            for i in 0..per_class {
                fs::write(class_dir.join(format!("{i}.pgm")), b"P5\n1 1\n255\n\x00").unwrap();
            }
        }
        dir
    }

    #[test]
    fn six_classes_of_ten_split_36_24() {
        let dir = fake_dataset(6, 10);
        let manifest = build_manifest(dir.path(), 0.6, 1).unwrap();
        assert_eq!(manifest.count(Split::Train), 36);
        assert_eq!(manifest.count(Split::Test), 24);
        assert_eq!(manifest.num_classes(), 6);
    }

    #[test]
    fn eighty_classes_of_fifty_split_2400_1600() {
        let dir = fake_dataset(80, 50);
        let manifest = build_manifest(dir.path(), 0.6, 1).unwrap();
        assert_eq!(manifest.count(Split::Train), 2400);
        assert_eq!(manifest.count(Split::Test), 1600);
    }

    #[test]
    fn every_class_appears_in_both_splits() {
        let dir = fake_dataset(5, 3);
        let manifest = build_manifest(dir.path(), 0.9, 7).unwrap();
        for k in 0..5 {
            assert!(manifest.split(Split::Train).any(|r| r.class_index == k));
            assert!(manifest.split(Split::Test).any(|r| r.class_index == k));
        }
    }

    #[test]
    fn undersized_class_is_named_in_the_error() {
        let dir = fake_dataset(2, 5);
        let lonely = dir.path().join("lonely");
        fs::create_dir(&lonely).unwrap();
        fs::write(lonely.join("only.pgm"), b"P5\n1 1\n255\n\x00").unwrap();
        let err = build_manifest(dir.path(), 0.6, 1).unwrap_err();
        assert!(err.to_string().contains("lonely"), "{err}");
    }

    #[test]
    fn same_seed_produces_identical_csv_bytes() {
        let dir = fake_dataset(3, 8);
        let m1 = build_manifest(dir.path(), 0.6, 42).unwrap();
        let m2 = build_manifest(dir.path(), 0.6, 42).unwrap();
        let p1 = dir.path().join("m1.csv");
        let p2 = dir.path().join("m2.csv");
        write_manifest(&p1, &m1).unwrap();
        write_manifest(&p2, &m2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn csv_round_trip_preserves_the_manifest() {
        let dir = fake_dataset(4, 6);
        let manifest = build_manifest(dir.path(), 0.5, 3).unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn record_paths_resolve_against_the_manifest_directory() {
        let dir = fake_dataset(2, 2);
        let manifest = build_manifest(dir.path(), 0.5, 1).unwrap();
        let manifest_path = dir.path().join("manifest.csv");
        let resolved = resolve_path(&manifest_path, &manifest.records[0]);
        assert!(resolved.exists(), "{}", resolved.display());
    }
}
