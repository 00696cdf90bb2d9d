use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::BenchError;
use crate::imaging::io::{load_mask, IoError};
use crate::imaging::BinaryMask;

pub const DEFAULT_POSITIVE: &str = "tumor";

/// One image with its annotation. Paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Path as written in the CSV; used to identify the row in reports.
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub positive_label: String,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Data-row numbers (1-based) and rows carrying the positive label.
    pub fn positives(&self) -> impl Iterator<Item = (usize, &ManifestRow)> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == self.positive_label)
            .map(|(i, r)| (i + 1, r))
    }
}

#[derive(Deserialize)]
struct RawRow {
    image: String,
    mask: String,
    label: String,
}

pub fn ingest(path: &Path) -> Result<Manifest, BenchError> {
    ingest_with(path, DEFAULT_POSITIVE)
}

/// Reads an `image,mask,label` CSV. Row numbers in errors count data rows
/// from 1. Masks of positive rows must load and be non-empty.
pub fn ingest_with(path: &Path, positive_label: &str) -> Result<Manifest, BenchError> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BenchError::BadCsv {
            row: None,
            reason: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| BenchError::BadCsv {
        row: None,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["image", "mask", "label"] {
        return Err(BenchError::BadCsv {
            row: None,
            reason: format!("header must be image,mask,label, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<RawRow>().enumerate() {
        let row = i + 1;
        let raw = record.map_err(|e| BenchError::BadCsv {
            row: Some(row),
            reason: e.to_string(),
        })?;
        let image = root.join(&raw.image);
        let mask = root.join(&raw.mask);
        for p in [&image, &mask] {
            if !p.is_file() {
                return Err(BenchError::MissingFile {
                    row,
                    path: p.display().to_string(),
                });
            }
        }
        if raw.label == positive_label {
            let loaded = load_mask(&mask).map_err(|e| BenchError::BadMask {
                row,
                reason: e.to_string(),
            })?;
            if loaded.is_empty() {
                return Err(BenchError::BadMask {
                    row,
                    reason: "positive row has an empty mask".into(),
                });
            }
        }
        rows.push(ManifestRow {
            name: raw.image,
            image,
            mask,
            label: raw.label,
        });
    }
    Ok(Manifest {
        root,
        rows,
        positive_label: positive_label.to_string(),
    })
}

pub(crate) fn load_row_mask(row: usize, path: &Path) -> Result<BinaryMask, BenchError> {
    load_mask(path).map_err(|e| match e {
        IoError::Io { path, .. } => BenchError::MissingFile { row, path },
        other => BenchError::BadMask {
            row,
            reason: other.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::io::{save_image, save_mask};
    use crate::imaging::{Image, Rect};
    use std::fs;

    fn write_pair(dir: &Path, name: &str, mask: &BinaryMask) {
        save_image(&Image::filled(4, 4, 1, 0.2), &dir.join(format!("{name}.png"))).unwrap();
        save_mask(mask, &dir.join(format!("{name}_mask.png"))).unwrap();
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask,label\n").unwrap();
        assert!(ingest(&path).unwrap().is_empty());
    }

    #[test]
    fn rows_keep_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_rect(4, 4, Rect::new(0, 0, 2, 2));
        for n in ["c", "a", "b"] {
            write_pair(dir.path(), n, &m);
        }
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask,label\nc.png,c_mask.png,tumor\na.png,a_mask.png,no_tumor\nb.png,b_mask.png,tumor\n").unwrap();
        let manifest = ingest(&path).unwrap();
        let names: Vec<&str> = manifest.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["c.png", "a.png", "b.png"]);
        assert_eq!(manifest.positives().map(|(i, _)| i).collect::<Vec<_>>(), [1, 3]);
    }

    #[test]
    fn missing_png_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", &BinaryMask::full(4, 4));
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask,label\na.png,a_mask.png,tumor\nb.png,a_mask.png,tumor\n").unwrap();
        match ingest(&path) {
            Err(BenchError::MissingFile { row, path }) => {
                assert_eq!(row, 2);
                assert!(path.ends_with("b.png"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_positive_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", &BinaryMask::empty(4, 4));
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask,label\na.png,a_mask.png,no_tumor\n").unwrap();
        assert_eq!(ingest(&path).unwrap().len(), 1);
        fs::write(&path, "image,mask,label\na.png,a_mask.png,tumor\n").unwrap();
        assert!(matches!(ingest(&path), Err(BenchError::BadMask { row: 1, .. })));
    }

    #[test]
    fn bad_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "img,mask,label\n").unwrap();
        assert!(matches!(ingest(&path), Err(BenchError::BadCsv { row: None, .. })));
        fs::write(&path, "image,mask,label\na.png,b.png\n").unwrap();
        assert!(matches!(ingest(&path), Err(BenchError::BadCsv { row: Some(1), .. })));
        let garbage = dir.path().join("x.png");
        fs::write(&garbage, b"not a png").unwrap();
        fs::write(&path, "image,mask,label\nx.png,x.png,tumor\n").unwrap();
        assert!(matches!(ingest(&path), Err(BenchError::BadMask { row: 1, .. })));
    }
}
