//! Ground-truth CSVs and the two binary task projections.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::{ClassId, Error, Result};

pub const LABEL_HEADER: [&str; 3] = ["image_id", "melanoma", "seborrheic_keratosis"];

/// Extensions tried, in order, when resolving `<image_id>` inside the image directory.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    /// Melanoma vs nevus ∪ seborrheic keratosis.
    Task1,
    /// Seborrheic keratosis vs nevus ∪ melanoma.
    Task2,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::Task1, TaskId::Task2];

    pub fn index(self) -> usize {
        match self {
            TaskId::Task1 => 0,
            TaskId::Task2 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Task1 => "task1",
            TaskId::Task2 => "task2",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One labelled image. Nevus is `(false, false)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub melanoma: bool,
    pub seborrheic_keratosis: bool,
}

pub fn task_label(record: &DatasetRecord, task: TaskId) -> ClassId {
    ClassId::from_bool(match task {
        TaskId::Task1 => record.melanoma,
        TaskId::Task2 => record.seborrheic_keratosis,
    })
}

/// First existing `<dir>/<id>.<ext>`.
pub fn resolve_image(images_dir: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| images_dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

fn parse_flag(v: &str, line: u64, column: &str) -> Result<bool> {
    // ISIC ground truth writes labels as 0.0 / 1.0.
    match v.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(Error::Data(format!("line {line}: {column} must be 0 or 1, got `{other}`"))),
    }
}

/// Parses a label CSV and resolves every image inside `images_dir`.
pub fn load_labels(csv_path: &Path, images_dir: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    parse_labels(file, csv_path, images_dir)
}

pub fn parse_labels(input: impl std::io::Read, csv_path: &Path, images_dir: &Path) -> Result<Vec<DatasetRecord>> {
    let src = csv_path.display();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{src}: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != LABEL_HEADER {
        return Err(Error::Data(format!(
            "{src}: expected header `{}`, found `{}`",
            LABEL_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Data(format!("{src}: {e}")))?;
        let line = row.position().map_or(0, |p| p.line());
        let image_id = row[0].to_owned();
        if image_id.is_empty() {
            return Err(Error::Data(format!("{src} line {line}: empty image_id")));
        }
        let melanoma = parse_flag(&row[1], line, LABEL_HEADER[1])?;
        let seborrheic_keratosis = parse_flag(&row[2], line, LABEL_HEADER[2])?;
        if melanoma && seborrheic_keratosis {
            return Err(Error::Data(format!(
                "{src} line {line}: `{image_id}` is labelled both melanoma and seborrheic keratosis"
            )));
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::Data(format!("{src} line {line}: duplicate image_id `{image_id}`")));
        }
        let path = resolve_image(images_dir, &image_id).ok_or_else(|| {
            Error::Data(format!(
                "{src} line {line}: no image for `{image_id}` in {}",
                images_dir.display()
            ))
        })?;
        records.push(DatasetRecord {
            image_id,
            path,
            melanoma,
            seborrheic_keratosis,
        });
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{src}: no records")));
    }
    Ok(records)
}
