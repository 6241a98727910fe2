//! Dataset manifests: one JSON [`SampleRecord`] per line. Relative paths are
//! resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use ctxattr_core::synthesis::Labeled;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub class_id: usize,
    pub class_name: String,
}

impl Labeled for SampleRecord {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }

    fn class_id(&self) -> usize {
        self.class_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
    /// Class names indexed by class id.
    pub classes: Vec<String>,
}

impl Manifest {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn image_path(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    pub fn mask_path(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.mask_path)
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Parse,
    Empty,
    BadId,
    DuplicateId,
    MissingFile,
    Shape,
    ClassRange,
    ClassName,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// 1-based manifest line, 0 for whole-file problems.
    pub line: usize,
    pub sample_id: Option<String>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(id) = &self.sample_id {
            write!(f, " ({})", id)?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub manifest: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} problem(s)", self.manifest.display(), self.diagnostics.len())?;
        for d in &self.diagnostics {
            write!(f, "\n  {}", d)?;
        }
        Ok(())
    }
}

/// Parses and checks a manifest: unique ids, readable image and mask files
/// with equal dimensions, and class ids in `0..C` where `C` is the number of
/// distinct class names, each id naming one class.
pub fn validate_manifest(path: &Path) -> Result<Manifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut diagnostics = Vec::new();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut rows: Vec<(usize, SampleRecord)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SampleRecord>(line) {
            Ok(r) => rows.push((i + 1, r)),
            Err(e) => diagnostics.push(Diagnostic {
                line: i + 1,
                sample_id: None,
                kind: DiagnosticKind::Parse,
                message: format!("not a sample record: {}", e),
            }),
        }
    }
    if rows.is_empty() && diagnostics.is_empty() {
        diagnostics.push(Diagnostic {
            line: 0,
            sample_id: None,
            kind: DiagnosticKind::Empty,
            message: "manifest has no records".into(),
        });
    }

    let mut first_line: HashMap<&str, usize> = HashMap::new();
    for (line, r) in &rows {
        if !is_file_safe(&r.sample_id) {
            diagnostics.push(Diagnostic {
                line: *line,
                sample_id: Some(r.sample_id.clone()),
                kind: DiagnosticKind::BadId,
                message: format!(
                    "sample_id {:?} must be ASCII letters, digits, '.', '_' or '-', not starting with '.'",
                    r.sample_id
                ),
            });
        }
        if let Some(prev) = first_line.insert(&r.sample_id, *line) {
            first_line.insert(&r.sample_id, prev);
            diagnostics.push(Diagnostic {
                line: *line,
                sample_id: Some(r.sample_id.clone()),
                kind: DiagnosticKind::DuplicateId,
                message: format!("sample_id {:?} on lines {} and {}", r.sample_id, prev, line),
            });
        }
    }

    let mut names: BTreeMap<usize, (&str, usize)> = BTreeMap::new();
    let distinct: std::collections::BTreeSet<&str> = rows.iter().map(|(_, r)| r.class_name.as_str()).collect();
    for (line, r) in &rows {
        if r.class_id >= distinct.len() {
            diagnostics.push(Diagnostic {
                line: *line,
                sample_id: Some(r.sample_id.clone()),
                kind: DiagnosticKind::ClassRange,
                message: format!("class_id {} outside 0..{}", r.class_id, distinct.len()),
            });
        }
        match names.get(&r.class_id) {
            Some((name, at)) if *name != r.class_name => diagnostics.push(Diagnostic {
                line: *line,
                sample_id: Some(r.sample_id.clone()),
                kind: DiagnosticKind::ClassName,
                message: format!("class_id {} is {:?} here but {:?} on line {}", r.class_id, r.class_name, name, at),
            }),
            Some(_) => {}
            None => {
                names.insert(r.class_id, (&r.class_name, *line));
            }
        }
    }

    for (line, r) in &rows {
        let diag = |kind, message| Diagnostic { line: *line, sample_id: Some(r.sample_id.clone()), kind, message };
        let mut dims = Vec::new();
        for (what, p) in [("image", &r.image_path), ("mask", &r.mask_path)] {
            let full = root.join(p);
            if !full.is_file() {
                diagnostics.push(diag(DiagnosticKind::MissingFile, format!("{} {} not found", what, full.display())));
                continue;
            }
            match io::image_dims(&full) {
                Ok(d) => dims.push(d),
                Err(e) => diagnostics.push(diag(DiagnosticKind::MissingFile, format!("{} unreadable: {}", what, e))),
            }
        }
        if let [img, mask] = dims[..] {
            if img != mask {
                diagnostics.push(diag(
                    DiagnosticKind::Shape,
                    format!("mask is {}x{} but image is {}x{}", mask.0, mask.1, img.0, img.1),
                ));
            }
        }
    }

    if !diagnostics.is_empty() {
        diagnostics.sort_by_key(|d| d.line);
        return Err(Error::Validation(ValidationReport { manifest: path.into(), diagnostics }));
    }
    let classes = names.into_values().map(|(n, _)| n.to_string()).collect();
    Ok(Manifest { path: path.into(), root, records: rows.into_iter().map(|(_, r)| r).collect(), classes })
}

/// Sample ids double as file names.
fn is_file_safe(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    io::write_jsonl(path, records)
}
