// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Cohort manifests and per-subject time-series files.
//!
//! Both formats are comma-separated text. Lines starting with `#` are
//! comments and are skipped, so files written by this crate (which carry a
//! provenance header) read back unchanged.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: malformed manifest row {row}: {reason}", path.display())]
    MalformedManifest {
        path: PathBuf,
        line: u64,
        row: usize,
        reason: String,
    },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("unknown class label {0:?}")]
    UnknownClassLabel(String),
    #[error("{}: line {line}: malformed value at row {row}, column {col}", path.display())]
    MalformedMatrix {
        path: PathBuf,
        line: u64,
        row: usize,
        col: usize,
    },
    #[error("{}: line {line}: non-finite value at row {row}, column {col}", path.display())]
    NonFiniteValue {
        path: PathBuf,
        line: u64,
        row: usize,
        col: usize,
    },
    #[error("{}: ROI label mismatch at position {position}", path.display())]
    LabelMismatch { path: PathBuf, position: usize },
    #[error("{}: duplicate ROI label {label:?}", path.display())]
    DuplicateLabel { path: PathBuf, label: String },
    #[error("{}: column {label:?} is constant", path.display())]
    ConstantColumn { path: PathBuf, label: String },
    #[error("{}: {found} timepoints, at least 2 required", path.display())]
    TooFewTimepoints { path: PathBuf, found: usize },
    #[error("{}: {found} ROIs, at least 2 required", path.display())]
    TooFewRois { path: PathBuf, found: usize },
    #[error("subject {subject_id}: ROI set differs from the rest of the cohort")]
    InconsistentRoiSet { subject_id: String },
    #[error("subject {subject_id}: {source}")]
    Subject {
        subject_id: String,
        #[source]
        source: Box<IngestError>,
    },
}

/// A named ROI and its column position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RoiLabel {
    pub name: String,
    pub index: usize,
}

impl RoiLabel {
    pub fn new(name: impl Into<String>, index: usize) -> Self {
        Self {
            name: name.into(),
            index,
        }
    }

    /// Labels `0..names.len()` in order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Vec<RoiLabel> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| RoiLabel::new(n.as_ref(), i))
            .collect()
    }
}

impl fmt::Display for RoiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// One subject's cleaned signal: `T` timepoints (rows) by `R` ROIs (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesMatrix {
    pub subject_id: String,
    pub values: DMatrix<f64>,
    pub labels: Vec<RoiLabel>,
}

impl TimeSeriesMatrix {
    /// Builds a matrix from in-memory values, applying the same checks as
    /// [`load_timeseries`].
    pub fn new(
        subject_id: impl Into<String>,
        values: DMatrix<f64>,
        labels: Vec<RoiLabel>,
    ) -> Result<Self, IngestError> {
        let path = PathBuf::from("<memory>");
        check_labels(&path, &labels)?;
        if values.ncols() != labels.len() {
            return Err(IngestError::LabelMismatch {
                path,
                position: values.ncols().min(labels.len()),
            });
        }
        for (c, col) in values.column_iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(IngestError::NonFiniteValue {
                        path,
                        line: 0,
                        row: r,
                        col: c,
                    });
                }
            }
        }
        check_shape(&path, &values, &labels)?;
        Ok(Self {
            subject_id: subject_id.into(),
            values,
            labels,
        })
    }

    pub fn timepoints(&self) -> usize {
        self.values.nrows()
    }

    pub fn roi_count(&self) -> usize {
        self.values.ncols()
    }
}

/// Cohort membership of a subject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Healthy,
    Impaired,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Healthy, ClassLabel::Impaired];

    /// Case-insensitive, whitespace-trimmed alias lookup.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        match text.trim().to_ascii_lowercase().as_str() {
            "healthy" | "control" | "hc" => Ok(ClassLabel::Healthy),
            "mci" | "impaired" | "patient" => Ok(ClassLabel::Impaired),
            _ => Err(IngestError::UnknownClassLabel(text.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Impaired => "impaired",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub subject_id: String,
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub class: ClassLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn count(&self, class: ClassLabel) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn csv_reader(file: File) -> csv::Reader<File> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file)
}

fn csv_error(path: &Path, err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => IngestError::MalformedManifest {
            path: path.to_path_buf(),
            line,
            row: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Reads a `subject_id,path,class` manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest, IngestError> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv_reader(open(path)?);
    let mut records = reader.records();

    let malformed = |line: u64, row: usize, reason: String| IngestError::MalformedManifest {
        path: path.to_path_buf(),
        line,
        row,
        reason,
    };

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(path, e))?,
        None => return Err(malformed(1, 0, "empty manifest".into())),
    };
    let header_line = header.position().map(|p| p.line()).unwrap_or(1);
    let fields: Vec<String> = header.iter().map(|f| f.to_ascii_lowercase()).collect();
    if fields != ["subject_id", "path", "class"] {
        return Err(malformed(
            header_line,
            0,
            "header must be subject_id,path,class".into(),
        ));
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(malformed(line, row, format!("expected 3 fields, found {}", rec.len())));
        }
        let subject_id = rec[0].to_string();
        if subject_id.is_empty() {
            return Err(malformed(line, row, "empty subject_id".into()));
        }
        if rec[1].is_empty() {
            return Err(malformed(line, row, "empty path".into()));
        }
        let class = ClassLabel::parse(&rec[2])?;
        if !seen.insert(subject_id.clone()) {
            return Err(IngestError::DuplicateSubject(subject_id));
        }
        let file = Path::new(&rec[1]);
        let resolved = if file.is_absolute() {
            file.to_path_buf()
        } else {
            base.join(file)
        };
        entries.push(ManifestEntry {
            subject_id,
            path: resolved,
            class,
        });
    }
    Ok(CohortManifest { entries })
}

fn check_labels(path: &Path, labels: &[RoiLabel]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for (i, l) in labels.iter().enumerate() {
        if l.index != i {
            return Err(IngestError::LabelMismatch {
                path: path.to_path_buf(),
                position: i,
            });
        }
        if !seen.insert(l.name.as_str()) {
            return Err(IngestError::DuplicateLabel {
                path: path.to_path_buf(),
                label: l.name.clone(),
            });
        }
    }
    Ok(())
}

fn check_shape(path: &Path, values: &DMatrix<f64>, labels: &[RoiLabel]) -> Result<(), IngestError> {
    if labels.len() < 2 {
        return Err(IngestError::TooFewRois {
            path: path.to_path_buf(),
            found: labels.len(),
        });
    }
    if values.nrows() < 2 {
        return Err(IngestError::TooFewTimepoints {
            path: path.to_path_buf(),
            found: values.nrows(),
        });
    }
    for (c, col) in values.column_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(IngestError::ConstantColumn {
                path: path.to_path_buf(),
                label: labels[c].name.clone(),
            });
        }
    }
    Ok(())
}

/// Reads a labelled matrix: first row ROI labels, then one row per timepoint.
///
/// `row` and `col` in errors are 0-based positions in the numeric block;
/// `line` is the 1-based line in the file.
pub fn load_timeseries(
    path: impl AsRef<Path>,
    expected_labels: Option<&[RoiLabel]>,
) -> Result<TimeSeriesMatrix, IngestError> {
    let path = path.as_ref();
    let (labels, rows, _) = read_labelled_matrix(path)?;
    if let Some(expected) = expected_labels {
        if let Some(position) = first_label_difference(expected, &labels) {
            return Err(IngestError::LabelMismatch {
                path: path.to_path_buf(),
                position,
            });
        }
    }
    let r = labels.len();
    let values = DMatrix::from_fn(rows.len(), r, |i, j| rows[i][j]);
    check_shape(path, &values, &labels)?;
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TimeSeriesMatrix {
        subject_id,
        values,
        labels,
    })
}

pub(crate) fn first_label_difference(a: &[RoiLabel], b: &[RoiLabel]) -> Option<usize> {
    let common = a.len().min(b.len());
    (0..common)
        .find(|&i| a[i].name != b[i].name)
        .or((a.len() != b.len()).then_some(common))
}

pub(crate) type LabelledRows = (Vec<RoiLabel>, Vec<Vec<f64>>, Vec<u64>);

/// Shared reader for label-headed numeric CSV (time series and ρ matrices).
/// Returns labels, numeric rows and the 1-based line of each row.
pub(crate) fn read_labelled_matrix(
    path: &Path,
) -> Result<LabelledRows, IngestError> {
    let mut reader = csv_reader(open(path)?);
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| matrix_csv_error(path, e))?,
        None => {
            return Err(IngestError::TooFewRois {
                path: path.to_path_buf(),
                found: 0,
            })
        }
    };
    let labels: Vec<RoiLabel> = header
        .iter()
        .enumerate()
        .map(|(i, n)| RoiLabel::new(n, i))
        .collect();
    if let Some(pos) = labels.iter().position(|l| l.name.is_empty()) {
        return Err(IngestError::MalformedMatrix {
            path: path.to_path_buf(),
            line: header.position().map(|p| p.line()).unwrap_or(1),
            row: 0,
            col: pos,
        });
    }
    check_labels(path, &labels)?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| matrix_csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != labels.len() {
            return Err(IngestError::MalformedMatrix {
                path: path.to_path_buf(),
                line,
                row,
                col: rec.len().min(labels.len()),
            });
        }
        let mut values = Vec::with_capacity(labels.len());
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IngestError::MalformedMatrix {
                path: path.to_path_buf(),
                line,
                row,
                col,
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue {
                    path: path.to_path_buf(),
                    line,
                    row,
                    col,
                });
            }
            values.push(v);
        }
        rows.push(values);
        lines.push(line);
    }
    Ok((labels, rows, lines))
}

fn matrix_csv_error(path: &Path, err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        _ => IngestError::MalformedMatrix {
            path: path.to_path_buf(),
            line,
            row: 0,
            col: 0,
        },
    }
}

#[derive(Clone, Debug)]
pub struct CohortSubject {
    pub class: ClassLabel,
    pub series: TimeSeriesMatrix,
}

/// Subjects sharing one ordered ROI label list, in manifest order.
#[derive(Clone, Debug)]
pub struct ValidatedCohort {
    labels: Vec<RoiLabel>,
    subjects: Vec<CohortSubject>,
}

impl ValidatedCohort {
    pub fn from_subjects(subjects: Vec<CohortSubject>) -> Result<Self, IngestError> {
        let labels = match subjects.first() {
            Some(s) => s.series.labels.clone(),
            None => Vec::new(),
        };
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.series.subject_id.clone()) {
                return Err(IngestError::DuplicateSubject(s.series.subject_id.clone()));
            }
            if s.series.labels != labels {
                return Err(IngestError::InconsistentRoiSet {
                    subject_id: s.series.subject_id.clone(),
                });
            }
        }
        Ok(Self { labels, subjects })
    }

    pub fn labels(&self) -> &[RoiLabel] {
        &self.labels
    }

    pub fn roi_count(&self) -> usize {
        self.labels.len()
    }

    pub fn subjects(&self) -> &[CohortSubject] {
        &self.subjects
    }

    pub fn class(&self, class: ClassLabel) -> impl Iterator<Item = &CohortSubject> {
        self.subjects.iter().filter(move |s| s.class == class)
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.class(class).count()
    }

    /// Disparity needs at least one subject in each class.
    pub fn disparity_available(&self) -> bool {
        ClassLabel::ALL.iter().all(|&c| self.count(c) > 0)
    }
}

/// A subject dropped during a lenient load or a pipeline run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectFailure {
    pub subject_id: String,
    pub class: ClassLabel,
    pub reason: String,
}

fn load_entries(manifest: &CohortManifest) -> Vec<Result<TimeSeriesMatrix, IngestError>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            load_timeseries(&entry.path, None)
                .map(|mut ts| {
                    ts.subject_id = entry.subject_id.clone();
                    ts
                })
                .map_err(|e| IngestError::Subject {
                    subject_id: entry.subject_id.clone(),
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Loads every subject; any failure or ROI inconsistency is an error.
pub fn validate_cohort(manifest: &CohortManifest) -> Result<ValidatedCohort, IngestError> {
    let mut subjects = Vec::with_capacity(manifest.entries.len());
    for (entry, loaded) in manifest.entries.iter().zip(load_entries(manifest)) {
        let series = loaded?;
        if let Some(first) = subjects.first() {
            let first: &CohortSubject = first;
            if first.series.labels != series.labels {
                return Err(IngestError::InconsistentRoiSet {
                    subject_id: entry.subject_id.clone(),
                });
            }
        }
        subjects.push(CohortSubject {
            class: entry.class,
            series,
        });
    }
    ValidatedCohort::from_subjects(subjects)
}

/// Loads what it can. The reference ROI list is that of the first subject
/// (in manifest order) that loads; subjects disagreeing with it are failures.
pub fn load_cohort_lenient(manifest: &CohortManifest) -> (ValidatedCohort, Vec<SubjectFailure>) {
    let mut subjects: Vec<CohortSubject> = Vec::new();
    let mut failures = Vec::new();
    for (entry, loaded) in manifest.entries.iter().zip(load_entries(manifest)) {
        let result = loaded.and_then(|series| match subjects.first() {
            Some(first) if first.series.labels != series.labels => {
                Err(IngestError::InconsistentRoiSet {
                    subject_id: entry.subject_id.clone(),
                })
            }
            _ => Ok(series),
        });
        match result {
            Ok(series) => subjects.push(CohortSubject {
                class: entry.class,
                series,
            }),
            Err(e) => failures.push(SubjectFailure {
                subject_id: entry.subject_id.clone(),
                class: entry.class,
                reason: e.to_string(),
            }),
        }
    }
    let cohort = ValidatedCohort::from_subjects(subjects)
        .expect("subjects are unique and share labels by construction");
    (cohort, failures)
}
