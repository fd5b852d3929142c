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

//! Synthetic two-class cohorts with a planted coupled core.
//!
//! Healthy subjects draw from `N(0, Σ)` where `Σ` has unit diagonal,
//! `ρ_core` between every pair of core nodes and zero elsewhere. Impaired
//! subjects use the same matrix with every off-diagonal entry touching a
//! weakened node multiplied by `α`. Signal amplitude is untouched, so the
//! class difference lives in the correlation structure only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{ClassLabel, CohortSubject, RoiLabel, TimeSeriesMatrix, ValidatedCohort};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub roi_count: usize,
    pub timepoints: usize,
    pub subjects_per_class: usize,
    pub core: Vec<usize>,
    pub weakened: Vec<usize>,
    /// `ρ_core`, in `(0, 1)`.
    pub coupling: f64,
    /// `α`, in `[0, 1]`; 1 makes the classes identical in distribution.
    pub attenuation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Twelve ROIs, core `0..6`, weakened `{0, 1}`, `α = 0.3`,
    /// 20 subjects per class, 200 timepoints.
    fn default() -> Self {
        Self {
            roi_count: 12,
            timepoints: 200,
            subjects_per_class: 20,
            core: (0..6).collect(),
            weakened: vec![0, 1],
            coupling: 0.8,
            attenuation: 0.3,
            seed: 20240901,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let r = self.roi_count;
        if self.core.len() < 3 || self.core.len() > r {
            return bad(format!("core size {} must be in 3..={r}", self.core.len()));
        }
        if self.core.iter().any(|&v| v >= r) {
            return bad("core node out of range".into());
        }
        let mut core = self.core.clone();
        core.sort_unstable();
        core.dedup();
        if core.len() != self.core.len() {
            return bad("duplicate core node".into());
        }
        if self.weakened.iter().any(|v| !self.core.contains(v)) {
            return bad("weakened nodes must be a subset of the core".into());
        }
        if self.timepoints <= r {
            return bad(format!("timepoints {} must exceed ROI count {r}", self.timepoints));
        }
        if self.subjects_per_class == 0 {
            return bad("need at least one subject per class".into());
        }
        if !(self.coupling > 0.0 && self.coupling < 1.0) {
            return bad(format!("coupling {} outside (0, 1)", self.coupling));
        }
        if !(0.0..=1.0).contains(&self.attenuation) {
            return bad(format!("attenuation {} outside [0, 1]", self.attenuation));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<RoiLabel> {
        let width = (self.roi_count.max(1) - 1).to_string().len().max(2);
        (0..self.roi_count)
            .map(|i| RoiLabel::new(format!("roi_{i:0width$}"), i))
            .collect()
    }

    pub fn subject_id(class: ClassLabel, index: usize) -> String {
        format!("{}_{:03}", class.as_str(), index + 1)
    }

    /// Target covariance for one class.
    pub fn covariance(&self, class: ClassLabel) -> DMatrix<f64> {
        let r = self.roi_count;
        let mut cov = DMatrix::identity(r, r);
        for &i in &self.core {
            for &j in &self.core {
                if i == j {
                    continue;
                }
                let touched = self.weakened.contains(&i) || self.weakened.contains(&j);
                cov[(i, j)] = match class {
                    ClassLabel::Impaired if touched => self.coupling * self.attenuation,
                    _ => self.coupling,
                };
            }
        }
        cov
    }
}

/// Symmetric square root; rejects matrices that are not positive definite.
fn symmetric_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthError> {
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min <= 1e-10 {
        return Err(SynthError::InvalidSpec(format!(
            "covariance is not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn draw(root: &DMatrix<f64>, timepoints: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = root.nrows();
    let z = DMatrix::from_fn(timepoints, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    z * root.transpose()
}

/// Draws every subject. Subject `i` (healthy first, then impaired) uses
/// ChaCha stream `i` of the spec seed.
pub fn generate_cohort(spec: &SynthSpec) -> Result<ValidatedCohort, SynthError> {
    spec.validate()?;
    let labels = spec.labels();
    let roots = [
        symmetric_sqrt(&spec.covariance(ClassLabel::Healthy))?,
        symmetric_sqrt(&spec.covariance(ClassLabel::Impaired))?,
    ];
    let n = spec.subjects_per_class;
    let subjects: Vec<CohortSubject> = (0..2 * n)
        .into_par_iter()
        .map(|k| {
            let (class, root) = if k < n {
                (ClassLabel::Healthy, &roots[0])
            } else {
                (ClassLabel::Impaired, &roots[1])
            };
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let values = draw(root, spec.timepoints, &mut rng);
            let series = TimeSeriesMatrix::new(SynthSpec::subject_id(class, k % n), values, labels.clone())
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            Ok(CohortSubject { class, series })
        })
        .collect::<Result<_, SynthError>>()?;
    ValidatedCohort::from_subjects(subjects).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// Writes `manifest.csv` and `subjects/<id>.csv` under `dir`, each file
/// starting with `header` lines (already `#`-prefixed). Returns the manifest path.
pub fn write_cohort(cohort: &ValidatedCohort, dir: &Path, header: &[String]) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let subject_dir = dir.join("subjects");
    fs::create_dir_all(&subject_dir).map_err(io(&subject_dir))?;

    for s in cohort.subjects() {
        let path = subject_dir.join(format!("{}.csv", s.series.subject_id));
        let mut out = Vec::new();
        write_header(&mut out, header);
        write_series(&mut out, &s.series);
        fs::write(&path, out).map_err(io(&path))?;
    }

    let manifest = dir.join("manifest.csv");
    let mut out = Vec::new();
    write_header(&mut out, header);
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["subject_id", "path", "class"]).expect("in-memory write");
        for s in cohort.subjects() {
            let rel = format!("subjects/{}.csv", s.series.subject_id);
            w.write_record([s.series.subject_id.as_str(), &rel, s.class.as_str()])
                .expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    fs::write(&manifest, out).map_err(io(&manifest))?;
    Ok(manifest)
}

fn write_header(out: &mut Vec<u8>, header: &[String]) {
    for line in header {
        writeln!(out, "{line}").expect("in-memory write");
    }
}

/// Time-series CSV body: label row, then one row per timepoint.
pub fn write_series(out: &mut Vec<u8>, ts: &TimeSeriesMatrix) {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ts.labels.iter().map(|l| l.name.as_str()))
        .expect("in-memory write");
    for row in ts.values.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    w.flush().expect("in-memory write");
}
