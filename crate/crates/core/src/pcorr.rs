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

//! Covariance, Moore-Penrose precision and partial correlation.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::ingest::{RoiLabel, TimeSeriesMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum PcorrError {
    #[error("covariance is numerically zero: every eigenvalue fell below the rank cutoff")]
    AllEigenvaluesDiscarded,
    #[error("precision diagonal at ROI {0} is not positive; the ROI is numerically rank-deficient")]
    NonPositiveDiagonal(usize),
    #[error("rank tolerance must be finite and non-negative, got {0}")]
    InvalidTolerance(f64),
    #[error("matrix is not square and symmetric")]
    NotSymmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<RoiLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionMatrix {
    pub values: DMatrix<f64>,
    /// Number of eigenvalues kept in the pseudo-inversion.
    pub rank: usize,
    pub labels: Vec<RoiLabel>,
    /// Negative eigenvalues above the cutoff that were inverted anyway.
    /// A PSD estimate should have none; a non-empty list points at corrupt input.
    pub negative_eigenvalues: Vec<f64>,
}

/// ρ with a zero diagonal; off-diagonals clamped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialCorrelationMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<RoiLabel>,
}

impl PartialCorrelationMatrix {
    /// Wraps externally supplied values (e.g. a ρ file), enforcing the type's
    /// invariants: square, exactly symmetric, zero diagonal, entries in `[-1, 1]`.
    pub fn new(values: DMatrix<f64>, labels: Vec<RoiLabel>) -> Result<Self, PcorrError> {
        let r = labels.len();
        if values.nrows() != r || values.ncols() != r {
            return Err(PcorrError::NotSymmetric);
        }
        for i in 0..r {
            if values[(i, i)] != 0.0 {
                return Err(PcorrError::NotSymmetric);
            }
            for j in (i + 1)..r {
                let v = values[(i, j)];
                if v != values[(j, i)] || !(-1.0..=1.0).contains(&v) {
                    return Err(PcorrError::NotSymmetric);
                }
            }
        }
        Ok(Self { values, labels })
    }

    pub fn roi_count(&self) -> usize {
        self.labels.len()
    }
}

/// Default relative eigenvalue cutoff: `R · ε`.
pub fn default_rank_tolerance(roi_count: usize) -> f64 {
    roi_count as f64 * f64::EPSILON
}

/// Unbiased (`T − 1`) sample covariance of mean-centred columns.
pub fn sample_covariance(ts: &TimeSeriesMatrix) -> CovarianceMatrix {
    let t = ts.values.nrows();
    let r = ts.values.ncols();
    let mut centred = ts.values.clone();
    for mut col in centred.column_iter_mut() {
        let mean = col.sum() / t as f64;
        col.add_scalar_mut(-mean);
    }
    let denom = (t - 1) as f64;
    let mut values = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let c = centred.column(i).dot(&centred.column(j)) / denom;
            values[(i, j)] = c;
            values[(j, i)] = c;
        }
    }
    CovarianceMatrix {
        values,
        labels: ts.labels.clone(),
    }
}

/// Moore-Penrose pseudo-inverse of the covariance via symmetric
/// eigendecomposition. Eigenvalues with `|λ| ≤ tol · max|λ|` are dropped.
pub fn precision_via_pseudoinverse(
    cov: &CovarianceMatrix,
    rank_tolerance: Option<f64>,
) -> Result<PrecisionMatrix, PcorrError> {
    let r = cov.values.nrows();
    let tol = rank_tolerance.unwrap_or_else(|| default_rank_tolerance(r));
    if !tol.is_finite() || tol < 0.0 {
        return Err(PcorrError::InvalidTolerance(tol));
    }
    let (values, rank, negative_eigenvalues) = symmetric_pinv(&cov.values, tol)?;
    Ok(PrecisionMatrix {
        values,
        rank,
        labels: cov.labels.clone(),
        negative_eigenvalues,
    })
}

fn symmetric_pinv(a: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, usize, Vec<f64>), PcorrError> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if lambda_max == 0.0 || !lambda_max.is_finite() {
        return Err(PcorrError::AllEigenvaluesDiscarded);
    }
    let cutoff = tol * lambda_max;
    let mut rank = 0;
    let mut negative = Vec::new();
    let mut inv = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() <= cutoff {
            continue;
        }
        rank += 1;
        if l < 0.0 {
            negative.push(l);
        }
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / l;
    }
    if rank == 0 {
        return Err(PcorrError::AllEigenvaluesDiscarded);
    }
    if rank == n && negative.is_empty() {
        if let Some(equilibrated) = equilibrated_inverse(a) {
            inv = equilibrated;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    Ok((inv, rank, negative))
}

/// `ρ_ij = −ω_ij / √(ω_ii ω_jj)` for `i ≠ j`, zero diagonal.
pub fn partial_correlation(prec: &PrecisionMatrix) -> Result<PartialCorrelationMatrix, PcorrError> {
    let w = &prec.values;
    let r = w.nrows();
    let max_diag = (0..r).map(|i| w[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let floor = 1e-12 * max_diag;
    if let Some(i) = (0..r).find(|&i| w[(i, i)] <= floor.max(0.0) || w[(i, i)].is_nan()) {
        return Err(PcorrError::NonPositiveDiagonal(i));
    }
    let mut values = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in (i + 1)..r {
            let rho = (-w[(i, j)] / (w[(i, i)] * w[(j, j)]).sqrt()).clamp(-1.0, 1.0);
            values[(i, j)] = rho;
            values[(j, i)] = rho;
        }
    }
    Ok(PartialCorrelationMatrix {
        values,
        labels: prec.labels.clone(),
    })
}

/// Full chain for one subject: covariance, pseudo-inverse, ρ.
pub fn partial_correlation_from_series(
    ts: &TimeSeriesMatrix,
    rank_tolerance: Option<f64>,
) -> Result<(PartialCorrelationMatrix, PrecisionMatrix), PcorrError> {
    let cov = sample_covariance(ts);
    let prec = precision_via_pseudoinverse(&cov, rank_tolerance)?;
    let rho = partial_correlation(&prec)?;
    Ok((rho, prec))
}

/// Inverse of a full-rank covariance as `D⁻¹ (D⁻¹ A D⁻¹)⁻¹ D⁻¹` with
/// `D = √diag(A)`. Equal to the pseudo-inverse in exact arithmetic and
/// insensitive to per-ROI scale in floating point. `None` when the unit-diagonal
/// matrix is not numerically positive definite.
fn equilibrated_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)].sqrt()).collect();
    if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return None;
    }
    let corr = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(corr);
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.iter().any(|&l| l <= default_rank_tolerance(n) * max) {
        return None;
    }
    let mut inv = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / l;
    }
    Some(DMatrix::from_fn(n, n, |i, j| {
        let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        m / (d[i] * d[j])
    }))
}

/// Relative Frobenius residuals of the four Penrose conditions for `pinv`
/// as a pseudo-inverse of `a`:
/// `‖A X A − A‖/‖A‖`, `‖X A X − X‖/‖X‖`, `‖(AX)ᵀ − AX‖/‖AX‖`, `‖(XA)ᵀ − XA‖/‖XA‖`.
pub fn penrose_residuals(a: &DMatrix<f64>, pinv: &DMatrix<f64>) -> [f64; 4] {
    fn rel(diff: DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
        let n = reference.norm();
        if n == 0.0 {
            diff.norm()
        } else {
            diff.norm() / n
        }
    }
    let ax = a * pinv;
    let xa = pinv * a;
    [
        rel(&ax * a - a, a),
        rel(&xa * pinv - pinv, pinv),
        rel(ax.transpose() - &ax, &ax),
        rel(xa.transpose() - &xa, &xa),
    ]
}
