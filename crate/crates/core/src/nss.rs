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

//! Node Significance Score and cohort disparity.
//!
//! Per subject, a node's rank is the number of methods whose largest
//! sub-community contains it (0..=4). Per cohort, `h` is the fraction of
//! subjects where any method's largest sub-community contains the node, and
//! `N = r̄² + √h` with `r̄` the aggregated rank.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::community::{Method, SubjectDetectionRecord};
use crate::ingest::{ClassLabel, RoiLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NssError {
    #[error("cohort has no subjects")]
    EmptyCohort,
    #[error("ROI label lists differ at position {0}")]
    LabelMismatch(usize),
}

/// Upper bound of `N`: `4² + √1`.
pub const NSS_MAX: f64 = 17.0;

pub fn nss_score(rank: f64, occurrence: f64) -> f64 {
    rank * rank + occurrence.sqrt()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRankVector {
    pub subject_id: String,
    pub ranks: Vec<u8>,
}

pub fn node_rank(record: &SubjectDetectionRecord, roi_count: usize) -> NodeRankVector {
    let mut ranks = vec![0u8; roi_count];
    for m in Method::ALL {
        for &v in record.largest(m) {
            if v < roi_count {
                ranks[v] += 1;
            }
        }
    }
    NodeRankVector {
        subject_id: record.subject_id.clone(),
        ranks,
    }
}

pub fn highest_occurrence(records: &[SubjectDetectionRecord], roi_count: usize) -> Result<Vec<f64>, NssError> {
    if records.is_empty() {
        return Err(NssError::EmptyCohort);
    }
    let mut hits = vec![0usize; roi_count];
    for rec in records {
        for (v, hit) in hits.iter_mut().enumerate() {
            if Method::ALL.iter().any(|&m| rec.contains(m, v)) {
                *hit += 1;
            }
        }
    }
    let n = records.len() as f64;
    Ok(hits.into_iter().map(|c| c as f64 / n).collect())
}

/// How per-subject ranks are folded into one cohort-level rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum RankAggregation {
    #[default]
    Mean,
    Median,
    /// Most frequent rank; ties go to the smaller rank.
    Mode,
}

impl RankAggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            RankAggregation::Mean => "mean",
            RankAggregation::Median => "median",
            RankAggregation::Mode => "mode",
        }
    }

    fn aggregate(self, ranks: &mut [u8]) -> f64 {
        let n = ranks.len();
        match self {
            RankAggregation::Mean => ranks.iter().map(|&r| r as f64).sum::<f64>() / n as f64,
            RankAggregation::Median => {
                ranks.sort_unstable();
                if n % 2 == 1 {
                    ranks[n / 2] as f64
                } else {
                    (ranks[n / 2 - 1] as f64 + ranks[n / 2] as f64) / 2.0
                }
            }
            RankAggregation::Mode => {
                let mut counts = [0usize; 5];
                for &r in ranks.iter() {
                    counts[r as usize] += 1;
                }
                let best = (0..5).max_by_key(|&r| (counts[r], std::cmp::Reverse(r))).unwrap();
                best as f64
            }
        }
    }
}

impl fmt::Display for RankAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(RankAggregation::Mean),
            "median" => Ok(RankAggregation::Median),
            "mode" => Ok(RankAggregation::Mode),
            _ => Err(format!("unknown rank aggregation {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NssRow {
    pub label: RoiLabel,
    pub occurrence: f64,
    pub rank: f64,
    pub nss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NssTable {
    pub cohort: ClassLabel,
    pub subject_count: usize,
    pub rows: Vec<NssRow>,
}

impl NssTable {
    pub fn labels(&self) -> Vec<RoiLabel> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }
}

pub fn nss_table(
    records: &[SubjectDetectionRecord],
    cohort: ClassLabel,
    labels: &[RoiLabel],
    aggregation: RankAggregation,
) -> Result<NssTable, NssError> {
    let r = labels.len();
    let occurrence = highest_occurrence(records, r)?;
    let ranks: Vec<NodeRankVector> = records.iter().map(|rec| node_rank(rec, r)).collect();
    let rows = labels
        .iter()
        .enumerate()
        .map(|(v, label)| {
            let mut per_subject: Vec<u8> = ranks.iter().map(|nr| nr.ranks[v]).collect();
            let rank = aggregation.aggregate(&mut per_subject);
            NssRow {
                label: label.clone(),
                occurrence: occurrence[v],
                rank,
                nss: nss_score(rank, occurrence[v]),
            }
        })
        .collect();
    Ok(NssTable {
        cohort,
        subject_count: records.len(),
        rows,
    })
}

/// Reference value dividing the NSS difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DisparityDenominator {
    #[default]
    Healthy,
    Impaired,
    Mean,
}

impl DisparityDenominator {
    pub fn as_str(self) -> &'static str {
        match self {
            DisparityDenominator::Healthy => "healthy",
            DisparityDenominator::Impaired => "impaired",
            DisparityDenominator::Mean => "mean",
        }
    }

    fn value(self, healthy: f64, impaired: f64) -> f64 {
        match self {
            DisparityDenominator::Healthy => healthy,
            DisparityDenominator::Impaired => impaired,
            DisparityDenominator::Mean => 0.5 * (healthy + impaired),
        }
    }
}

impl fmt::Display for DisparityDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisparityDenominator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "healthy" => Ok(DisparityDenominator::Healthy),
            "impaired" => Ok(DisparityDenominator::Impaired),
            "mean" => Ok(DisparityDenominator::Mean),
            _ => Err(format!("unknown disparity denominator {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisparityRow {
    pub label: RoiLabel,
    pub nss_healthy: f64,
    pub nss_impaired: f64,
    /// `100 · (N_healthy − N_impaired) / denominator`; `None` when the
    /// denominator is zero.
    pub percent: Option<f64>,
}

/// Rows sorted by `|percent|` descending (ties by ROI index), undefined rows last.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityReport {
    pub denominator: DisparityDenominator,
    pub rows: Vec<DisparityRow>,
}

pub fn disparity(
    healthy: &NssTable,
    impaired: &NssTable,
    denominator: DisparityDenominator,
) -> Result<DisparityReport, NssError> {
    if let Some(pos) = crate::ingest::first_label_difference(&healthy.labels(), &impaired.labels()) {
        return Err(NssError::LabelMismatch(pos));
    }
    let mut rows: Vec<DisparityRow> = healthy
        .rows
        .iter()
        .zip(&impaired.rows)
        .map(|(h, m)| {
            let d = denominator.value(h.nss, m.nss);
            DisparityRow {
                label: h.label.clone(),
                nss_healthy: h.nss,
                nss_impaired: m.nss,
                percent: (d > 0.0).then(|| 100.0 * (h.nss - m.nss) / d),
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.percent, b.percent) {
        (Some(x), Some(y)) => y.abs().total_cmp(&x.abs()).then(a.label.index.cmp(&b.label.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.label.index.cmp(&b.label.index),
    });
    Ok(DisparityReport { denominator, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopKReport {
    pub rows: Vec<DisparityRow>,
    pub threshold: Option<f64>,
    /// ROIs with `|percent| > threshold`, when a threshold was given.
    pub exceeding: Option<usize>,
}

/// First `k` defined rows (clamped to what exists).
pub fn top_k_report(report: &DisparityReport, k: usize, threshold: Option<f64>) -> TopKReport {
    let defined = report.rows.iter().filter(|r| r.percent.is_some());
    TopKReport {
        rows: defined.clone().take(k).cloned().collect(),
        threshold,
        exceeding: threshold.map(|t| defined.filter(|r| r.percent.unwrap().abs() > t).count()),
    }
}
