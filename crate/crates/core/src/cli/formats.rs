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

//! Text formats exchanged between pipeline stages.
//!
//! Every file starts with a provenance comment
//! `# dmn-nss <version> stage=<stage> config=<hash>`; the hash covers the
//! parameters consumed by the stage that wrote the file. Further `#` lines
//! may carry `key=value` metadata. Readers skip comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::community::{Method, SubjectDetection, SubjectDetectionRecord};
use crate::ingest::{read_labelled_matrix, ClassLabel, RoiLabel};
use crate::nss::{DisparityDenominator, DisparityReport, DisparityRow, NssRow, NssTable, TopKReport};
use crate::pcorr::PartialCorrelationMatrix;

use super::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 16 hex digits of SHA-256 over the canonical config string.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

pub fn provenance(stage: &str, canonical_config: &str) -> String {
    format!(
        "# dmn-nss {VERSION} stage={stage} config={}\n",
        config_hash(canonical_config)
    )
}

fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
}

fn data_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: line {line}: {msg}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `key=value` pairs from leading comment lines.
fn comment_metadata(text: &str) -> HashMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .flat_map(|l| l.trim_start_matches('#').split_whitespace())
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn records(text: &str) -> csv::StringRecordsIntoIter<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .into_records()
}

fn expect_header(path: &Path, rec: Option<csv::Result<csv::StringRecord>>, header: &[&str]) -> Result<(), CliError> {
    match rec {
        Some(Ok(r)) if r.iter().eq(header.iter().copied()) => Ok(()),
        Some(Ok(r)) => Err(data_err(
            path,
            r.position().map_or(0, |p| p.line()),
            format!("expected header {}", header.join(",")),
        )),
        Some(Err(e)) => Err(data_err(path, e.position().map_or(0, |p| p.line()), e)),
        None => Err(data_err(path, 0, "empty file")),
    }
}

// ---- ρ matrices -----------------------------------------------------------

pub fn write_rho(rho: &PartialCorrelationMatrix, header: &str) -> String {
    let mut out = String::from(header);
    out.push_str(&csv_line(rho.labels.iter().map(|l| l.name.as_str())));
    for row in rho.values.row_iter() {
        out.push_str(&csv_line(row.iter().map(|v| v.to_string())));
    }
    out
}

pub fn read_rho(path: &Path) -> Result<PartialCorrelationMatrix, CliError> {
    let (labels, rows, lines) = read_labelled_matrix(path).map_err(|e| CliError::Data(e.to_string()))?;
    let r = labels.len();
    if rows.len() != r {
        return Err(data_err(
            path,
            lines.last().copied().unwrap_or(1),
            format!("expected {r} matrix rows, found {}", rows.len()),
        ));
    }
    let values = nalgebra::DMatrix::from_fn(r, r, |i, j| rows[i][j]);
    PartialCorrelationMatrix::new(values, labels).map_err(|e| data_err(path, 0, e))
}

// ---- community log --------------------------------------------------------

pub const COMMUNITY_HEADER: [&str; 4] = ["subject_id", "method", "community_index", "node_labels"];

pub fn community_log_header(header: &str) -> String {
    format!("{header}{}", csv_line(COMMUNITY_HEADER))
}

/// Rows for one subject: every community of every method, then its largest.
pub fn community_log_rows(detection: &SubjectDetection, labels: &[RoiLabel]) -> String {
    let id = detection.record.subject_id.as_str();
    let mut out = String::new();
    let names = |nodes: &[usize]| nodes.iter().map(|&v| labels[v].name.clone()).collect::<Vec<_>>();
    for m in Method::ALL {
        for (c, nodes) in detection.communities(m).iter().enumerate() {
            let mut fields = vec![id.to_string(), m.to_string(), c.to_string()];
            fields.extend(names(nodes));
            out.push_str(&csv_line(fields));
        }
        let mut fields = vec![id.to_string(), m.to_string(), "largest".to_string()];
        fields.extend(names(detection.record.largest(m)));
        out.push_str(&csv_line(fields));
    }
    out
}

/// Records rebuilt from the `largest` rows, in order of first appearance.
pub fn read_community_log(path: &Path, labels: &[RoiLabel]) -> Result<Vec<SubjectDetectionRecord>, CliError> {
    let text = read_text(path)?;
    let index: HashMap<&str, usize> = labels.iter().map(|l| (l.name.as_str(), l.index)).collect();
    let mut recs = records(&text);
    expect_header(path, recs.next(), &COMMUNITY_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut found: HashMap<String, (SubjectDetectionRecord, [bool; 4])> = HashMap::new();
    for rec in recs {
        let rec = rec.map_err(|e| data_err(path, e.position().map_or(0, |p| p.line()), &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 3 {
            return Err(data_err(path, line, "expected subject_id,method,community_index,..."));
        }
        let method: Method = rec[1].parse().map_err(|e| data_err(path, line, e))?;
        let mut nodes = Vec::with_capacity(rec.len() - 3);
        for (k, name) in rec.iter().skip(3).enumerate() {
            let v = index
                .get(name)
                .ok_or_else(|| data_err(path, line, format!("column {}: unknown ROI label {name:?}", k + 4)))?;
            nodes.push(*v);
        }
        let id = rec[0].to_string();
        let entry = found.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (SubjectDetectionRecord::new(id.clone()), [false; 4])
        });
        if &rec[2] == "largest" {
            entry.0.set(method, nodes);
            entry.1[method as usize] = true;
        } else if rec[2].parse::<usize>().is_err() {
            return Err(data_err(path, line, "column 3: community_index must be an integer or \"largest\""));
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (rec, seen) = found.remove(&id).expect("recorded on first sight");
            if seen.iter().all(|&s| s) {
                Ok(rec)
            } else {
                Err(CliError::Data(format!(
                    "{}: subject {id} lacks a largest record for some method",
                    path.display()
                )))
            }
        })
        .collect()
}

// ---- NSS tables -----------------------------------------------------------

pub const NSS_HEADER: [&str; 4] = ["roi", "h", "r_mean", "nss"];

pub fn write_nss_table(table: &NssTable, header: &str) -> String {
    let mut out = String::from(header);
    let _ = writeln!(out, "# cohort={} subjects={}", table.cohort, table.subject_count);
    out.push_str(&csv_line(NSS_HEADER));
    for r in &table.rows {
        out.push_str(&csv_line([
            r.label.name.clone(),
            r.occurrence.to_string(),
            r.rank.to_string(),
            r.nss.to_string(),
        ]));
    }
    out
}

fn parse_f64(path: &Path, line: u64, col: usize, s: &str) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| data_err(path, line, format!("column {col}: not a number: {s:?}")))
}

pub fn read_nss_table(path: &Path) -> Result<NssTable, CliError> {
    let text = read_text(path)?;
    let meta = comment_metadata(&text);
    let cohort = meta
        .get("cohort")
        .ok_or_else(|| data_err(path, 1, "missing cohort metadata"))
        .and_then(|c| ClassLabel::parse(c).map_err(|e| data_err(path, 1, e)))?;
    let subject_count = meta
        .get("subjects")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| data_err(path, 1, "missing subjects metadata"))?;
    let mut recs = records(&text);
    expect_header(path, recs.next(), &NSS_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in recs.enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.position().map_or(0, |p| p.line()), &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(data_err(path, line, "expected roi,h,r_mean,nss"));
        }
        rows.push(NssRow {
            label: RoiLabel::new(&rec[0], i),
            occurrence: parse_f64(path, line, 2, &rec[1])?,
            rank: parse_f64(path, line, 3, &rec[2])?,
            nss: parse_f64(path, line, 4, &rec[3])?,
        });
    }
    Ok(NssTable {
        cohort,
        subject_count,
        rows,
    })
}

// ---- disparity ------------------------------------------------------------

pub const DISPARITY_HEADER: [&str; 4] = ["roi", "nss_healthy", "nss_impaired", "disparity_percent"];
pub const UNDEFINED: &str = "undefined";

pub fn write_disparity(report: &DisparityReport, header: &str) -> String {
    let mut out = String::from(header);
    let _ = writeln!(out, "# denominator={}", report.denominator);
    out.push_str(&csv_line(DISPARITY_HEADER));
    for r in &report.rows {
        out.push_str(&csv_line([
            r.label.name.clone(),
            r.nss_healthy.to_string(),
            r.nss_impaired.to_string(),
            r.percent.map_or_else(|| UNDEFINED.to_string(), |p| p.to_string()),
        ]));
    }
    out
}

/// Rows keep file order; `label.index` is the row position.
pub fn read_disparity(path: &Path) -> Result<DisparityReport, CliError> {
    let text = read_text(path)?;
    let meta = comment_metadata(&text);
    let denominator: DisparityDenominator = meta
        .get("denominator")
        .map(|d| d.parse().map_err(|e| data_err(path, 1, e)))
        .transpose()?
        .unwrap_or_default();
    let mut recs = records(&text);
    expect_header(path, recs.next(), &DISPARITY_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in recs.enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.position().map_or(0, |p| p.line()), &e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(data_err(path, line, "expected roi,nss_healthy,nss_impaired,disparity_percent"));
        }
        rows.push(DisparityRow {
            label: RoiLabel::new(&rec[0], i),
            nss_healthy: parse_f64(path, line, 2, &rec[1])?,
            nss_impaired: parse_f64(path, line, 3, &rec[2])?,
            percent: if &rec[3] == UNDEFINED {
                None
            } else {
                Some(parse_f64(path, line, 4, &rec[3])?)
            },
        });
    }
    Ok(DisparityReport { denominator, rows })
}

// ---- report ---------------------------------------------------------------

/// Top-k table in the `ROI name, percentage` layout, two decimals.
pub fn write_top_k(top: &TopKReport, k: usize, header: &str) -> String {
    let mut out = String::from(header);
    let mut meta = format!("# top_k={k}");
    if let (Some(t), Some(n)) = (top.threshold, top.exceeding) {
        let _ = write!(meta, " threshold={t} rois_over_threshold={n}");
    }
    out.push_str(&meta);
    out.push('\n');
    out.push_str(&csv_line(["roi", "disparity_percent"]));
    for r in &top.rows {
        out.push_str(&csv_line([r.label.name.clone(), format!("{:.2}", r.percent.unwrap_or(0.0))]));
    }
    out
}

/// Per-ROI NSS of both cohorts in ROI index order, for plotting.
pub fn write_nss_comparison(report: &DisparityReport, header: &str) -> String {
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by_key(|r| r.label.index);
    let mut out = String::from(header);
    out.push_str(&csv_line(["roi", "nss_healthy", "nss_impaired"]));
    for r in rows {
        out.push_str(&csv_line([r.label.name.clone(), r.nss_healthy.to_string(), r.nss_impaired.to_string()]));
    }
    out
}
