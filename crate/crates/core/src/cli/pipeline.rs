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

//! End-to-end run and the individual stages behind the subcommands.
//!
//! Stages and the one-shot run share the same per-subject functions and the
//! same writers, so running the stages by hand reproduces the run's files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::community::{detect_subject, DetectionConfig, EigenVariant, SubjectDetection, SubjectDetectionRecord};
use crate::graph::{build_weighted_graph, EdgePolicy, InclusionMode};
use crate::ingest::{
    load_cohort_lenient, load_manifest, read_labelled_matrix, ClassLabel, CohortManifest, RoiLabel,
    SubjectFailure, TimeSeriesMatrix, ValidatedCohort,
};
use crate::nss::{disparity, nss_table, DisparityDenominator, DisparityReport, NssTable, RankAggregation};
use crate::pcorr::{partial_correlation_from_series, PartialCorrelationMatrix};

use super::formats::{self, provenance};
use super::CliError;

pub const COMMUNITIES_FILE: &str = "communities.csv";
pub const DISPARITY_FILE: &str = "disparity.csv";
pub const METADATA_FILE: &str = "run_metadata.json";

pub fn nss_file(class: ClassLabel) -> String {
    format!("nss_{class}.csv")
}

/// Every analysis parameter, grouped by the stage that consumes it.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    /// `None`: `R · ε`.
    pub rank_tolerance: Option<f64>,
    pub edge_policy: EdgePolicy,
    pub cpm_k: usize,
    pub eigen_variant: EigenVariant,
    /// Shuffle Louvain's node order with a per-subject seed derived from `seed`.
    pub shuffle_louvain: bool,
    pub seed: u64,
    pub rank_aggregation: RankAggregation,
    pub denominator: DisparityDenominator,
}

pub const DEFAULT_SEED: u64 = 0;

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            rank_tolerance: None,
            edge_policy: EdgePolicy::default(),
            cpm_k: 3,
            eigen_variant: EigenVariant::ModularityMatrix,
            shuffle_louvain: false,
            seed: DEFAULT_SEED,
            rank_aggregation: RankAggregation::Mean,
            denominator: DisparityDenominator::Healthy,
        }
    }
}

impl AnalysisConfig {
    pub fn pcorr_canonical(&self) -> String {
        match self.rank_tolerance {
            Some(t) => format!("rank_tolerance={t}"),
            None => "rank_tolerance=default".to_string(),
        }
    }

    pub fn communities_canonical(&self) -> String {
        let louvain = if self.shuffle_louvain {
            format!("shuffled(seed={})", self.seed)
        } else {
            "natural".to_string()
        };
        format!(
            "edge_policy={};cpm_k={};eigen_variant={};louvain_order={louvain}",
            self.edge_policy, self.cpm_k, self.eigen_variant
        )
    }

    pub fn nss_canonical(&self) -> String {
        format!("rank_aggregation={}", self.rank_aggregation)
    }

    pub fn disparity_canonical(&self) -> String {
        format!("denominator={}", self.denominator)
    }

    pub fn detection_config(&self, subject_id: &str) -> DetectionConfig {
        DetectionConfig {
            cpm_k: self.cpm_k,
            eigen_variant: self.eigen_variant,
            louvain_seed: self.shuffle_louvain.then(|| subject_seed(self.seed, subject_id)),
        }
    }
}

/// Seed that depends on the subject's id, not its position, so stage runs
/// over a filtered manifest agree with the full run.
pub fn subject_seed(seed: u64, subject_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{subject_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub analysis: AnalysisConfig,
    /// `None`: available parallelism.
    pub workers: Option<usize>,
    /// Treat any skipped subject as a failure of the run (exit 3).
    pub strict: bool,
}

pub fn subject_rho(ts: &TimeSeriesMatrix, cfg: &AnalysisConfig) -> Result<PartialCorrelationMatrix, String> {
    partial_correlation_from_series(ts, cfg.rank_tolerance)
        .map(|(rho, _)| rho)
        .map_err(|e| e.to_string())
}

pub fn subject_detection(
    subject_id: &str,
    rho: &PartialCorrelationMatrix,
    cfg: &AnalysisConfig,
) -> Result<SubjectDetection, String> {
    let g = build_weighted_graph(rho, &cfg.edge_policy).map_err(|e| e.to_string())?;
    detect_subject(subject_id, &g, &cfg.detection_config(subject_id)).map_err(|e| e.to_string())
}

/// In-memory result of analysing a cohort.
#[derive(Clone, Debug)]
pub struct CohortAnalysis {
    pub labels: Vec<RoiLabel>,
    pub detections: Vec<(ClassLabel, SubjectDetection)>,
    pub failures: Vec<SubjectFailure>,
    pub healthy: Option<NssTable>,
    pub impaired: Option<NssTable>,
    pub disparity: Option<DisparityReport>,
}

/// Healthy table, impaired table, disparity.
pub type Aggregate = (Option<NssTable>, Option<NssTable>, Option<DisparityReport>);

/// Per-class NSS tables plus disparity when both exist. A class listed in
/// `expected` that ends with no records is an error.
pub fn aggregate(
    labels: &[RoiLabel],
    records: &[(ClassLabel, &SubjectDetectionRecord)],
    expected: &[ClassLabel],
    cfg: &AnalysisConfig,
) -> Result<Aggregate, CliError> {
    let mut tables = [None, None];
    for (slot, class) in ClassLabel::ALL.into_iter().enumerate() {
        let members: Vec<_> = records
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|&(_, r)| r.clone())
            .collect();
        if members.is_empty() {
            if expected.contains(&class) {
                return Err(CliError::Data(format!("{class} cohort ended empty")));
            }
            continue;
        }
        tables[slot] = Some(
            nss_table(&members, class, labels, cfg.rank_aggregation).map_err(|e| CliError::Data(e.to_string()))?,
        );
    }
    let [healthy, impaired] = tables;
    let report = match (&healthy, &impaired) {
        (Some(h), Some(m)) => Some(disparity(h, m, cfg.denominator).map_err(|e| CliError::Data(e.to_string()))?),
        _ => None,
    };
    Ok((healthy, impaired, report))
}

fn records(detections: &[(ClassLabel, SubjectDetection)]) -> Vec<(ClassLabel, &SubjectDetectionRecord)> {
    detections.iter().map(|(c, d)| (*c, &d.record)).collect()
}

/// Runs every subject of an in-memory cohort. Subjects are processed in
/// parallel; results keep cohort order.
pub fn analyze_cohort(cohort: &ValidatedCohort, cfg: &AnalysisConfig) -> Result<CohortAnalysis, CliError> {
    let mut analysis = detect_cohort(cohort, cfg);
    let expected: Vec<ClassLabel> = ClassLabel::ALL.into_iter().filter(|&c| cohort.count(c) > 0).collect();
    let (healthy, impaired, disparity) = aggregate(cohort.labels(), &records(&analysis.detections), &expected, cfg)?;
    analysis.healthy = healthy;
    analysis.impaired = impaired;
    analysis.disparity = disparity;
    Ok(analysis)
}

/// Detection for every subject, without aggregation.
fn detect_cohort(cohort: &ValidatedCohort, cfg: &AnalysisConfig) -> CohortAnalysis {
    let outcomes: Vec<_> = cohort
        .subjects()
        .par_iter()
        .map(|s| {
            let id = &s.series.subject_id;
            let result = subject_rho(&s.series, cfg).and_then(|rho| subject_detection(id, &rho, cfg));
            (s.class, id.clone(), result)
        })
        .collect();
    let mut detections = Vec::new();
    let mut failures = Vec::new();
    for (class, subject_id, result) in outcomes {
        match result {
            Ok(d) => detections.push((class, d)),
            Err(reason) => failures.push(SubjectFailure {
                subject_id,
                class,
                reason,
            }),
        }
    }
    CohortAnalysis {
        labels: cohort.labels().to_vec(),
        detections,
        failures,
        healthy: None,
        impaired: None,
        disparity: None,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn community_log(labels: &[RoiLabel], detections: &[&SubjectDetection], cfg: &AnalysisConfig) -> String {
    let mut out = formats::community_log_header(&provenance("communities", &cfg.communities_canonical()));
    for d in detections {
        out.push_str(&formats::community_log_rows(d, labels));
    }
    out
}

fn write_tables(
    out_dir: &Path,
    healthy: &Option<NssTable>,
    impaired: &Option<NssTable>,
    cfg: &AnalysisConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let header = provenance("nss", &cfg.nss_canonical());
    let mut written = Vec::new();
    for t in [healthy, impaired].into_iter().flatten() {
        let path = out_dir.join(nss_file(t.cohort));
        write(&path, &formats::write_nss_table(t, &header))?;
        written.push(path);
    }
    Ok(written)
}

fn write_disparity(path: &Path, report: &DisparityReport, cfg: &AnalysisConfig) -> Result<(), CliError> {
    let header = provenance("disparity", &cfg.disparity_canonical());
    write(path, &formats::write_disparity(report, &header))
}

#[derive(Serialize)]
struct FailureEntry<'a> {
    subject_id: &'a str,
    class: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    version: &'static str,
    manifest: String,
    out_dir: String,
    rank_tolerance: Option<f64>,
    edge_mode: &'static str,
    edge_parameter: f64,
    cpm_k: usize,
    eigen_variant: &'static str,
    shuffle_louvain: bool,
    seed: u64,
    rank_aggregation: &'static str,
    disparity_denominator: &'static str,
    workers: Option<usize>,
    strict: bool,
    config_hashes: std::collections::BTreeMap<&'static str, String>,
    subjects_analysed: std::collections::BTreeMap<&'static str, usize>,
    disparity_available: bool,
    failures: Vec<FailureEntry<'a>>,
    outputs: Vec<String>,
}

/// What a run produced, for exit-code selection and reporting.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub failures: Vec<SubjectFailure>,
    pub outputs: Vec<PathBuf>,
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, CliError> {
    with_workers(config.workers, || run_pipeline_inner(config))
}

pub(crate) fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn load(manifest_path: &Path) -> Result<(CohortManifest, ValidatedCohort, Vec<SubjectFailure>), CliError> {
    let manifest = load_manifest(manifest_path).map_err(|e| CliError::Data(e.to_string()))?;
    let (cohort, failures) = load_cohort_lenient(&manifest);
    Ok((manifest, cohort, failures))
}

fn expected_classes(manifest: &CohortManifest) -> Vec<ClassLabel> {
    ClassLabel::ALL.into_iter().filter(|&c| manifest.count(c) > 0).collect()
}

fn run_pipeline_inner(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let cfg = &config.analysis;
    let (manifest, cohort, mut failures) = load(&config.manifest)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Data(format!("{}: manifest lists no subjects", config.manifest.display())));
    }
    let analysis = detect_cohort(&cohort, cfg);
    failures.extend(analysis.failures.iter().cloned());
    // failures in manifest order
    let position = |id: &str| manifest.entries.iter().position(|e| e.subject_id == id);
    failures.sort_by_key(|f| position(&f.subject_id));

    let expected = expected_classes(&manifest);
    let (healthy, impaired, report) = aggregate(&analysis.labels, &records(&analysis.detections), &expected, cfg)?;

    let out = &config.out_dir;
    let mut outputs = Vec::new();
    let detections: Vec<&SubjectDetection> = analysis.detections.iter().map(|(_, d)| d).collect();
    let log_path = out.join(COMMUNITIES_FILE);
    write(&log_path, &community_log(&analysis.labels, &detections, cfg))?;
    outputs.push(log_path);
    outputs.extend(write_tables(out, &healthy, &impaired, cfg)?);
    if let Some(report) = &report {
        let path = out.join(DISPARITY_FILE);
        write_disparity(&path, report, cfg)?;
        outputs.push(path);
    }
    let meta_path = out.join(METADATA_FILE);
    outputs.push(meta_path.clone());

    let (edge_mode, edge_parameter) = match cfg.edge_policy.inclusion {
        InclusionMode::Density(d) => ("density", d),
        InclusionMode::Threshold(t) => ("threshold", t),
    };
    let mut hashes = std::collections::BTreeMap::new();
    hashes.insert("pcorr", formats::config_hash(&cfg.pcorr_canonical()));
    hashes.insert("communities", formats::config_hash(&cfg.communities_canonical()));
    hashes.insert("nss", formats::config_hash(&cfg.nss_canonical()));
    hashes.insert("disparity", formats::config_hash(&cfg.disparity_canonical()));
    let mut analysed = std::collections::BTreeMap::new();
    for class in ClassLabel::ALL {
        analysed.insert(class.as_str(), analysis.detections.iter().filter(|(c, _)| *c == class).count());
    }
    let meta = RunMetadata {
        tool: "dmn-nss",
        version: formats::VERSION,
        manifest: config.manifest.display().to_string(),
        out_dir: out.display().to_string(),
        rank_tolerance: cfg.rank_tolerance,
        edge_mode,
        edge_parameter,
        cpm_k: cfg.cpm_k,
        eigen_variant: cfg.eigen_variant.as_str(),
        shuffle_louvain: cfg.shuffle_louvain,
        seed: cfg.seed,
        rank_aggregation: cfg.rank_aggregation.as_str(),
        disparity_denominator: cfg.denominator.as_str(),
        workers: config.workers,
        strict: config.strict,
        config_hashes: hashes,
        subjects_analysed: analysed,
        disparity_available: report.is_some(),
        failures: failures
            .iter()
            .map(|f| FailureEntry {
                subject_id: &f.subject_id,
                class: f.class.as_str(),
                reason: &f.reason,
            })
            .collect(),
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    write(&meta_path, &json)?;

    Ok(RunOutcome { failures, outputs })
}

// ---- stages -----------------------------------------------------------------

/// ρ for a single time-series file.
pub fn stage_pcorr_file(input: &Path, output: &Path, cfg: &AnalysisConfig) -> Result<(), CliError> {
    let ts = crate::ingest::load_timeseries(input, None).map_err(|e| CliError::Data(e.to_string()))?;
    let rho = subject_rho(&ts, cfg).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    write(output, &formats::write_rho(&rho, &provenance("pcorr", &cfg.pcorr_canonical())))
}

/// ρ for every subject of a manifest: `<out>/<subject>.csv` plus
/// `<out>/manifest.csv` listing the subjects that succeeded.
pub fn stage_pcorr_manifest(
    manifest_path: &Path,
    out_dir: &Path,
    cfg: &AnalysisConfig,
) -> Result<Vec<SubjectFailure>, CliError> {
    let (manifest, cohort, mut failures) = load(manifest_path)?;
    let header = provenance("pcorr", &cfg.pcorr_canonical());
    let results: Vec<_> = cohort
        .subjects()
        .par_iter()
        .map(|s| (s, subject_rho(&s.series, cfg)))
        .collect();
    let mut rows = vec![["subject_id".to_string(), "path".to_string(), "class".to_string()]];
    for (s, result) in results {
        let id = &s.series.subject_id;
        match result {
            Ok(rho) => {
                let name = format!("{id}.csv");
                write(&out_dir.join(&name), &formats::write_rho(&rho, &header))?;
                rows.push([id.clone(), name, s.class.to_string()]);
            }
            Err(reason) => failures.push(SubjectFailure {
                subject_id: id.clone(),
                class: s.class,
                reason,
            }),
        }
    }
    let position = |id: &str| manifest.entries.iter().position(|e| e.subject_id == id);
    failures.sort_by_key(|f| position(&f.subject_id));
    let mut w = csv::Writer::from_writer(header.into_bytes());
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8");
    write(&out_dir.join("manifest.csv"), &text)?;
    Ok(failures)
}

/// Community log from ρ files listed in a manifest.
pub fn stage_communities(manifest_path: &Path, output: &Path, cfg: &AnalysisConfig) -> Result<Vec<SubjectFailure>, CliError> {
    let manifest = load_manifest(manifest_path).map_err(|e| CliError::Data(e.to_string()))?;
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let rho = formats::read_rho(&e.path).map_err(|err| err.to_string())?;
            subject_detection(&e.subject_id, &rho, cfg).map(|d| (rho.labels, d))
        })
        .collect();
    let mut labels: Option<Vec<RoiLabel>> = None;
    let mut detections = Vec::new();
    let mut failures = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        let checked = result.and_then(|(l, d)| match &labels {
            Some(reference) if *reference != l => Err("ROI set differs from the rest of the cohort".to_string()),
            Some(_) => Ok(d),
            None => {
                labels = Some(l);
                Ok(d)
            }
        });
        match checked {
            Ok(d) => detections.push(d),
            Err(reason) => failures.push(SubjectFailure {
                subject_id: entry.subject_id.clone(),
                class: entry.class,
                reason,
            }),
        }
    }
    let labels = labels.unwrap_or_default();
    let refs: Vec<&SubjectDetection> = detections.iter().collect();
    write(output, &community_log(&labels, &refs, cfg))?;
    Ok(failures)
}

/// Community log for a single ρ file; the subject id is the file stem.
pub fn stage_communities_file(input: &Path, output: &Path, cfg: &AnalysisConfig) -> Result<(), CliError> {
    let rho = formats::read_rho(input)?;
    let id = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let d = subject_detection(&id, &rho, cfg).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    write(output, &community_log(&rho.labels, &[&d], cfg))
}

/// ROI labels from the first manifest entry whose file has a readable header.
fn manifest_labels(manifest: &CohortManifest) -> Result<Vec<RoiLabel>, CliError> {
    manifest
        .entries
        .iter()
        .find_map(|e| read_labelled_matrix(&e.path).ok().map(|(l, _, _)| l))
        .ok_or_else(|| CliError::Data("no readable subject file in manifest".into()))
}

/// Per-cohort NSS tables from a community log; classes come from the manifest.
pub fn stage_nss(
    manifest_path: &Path,
    communities: &Path,
    out_dir: &Path,
    cfg: &AnalysisConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let manifest = load_manifest(manifest_path).map_err(|e| CliError::Data(e.to_string()))?;
    let labels = manifest_labels(&manifest)?;
    let records = formats::read_community_log(communities, &labels)?;
    let mut detections = Vec::new();
    for rec in records {
        let class = manifest
            .entries
            .iter()
            .find(|e| e.subject_id == rec.subject_id)
            .map(|e| e.class)
            .ok_or_else(|| {
                CliError::Data(format!("{}: subject {} not in manifest", communities.display(), rec.subject_id))
            })?;
        detections.push((class, rec));
    }
    let refs: Vec<_> = detections.iter().map(|(c, r)| (*c, r)).collect();
    let (healthy, impaired, _) = aggregate(&labels, &refs, &expected_classes(&manifest), cfg)?;
    write_tables(out_dir, &healthy, &impaired, cfg)
}

pub fn stage_disparity(healthy: &Path, impaired: &Path, output: &Path, cfg: &AnalysisConfig) -> Result<(), CliError> {
    let h = formats::read_nss_table(healthy)?;
    let m = formats::read_nss_table(impaired)?;
    if h.cohort != ClassLabel::Healthy || m.cohort != ClassLabel::Impaired {
        return Err(CliError::Data("tables must be given as --healthy <healthy table> --impaired <impaired table>".into()));
    }
    let report = disparity(&h, &m, cfg.denominator).map_err(|e| CliError::Data(e.to_string()))?;
    write_disparity(output, &report, cfg)
}

/// Top-k table and NSS comparison from a disparity file.
pub fn stage_report(
    disparity_path: &Path,
    out_dir: &Path,
    k: usize,
    threshold: Option<f64>,
) -> Result<crate::nss::TopKReport, CliError> {
    let report = formats::read_disparity(disparity_path)?;
    let top = crate::nss::top_k_report(&report, k, threshold);
    let canonical = format!(
        "top_k={k};threshold={}",
        threshold.map_or_else(|| "none".to_string(), |t| t.to_string())
    );
    let header = provenance("report", &canonical);
    write(&out_dir.join("top_k.csv"), &formats::write_top_k(&top, k, &header))?;

    write(&out_dir.join("nss_comparison.csv"), &formats::write_nss_comparison(&report, &header))?;
    Ok(top)
}
