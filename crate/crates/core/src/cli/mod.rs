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

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 input data
//! error, 3 completed with skipped subjects under `--strict`.

pub mod formats;
pub mod pipeline;

use std::ffi::OsString;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::community::EigenVariant;
use crate::graph::EdgePolicy;
use crate::ingest::SubjectFailure;
use crate::nss::{DisparityDenominator, RankAggregation};
use crate::synth::{generate_cohort, write_cohort, SynthSpec};

pub use pipeline::{analyze_cohort, run_pipeline, AnalysisConfig, CohortAnalysis, RunConfig, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{count} subject(s) skipped")]
    Partial { count: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Partial { .. } => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dmn-nss", version, about = "Node significance scores and cohort disparity from ROI time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic cohort with a planted core and weakened nodes.
    Simulate(SimulateArgs),
    /// Partial-correlation matrices from time series.
    Pcorr(PcorrArgs),
    /// Community detection on partial-correlation matrices.
    Communities(CommunitiesArgs),
    /// Per-cohort node significance tables from a community log.
    Nss(NssArgs),
    /// Disparity between healthy and impaired NSS tables.
    Disparity(DisparityArgs),
    /// Top-k table and NSS comparison from a disparity file.
    Report(ReportArgs),
    /// Whole pipeline from a time-series manifest.
    Run(RunArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EdgeMode {
    Density,
    Threshold,
}

#[derive(Args, Debug, Clone)]
pub struct PcorrOptions {
    /// Relative eigenvalue cutoff for the pseudo-inverse [default: R·ε]
    #[arg(long)]
    pub rank_tolerance: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct CommunityOptions {
    #[arg(long, value_enum, default_value = "density")]
    pub edge_mode: EdgeMode,
    /// Fraction of ROI pairs kept in density mode
    #[arg(long, default_value_t = 0.3)]
    pub edge_density: f64,
    /// Minimum |ρ| kept in threshold mode
    #[arg(long, default_value_t = 0.1)]
    pub edge_threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub cpm_k: usize,
    /// modularity_matrix or laplacian_fiedler
    #[arg(long, default_value = "modularity_matrix")]
    pub eigen_variant: EigenVariant,
    /// Visit nodes in a seeded random order in Louvain
    #[arg(long)]
    pub shuffle_louvain: bool,
    #[arg(long, default_value_t = pipeline::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct NssOptions {
    /// mean, median or mode
    #[arg(long, default_value = "mean")]
    pub rank_aggregation: RankAggregation,
}

#[derive(Args, Debug, Clone)]
pub struct DisparityOptions {
    /// healthy, impaired or mean
    #[arg(long, default_value = "healthy")]
    pub denominator: DisparityDenominator,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub rois: Option<usize>,
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub subjects_per_class: Option<usize>,
    /// Core ROI indices, e.g. `0-5` or `0,2,4`
    #[arg(long)]
    pub core: Option<String>,
    /// Weakened core indices, same syntax as --core
    #[arg(long)]
    pub weakened: Option<String>,
    /// Correlation between core ROIs
    #[arg(long)]
    pub coupling: Option<f64>,
    /// Factor applied to weakened-node couplings in the impaired class
    #[arg(long)]
    pub attenuation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "manifest"])))]
pub struct PcorrArgs {
    /// Single time-series file
    #[arg(long, requires = "output")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Time-series manifest; writes one matrix per subject plus a manifest
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub pcorr: PcorrOptions,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "manifest"])))]
pub struct CommunitiesArgs {
    /// Single partial-correlation file
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Manifest of partial-correlation files
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub community: CommunityOptions,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct NssArgs {
    /// Manifest giving each subject's class
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub communities: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub nss: NssOptions,
}

#[derive(Args, Debug)]
pub struct DisparityArgs {
    #[arg(long)]
    pub healthy: PathBuf,
    #[arg(long)]
    pub impaired: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub disparity: DisparityOptions,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub disparity: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Count ROIs whose |disparity| exceeds this percentage
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub pcorr: PcorrOptions,
    #[command(flatten)]
    pub community: CommunityOptions,
    #[command(flatten)]
    pub nss: NssOptions,
    #[command(flatten)]
    pub disparity: DisparityOptions,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Exit 3 when any subject is skipped
    #[arg(long)]
    pub strict: bool,
}

impl CommunityOptions {
    fn edge_policy(&self) -> Result<EdgePolicy, CliError> {
        let policy = match self.edge_mode {
            EdgeMode::Density => EdgePolicy::density(self.edge_density),
            EdgeMode::Threshold => EdgePolicy::threshold(self.edge_threshold),
        };
        policy.map_err(|e| CliError::Usage(e.to_string()))
    }

    fn apply(&self, cfg: &mut AnalysisConfig) -> Result<(), CliError> {
        if self.cpm_k < 2 {
            return Err(CliError::Usage("--cpm-k must be at least 2".into()));
        }
        cfg.edge_policy = self.edge_policy()?;
        cfg.cpm_k = self.cpm_k;
        cfg.eigen_variant = self.eigen_variant;
        cfg.shuffle_louvain = self.shuffle_louvain;
        cfg.seed = self.seed;
        Ok(())
    }
}

impl PcorrOptions {
    fn apply(&self, cfg: &mut AnalysisConfig) -> Result<(), CliError> {
        if let Some(t) = self.rank_tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Usage(format!("--rank-tolerance must be non-negative, got {t}")));
            }
        }
        cfg.rank_tolerance = self.rank_tolerance;
        Ok(())
    }
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut analysis = AnalysisConfig::default();
        self.pcorr.apply(&mut analysis)?;
        self.community.apply(&mut analysis)?;
        analysis.rank_aggregation = self.nss.rank_aggregation;
        analysis.denominator = self.disparity.denominator;
        if self.workers == Some(0) {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        Ok(RunConfig {
            manifest: self.manifest.clone(),
            out_dir: self.out_dir.clone(),
            analysis,
            workers: self.workers,
            strict: self.strict,
        })
    }
}

/// Parses `0-5`, `0,2,4` or a mix such as `0-2,7`.
pub fn parse_index_list(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("invalid index list {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let range: RangeInclusive<usize> = match part.split_once('-') {
            Some((a, b)) => a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?,
            None => {
                let v = part.parse().map_err(|_| bad())?;
                v..=v
            }
        };
        if range.is_empty() {
            return Err(bad());
        }
        out.extend(range);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl SimulateArgs {
    pub fn to_spec(&self) -> Result<SynthSpec, CliError> {
        let mut spec = SynthSpec::default();
        if let Some(v) = self.rois {
            spec.roi_count = v;
        }
        if let Some(v) = self.timepoints {
            spec.timepoints = v;
        }
        if let Some(v) = self.subjects_per_class {
            spec.subjects_per_class = v;
        }
        if let Some(v) = &self.core {
            spec.core = parse_index_list(v)?;
        }
        if let Some(v) = &self.weakened {
            spec.weakened = parse_index_list(v)?;
        }
        if let Some(v) = self.coupling {
            spec.coupling = v;
        }
        if let Some(v) = self.attenuation {
            spec.attenuation = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

fn report_failures(failures: &[SubjectFailure], strict: bool) -> Result<(), CliError> {
    for f in failures {
        eprintln!("warning: skipped {} ({}): {}", f.subject_id, f.class, f.reason);
    }
    if strict && !failures.is_empty() {
        return Err(CliError::Partial { count: failures.len() });
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let spec = args.to_spec()?;
            let cohort = generate_cohort(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            let canonical = format!("{spec:?}");
            let header = formats::provenance("simulate", &canonical);
            let manifest = write_cohort(&cohort, &args.out_dir, &[header.trim_end().to_string()])
                .map_err(|e| CliError::Data(e.to_string()))?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Pcorr(args) => {
            let mut cfg = AnalysisConfig::default();
            args.pcorr.apply(&mut cfg)?;
            match (&args.input, &args.output, &args.manifest, &args.out_dir) {
                (Some(input), Some(output), None, _) => pipeline::stage_pcorr_file(input, output, &cfg),
                (None, _, Some(manifest), Some(out_dir)) => {
                    let failures = pipeline::with_workers(None, || pipeline::stage_pcorr_manifest(manifest, out_dir, &cfg))?;
                    report_failures(&failures, args.strict)
                }
                _ => Err(CliError::Usage("use --input with --output, or --manifest with --out-dir".into())),
            }
        }
        Command::Communities(args) => {
            let mut cfg = AnalysisConfig::default();
            args.community.apply(&mut cfg)?;
            match (&args.input, &args.manifest) {
                (Some(input), None) => pipeline::stage_communities_file(input, &args.output, &cfg),
                (None, Some(manifest)) => {
                    let failures = pipeline::with_workers(None, || pipeline::stage_communities(manifest, &args.output, &cfg))?;
                    report_failures(&failures, args.strict)
                }
                _ => Err(CliError::Usage("use exactly one of --input or --manifest".into())),
            }
        }
        Command::Nss(args) => {
            let cfg = AnalysisConfig {
                rank_aggregation: args.nss.rank_aggregation,
                ..AnalysisConfig::default()
            };
            pipeline::stage_nss(&args.manifest, &args.communities, &args.out_dir, &cfg).map(|_| ())
        }
        Command::Disparity(args) => {
            let cfg = AnalysisConfig {
                denominator: args.disparity.denominator,
                ..AnalysisConfig::default()
            };
            pipeline::stage_disparity(&args.healthy, &args.impaired, &args.output, &cfg)
        }
        Command::Report(args) => {
            if let Some(t) = args.threshold {
                if !t.is_finite() || t < 0.0 {
                    return Err(CliError::Usage(format!("--threshold must be non-negative, got {t}")));
                }
            }
            let top = pipeline::stage_report(&args.disparity, &args.out_dir, args.top_k, args.threshold)?;
            if let Some(n) = top.exceeding {
                println!("{n} ROI(s) over threshold");
            }
            Ok(())
        }
        Command::Run(args) => {
            let config = args.to_config()?;
            let outcome = run_pipeline(&config)?;
            report_failures(&outcome.failures, config.strict)
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("0-5").unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(parse_index_list("4, 1,1").unwrap(), vec![1, 4]);
        assert_eq!(parse_index_list("0-1,7").unwrap(), vec![0, 1, 7]);
        assert!(parse_index_list("3-1").is_err());
        assert!(parse_index_list("a").is_err());
    }

    #[test]
    fn run_defaults() {
        let cli = Cli::try_parse_from(["dmn-nss", "run", "--manifest", "m.csv", "--out-dir", "o"]).unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        let cfg = args.to_config().unwrap();
        assert_eq!(cfg.analysis, AnalysisConfig::default());
        assert!(!cfg.strict);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let cli = Cli::try_parse_from(["dmn-nss", "run", "--manifest", "m", "--out-dir", "o", "--edge-density", "1.5"]).unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        assert_eq!(args.to_config().unwrap_err().exit_code(), 1);
        assert!(Cli::try_parse_from(["dmn-nss", "run", "--manifest", "m", "--out-dir", "o", "--eigen-variant", "x"]).is_err());
    }
}
