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

//! Two-cohort node significance analysis for functional connectivity networks.
//!
//! The pipeline runs per subject:
//! time series → sample covariance → pseudo-inverse precision → partial
//! correlation → weighted graph → four community detectors → largest
//! sub-community per detector. Per cohort the largest sub-communities are
//! folded into a Node Significance Score `N = r² + √h`, and the two cohorts
//! are compared by percentage disparity.

pub mod cli;
pub mod community;
pub mod graph;
pub mod ingest;
pub mod nss;
pub mod pcorr;
pub mod synth;

pub use community::{Method, Partition, OverlappingCommunities, SubjectDetectionRecord};
pub use graph::{BinaryGraph, EdgePolicy, WeightedGraph};
pub use ingest::{ClassLabel, CohortManifest, RoiLabel, TimeSeriesMatrix, ValidatedCohort};
pub use nss::{DisparityReport, NssTable};
pub use pcorr::{CovarianceMatrix, PartialCorrelationMatrix, PrecisionMatrix};
