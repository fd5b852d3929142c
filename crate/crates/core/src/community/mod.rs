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

//! Sub-community detection: weighted modularity, the four detectors and
//! largest-sub-community extraction.

mod cpm;
mod eigen;
mod exhaustive;
mod greedy;
mod louvain;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{binarize, WeightedGraph};

pub use cpm::{clique_percolation, maximal_cliques};
pub use eigen::{leading_eigenvector, EigenVariant};
pub use exhaustive::{exhaustive_max_modularity, EXHAUSTIVE_MAX_NODES};
pub use greedy::{greedy_modularity, greedy_modularity_with_quality};
pub use louvain::{louvain, louvain_with_quality};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommunityError {
    #[error("partition covers {found} nodes, graph has {expected}")]
    PartitionMismatch { expected: usize, found: usize },
    #[error("exhaustive search limited to {max} nodes, graph has {found}")]
    TooLarge { max: usize, found: usize },
    #[error("clique size must be at least 3, got {0}")]
    InvalidCliqueSize(usize),
    #[error("communities are not a disjoint cover of {0} nodes")]
    NotAPartition(usize),
}

/// Disjoint, exhaustive node partition. Community ids are dense and
/// numbered in order of each community's smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    community_count: usize,
}

impl Partition {
    /// Canonicalizes arbitrary community ids.
    pub fn from_assignment(raw: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let assignment = raw
            .iter()
            .map(|c| {
                let next = remap.len();
                *remap.entry(*c).or_insert(next)
            })
            .collect();
        Self {
            assignment,
            community_count: remap.len(),
        }
    }

    pub fn from_communities(node_count: usize, communities: &[Vec<usize>]) -> Result<Self, CommunityError> {
        let mut raw = vec![usize::MAX; node_count];
        for (c, members) in communities.iter().enumerate() {
            for &v in members {
                if v >= node_count || raw[v] != usize::MAX {
                    return Err(CommunityError::NotAPartition(node_count));
                }
                raw[v] = c;
            }
        }
        if raw.contains(&usize::MAX) {
            return Err(CommunityError::NotAPartition(node_count));
        }
        Ok(Self::from_assignment(&raw))
    }

    pub fn singletons(node_count: usize) -> Self {
        Self::from_assignment(&(0..node_count).collect::<Vec<_>>())
    }

    pub fn whole(node_count: usize) -> Self {
        Self::from_assignment(&vec![0; node_count])
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn community_count(&self) -> usize {
        self.community_count
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    /// Member lists, indexed by community id, each sorted ascending.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut raw = vec![0; self.assignment.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            raw[perm[i]] = c;
        }
        Self::from_assignment(&raw)
    }
}

/// Possibly overlapping node sets, as produced by clique percolation.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct OverlappingCommunities {
    pub k: usize,
    /// Sorted member lists, in lexicographic order.
    pub communities: Vec<Vec<usize>>,
}

impl OverlappingCommunities {
    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }
}

/// Anything that can be viewed as a list of node sets.
pub trait CommunitySets {
    fn community_sets(&self) -> Vec<Vec<usize>>;
}

impl CommunitySets for Partition {
    fn community_sets(&self) -> Vec<Vec<usize>> {
        self.communities()
    }
}

impl CommunitySets for OverlappingCommunities {
    fn community_sets(&self) -> Vec<Vec<usize>> {
        self.communities.clone()
    }
}

impl CommunitySets for [Vec<usize>] {
    fn community_sets(&self) -> Vec<Vec<usize>> {
        self.to_vec()
    }
}

/// Weighted modularity
/// `Q = 1/(2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)`,
/// evaluated per community as `Σ_c in_c/m − (tot_c/2m)²`.
pub fn modularity(g: &WeightedGraph, p: &Partition) -> Result<f64, CommunityError> {
    if p.node_count() != g.node_count() {
        return Err(CommunityError::PartitionMismatch {
            expected: g.node_count(),
            found: p.node_count(),
        });
    }
    let c = p.community_count();
    let mut internal = vec![0.0; c];
    let mut total = vec![0.0; c];
    for e in g.edges() {
        let ci = p.community_of(e.i);
        if ci == p.community_of(e.j) {
            internal[ci] += e.weight;
        }
    }
    for v in 0..g.node_count() {
        total[p.community_of(v)] += g.degree(v);
    }
    let m = g.total_weight();
    let two_m = 2.0 * m;
    Ok(internal
        .iter()
        .zip(&total)
        .map(|(&inw, &tot)| inw / m - (tot / two_m) * (tot / two_m))
        .sum())
}

/// The community with the most nodes. Ties go to the larger internal edge
/// weight, then to the lexicographically smallest sorted member list.
/// Empty when there are no communities.
pub fn largest_subcommunity<C: CommunitySets + ?Sized>(communities: &C, g: &WeightedGraph) -> Vec<usize> {
    let mut candidates: Vec<(Vec<usize>, f64)> = communities
        .community_sets()
        .into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c.dedup();
            let w = g.internal_weight(&c);
            (c, w)
        })
        .collect();
    candidates.sort_by(|(a, wa), (b, wb)| {
        b.len()
            .cmp(&a.len())
            .then_with(|| wb.total_cmp(wa))
            .then_with(|| a.cmp(b))
    });
    candidates.into_iter().next().map(|(c, _)| c).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cpm,
    Louvain,
    Greedy,
    Eigen,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cpm, Method::Louvain, Method::Greedy, Method::Eigen];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cpm => "cpm",
            Method::Louvain => "louvain",
            Method::Greedy => "greedy",
            Method::Eigen => "eigen",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Per subject, the largest sub-community found by each method.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectDetectionRecord {
    pub subject_id: String,
    largest: [Vec<usize>; 4],
}

impl SubjectDetectionRecord {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            largest: Default::default(),
        }
    }

    /// Builder-style setter; `nodes` is sorted and deduplicated.
    pub fn with(mut self, method: Method, nodes: impl IntoIterator<Item = usize>) -> Self {
        self.set(method, nodes);
        self
    }

    pub fn set(&mut self, method: Method, nodes: impl IntoIterator<Item = usize>) {
        let mut v: Vec<usize> = nodes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        self.largest[method.slot()] = v;
    }

    pub fn largest(&self, method: Method) -> &[usize] {
        &self.largest[method.slot()]
    }

    pub fn contains(&self, method: Method, node: usize) -> bool {
        self.largest[method.slot()].binary_search(&node).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionConfig {
    pub cpm_k: usize,
    pub eigen_variant: EigenVariant,
    /// `None` keeps natural node order in Louvain.
    pub louvain_seed: Option<u64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            cpm_k: 3,
            eigen_variant: EigenVariant::ModularityMatrix,
            louvain_seed: None,
        }
    }
}

/// All communities of every method for one subject, plus the record.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectDetection {
    pub record: SubjectDetectionRecord,
    communities: [Vec<Vec<usize>>; 4],
}

impl SubjectDetection {
    pub fn communities(&self, method: Method) -> &[Vec<usize>] {
        &self.communities[method.slot()]
    }
}

/// Runs the four methods sequentially on one subject's graph.
pub fn detect_subject(
    subject_id: &str,
    g: &WeightedGraph,
    config: &DetectionConfig,
) -> Result<SubjectDetection, CommunityError> {
    let cpm = clique_percolation(&binarize(g), config.cpm_k)?;
    let found: [Vec<Vec<usize>>; 4] = [
        cpm.communities,
        louvain(g, config.louvain_seed).communities(),
        greedy_modularity(g).communities(),
        leading_eigenvector(g, config.eigen_variant).communities(),
    ];
    let mut record = SubjectDetectionRecord::new(subject_id);
    for m in Method::ALL {
        record.set(m, largest_subcommunity(&found[m.slot()][..], g));
    }
    Ok(SubjectDetection {
        record,
        communities: found,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::graph::WeightedGraph;

    /// Triangles {0,1,2} and {3,4,5} joined by the bridge 2–3.
    pub fn two_triangles_bridge() -> WeightedGraph {
        WeightedGraph::unlabeled(
            6,
            &[
                (0, 1, 1.0),
                (0, 2, 1.0),
                (1, 2, 1.0),
                (3, 4, 1.0),
                (3, 5, 1.0),
                (4, 5, 1.0),
                (2, 3, 1.0),
            ],
        )
        .unwrap()
    }

    pub fn complete(n: usize, w: f64) -> WeightedGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, w));
            }
        }
        WeightedGraph::unlabeled(n, &edges).unwrap()
    }
}
