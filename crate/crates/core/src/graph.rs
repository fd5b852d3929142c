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

//! Weighted DMN graphs built from partial correlations.
//!
//! Edge weights are `|ρ_ij|`. The sign is dropped because weighted
//! modularity treats weights as non-negative strengths (degrees and the
//! total weight `m` are sums of them).

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::ingest::RoiLabel;
use crate::pcorr::PartialCorrelationMatrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no edge survives the edge policy")]
    EmptyGraph,
    #[error("invalid edge policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid edge ({i}, {j}, {weight}): {reason}")]
    InvalidEdge {
        i: usize,
        j: usize,
        weight: f64,
        reason: &'static str,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `w_ij = |ρ_ij|`
    #[default]
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InclusionMode {
    /// Keep pairs with `w_ij ≥ τ`.
    Threshold(f64),
    /// Keep the `⌈d · R(R−1)/2⌉` strongest pairs.
    Density(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgePolicy {
    pub weight_mode: WeightMode,
    pub inclusion: InclusionMode,
}

impl Default for EdgePolicy {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::Absolute,
            inclusion: InclusionMode::Density(0.3),
        }
    }
}

impl EdgePolicy {
    pub fn threshold(tau: f64) -> Result<Self, GraphError> {
        let p = Self {
            weight_mode: WeightMode::Absolute,
            inclusion: InclusionMode::Threshold(tau),
        };
        p.validate().map(|_| p)
    }

    pub fn density(d: f64) -> Result<Self, GraphError> {
        let p = Self {
            weight_mode: WeightMode::Absolute,
            inclusion: InclusionMode::Density(d),
        };
        p.validate().map(|_| p)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        match self.inclusion {
            InclusionMode::Threshold(t) if !(0.0..=1.0).contains(&t) => Err(GraphError::InvalidPolicy(
                format!("threshold {t} outside [0, 1]"),
            )),
            InclusionMode::Density(d) if !(d > 0.0 && d <= 1.0) => Err(GraphError::InvalidPolicy(
                format!("density {d} outside (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for EdgePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.inclusion {
            InclusionMode::Threshold(t) => write!(f, "threshold({t})"),
            InclusionMode::Density(d) => write!(f, "density({d})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected graph on `R` labelled nodes with strictly positive weights.
/// Edges are kept sorted by `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    labels: Vec<RoiLabel>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<f64>>,
    degrees: Vec<f64>,
    total_weight: f64,
}

impl WeightedGraph {
    pub fn from_edges(labels: Vec<RoiLabel>, mut edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = labels.len();
        if edges.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let mut adjacency = vec![vec![0.0; n]; n];
        for e in &mut edges {
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            let bad = |reason| GraphError::InvalidEdge {
                i: e.i,
                j: e.j,
                weight: e.weight,
                reason,
            };
            if e.i == e.j {
                return Err(bad("self-loop"));
            }
            if e.j >= n {
                return Err(bad("node out of range"));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(bad("weight must be positive and finite"));
            }
            if adjacency[e.i][e.j] != 0.0 {
                return Err(bad("duplicate pair"));
            }
            adjacency[e.i][e.j] = e.weight;
            adjacency[e.j][e.i] = e.weight;
        }
        edges.sort_by_key(|e| (e.i, e.j));
        let degrees: Vec<f64> = adjacency.iter().map(|row| row.iter().sum()).collect();
        let total_weight = edges.iter().map(|e| e.weight).sum();
        Ok(Self {
            labels,
            edges,
            adjacency,
            degrees,
            total_weight,
        })
    }

    /// Graph with labels `"0"`, `"1"`, … (handy for fixtures).
    pub fn unlabeled(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let labels = (0..node_count).map(|i| RoiLabel::new(i.to_string(), i)).collect();
        let edges = edges.iter().map(|&(i, j, weight)| Edge { i, j, weight }).collect();
        Self::from_edges(labels, edges)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[RoiLabel] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `A_ij`; zero when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i][j]
    }

    pub fn adjacency_row(&self, i: usize) -> &[f64] {
        &self.adjacency[i]
    }

    /// Weighted degree `k_i`.
    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `m`, the sum of edge weights.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
    }

    /// Total weight of edges with both ends in `nodes`.
    pub fn internal_weight(&self, nodes: &[usize]) -> f64 {
        let mut sum = 0.0;
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                sum += self.adjacency[i][j];
            }
        }
        sum
    }

    /// Same structure with nodes renamed: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.node_count();
        let mut labels = vec![RoiLabel::new("", 0); n];
        for (i, l) in self.labels.iter().enumerate() {
            labels[perm[i]] = RoiLabel::new(l.name.clone(), perm[i]);
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                i: perm[e.i],
                j: perm[e.j],
                weight: e.weight,
            })
            .collect();
        Self::from_edges(labels, edges)
    }
}

/// Unweighted adjacency for clique percolation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGraph {
    labels: Vec<RoiLabel>,
    pairs: BTreeSet<(usize, usize)>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl BinaryGraph {
    pub fn from_pairs(labels: Vec<RoiLabel>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let n = labels.len();
        let mut set = BTreeSet::new();
        let mut neighbors = vec![BTreeSet::new(); n];
        for (a, b) in pairs {
            assert!(a != b && a < n && b < n, "invalid pair ({a}, {b})");
            let (i, j) = (a.min(b), a.max(b));
            set.insert((i, j));
            neighbors[i].insert(j);
            neighbors[j].insert(i);
        }
        Self {
            labels,
            pairs: set,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[RoiLabel] {
        &self.labels
    }

    pub fn pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.pairs
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }
}

pub fn binarize(g: &WeightedGraph) -> BinaryGraph {
    BinaryGraph::from_pairs(g.labels.clone(), g.edges.iter().map(|e| (e.i, e.j)))
}

/// Applies `policy` to `|ρ|`. Density ties at the cutoff go to the
/// lexicographically smaller `(i, j)`.
pub fn build_weighted_graph(
    pcm: &PartialCorrelationMatrix,
    policy: &EdgePolicy,
) -> Result<WeightedGraph, GraphError> {
    policy.validate()?;
    let r = pcm.roi_count();
    let mut candidates = Vec::with_capacity(r * r.saturating_sub(1) / 2);
    for i in 0..r {
        for j in (i + 1)..r {
            let weight = match policy.weight_mode {
                WeightMode::Absolute => pcm.values[(i, j)].abs(),
            };
            if weight > 0.0 {
                candidates.push(Edge { i, j, weight });
            }
        }
    }
    let kept: Vec<Edge> = match policy.inclusion {
        InclusionMode::Threshold(tau) => candidates.into_iter().filter(|e| e.weight >= tau).collect(),
        InclusionMode::Density(d) => {
            let pairs = r * r.saturating_sub(1) / 2;
            let target = density_edge_count(d, pairs);
            candidates.sort_by(|a, b| {
                b.weight
                    .total_cmp(&a.weight)
                    .then(a.i.cmp(&b.i))
                    .then(a.j.cmp(&b.j))
            });
            candidates.truncate(target);
            candidates
        }
    };
    WeightedGraph::from_edges(pcm.labels.clone(), kept)
}

/// `⌈d · pairs⌉`, guarded against products like `0.1 · 30 = 3.0000000000000004`.
pub fn density_edge_count(d: f64, pairs: usize) -> usize {
    let raw = d * pairs as f64;
    let rounded = raw.round();
    let count = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (count as usize).min(pairs)
}

/// Edge-list dump: one `label,<index>,<name>` row per node, then an
/// `i,j,weight` header and one row per edge.
pub fn write_edge_list<W: Write>(g: &WeightedGraph, out: W) -> Result<(), GraphError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let io = |e: csv::Error| GraphError::Io(std::io::Error::other(e));
    for l in &g.labels {
        w.write_record(["label", &l.index.to_string(), &l.name]).map_err(io)?;
    }
    w.write_record(["i", "j", "weight"]).map_err(io)?;
    for e in &g.edges {
        w.write_record([e.i.to_string(), e.j.to_string(), e.weight.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edge_list<R: BufRead>(input: R) -> Result<WeightedGraph, GraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut in_edges = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| GraphError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |reason: &str| GraphError::Parse {
            line,
            reason: reason.to_string(),
        };
        if !in_edges {
            if rec.iter().eq(["i", "j", "weight"]) {
                in_edges = true;
                continue;
            }
            if rec.len() != 3 || &rec[0] != "label" {
                return Err(parse_err("expected label,<index>,<name>"));
            }
            let index: usize = rec[1].parse().map_err(|_| parse_err("bad label index"))?;
            if index != labels.len() {
                return Err(parse_err("label indices must be contiguous from 0"));
            }
            labels.push(RoiLabel::new(&rec[2], index));
        } else {
            if rec.len() != 3 {
                return Err(parse_err("expected i,j,weight"));
            }
            let i = rec[0].parse().map_err(|_| parse_err("bad node index"))?;
            let j = rec[1].parse().map_err(|_| parse_err("bad node index"))?;
            let weight = rec[2].parse().map_err(|_| parse_err("bad weight"))?;
            edges.push(Edge { i, j, weight });
        }
    }
    WeightedGraph::from_edges(labels, edges)
}
