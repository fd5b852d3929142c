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

//! Recursive spectral bisection.
//!
//! Two split rules are available. `ModularityMatrix` splits a group by the
//! sign pattern of the leading eigenvector of its generalized modularity
//! matrix `B⁽ᵍ⁾_ij = B_ij − δ_ij Σ_{l∈g} B_il`, `B_ij = A_ij − k_i k_j / 2m`.
//! `LaplacianFiedler` splits by the sign pattern of the eigenvector of the
//! second-smallest eigenvalue of the group's weighted Laplacian. Either way a
//! split is kept only if it raises modularity, `ΔQ = sᵀ B⁽ᵍ⁾ s / 4m > 0`.
//!
//! Zero-degree nodes cannot change modularity and are returned as singletons.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::Partition;
use crate::graph::WeightedGraph;

const EIGEN_FLOOR: f64 = 1e-10;
const GAIN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum EigenVariant {
    #[default]
    ModularityMatrix,
    LaplacianFiedler,
}

impl EigenVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            EigenVariant::ModularityMatrix => "modularity_matrix",
            EigenVariant::LaplacianFiedler => "laplacian_fiedler",
        }
    }
}

impl fmt::Display for EigenVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EigenVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modularity_matrix" | "modularity-matrix" => Ok(EigenVariant::ModularityMatrix),
            "laplacian_fiedler" | "laplacian-fiedler" => Ok(EigenVariant::LaplacianFiedler),
            _ => Err(format!("unknown eigenvector variant {s:?}")),
        }
    }
}

pub fn leading_eigenvector(g: &WeightedGraph, variant: EigenVariant) -> Partition {
    let n = g.node_count();
    let two_m = 2.0 * g.total_weight();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let active: Vec<usize> = (0..n).filter(|&v| g.degree(v) > 0.0).collect();
    for v in (0..n).filter(|&v| g.degree(v) == 0.0) {
        groups.push(vec![v]);
    }

    let mut pending = VecDeque::from([active]);
    while let Some(group) = pending.pop_front() {
        if group.len() < 2 {
            groups.push(group);
            continue;
        }
        let b = generalized_modularity_matrix(g, &group, two_m);
        let signs = match variant {
            EigenVariant::ModularityMatrix => modularity_split(&b),
            EigenVariant::LaplacianFiedler => fiedler_split(g, &group),
        };
        match signs.filter(|s| split_gain(&b, s, two_m) > GAIN_FLOOR) {
            Some(s) => {
                let (pos, neg): (Vec<_>, Vec<_>) = group.iter().zip(&s).partition(|(_, &x)| x > 0.0);
                pending.push_back(pos.into_iter().map(|(&v, _)| v).collect());
                pending.push_back(neg.into_iter().map(|(&v, _)| v).collect());
            }
            None => groups.push(group),
        }
    }
    Partition::from_communities(n, &groups).expect("bisection preserves a disjoint cover")
}

fn generalized_modularity_matrix(g: &WeightedGraph, group: &[usize], two_m: f64) -> DMatrix<f64> {
    let size = group.len();
    let mut b = DMatrix::from_fn(size, size, |a, c| {
        let (i, j) = (group[a], group[c]);
        g.weight(i, j) - g.degree(i) * g.degree(j) / two_m
    });
    for a in 0..size {
        let row_sum: f64 = b.row(a).sum();
        b[(a, a)] -= row_sum;
    }
    b
}

/// `ΔQ` of splitting a group by `s ∈ {±1}ⁿ`.
fn split_gain(b: &DMatrix<f64>, s: &DVector<f64>, two_m: f64) -> f64 {
    if s.iter().all(|&x| x > 0.0) || s.iter().all(|&x| x < 0.0) {
        return 0.0;
    }
    (s.transpose() * b * s)[(0, 0)] / (2.0 * two_m)
}

/// Entries within this fraction of the largest magnitude count as zero.
fn sign_vector(v: DVector<f64>) -> DVector<f64> {
    let scale = v.amax();
    let tol = 1e-12 * scale;
    let flip = match v.iter().find(|x| x.abs() > tol) {
        Some(&first) if first < 0.0 => -1.0,
        _ => 1.0,
    };
    v.map(|x| if flip * x < -tol { -1.0 } else { 1.0 })
}

fn modularity_split(b: &DMatrix<f64>) -> Option<DVector<f64>> {
    let eig = SymmetricEigen::new(b.clone());
    let (k, &beta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))?;
    if beta <= EIGEN_FLOOR {
        return None;
    }
    Some(sign_vector(eig.eigenvectors.column(k).into_owned()))
}

fn fiedler_split(g: &WeightedGraph, group: &[usize]) -> Option<DVector<f64>> {
    let size = group.len();
    if let Some(s) = component_split(g, group) {
        return Some(s);
    }
    let mut lap = DMatrix::from_fn(size, size, |a, c| -g.weight(group[a], group[c]));
    for a in 0..size {
        let d: f64 = -lap.row(a).sum();
        lap[(a, a)] = d;
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let k = *order.get(1)?;
    Some(sign_vector(eig.eigenvectors.column(k).into_owned()))
}

/// For a group whose induced subgraph is disconnected the Fiedler value is
/// zero and its eigenvector is any mix of component indicators. Use the
/// indicator of the component of the first node with an internal edge.
fn component_split(g: &WeightedGraph, group: &[usize]) -> Option<DVector<f64>> {
    let size = group.len();
    let start = (0..size).find(|&a| (0..size).any(|c| g.weight(group[a], group[c]) > 0.0))?;
    let mut seen = vec![false; size];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(a) = stack.pop() {
        for c in 0..size {
            if !seen[c] && g.weight(group[a], group[c]) > 0.0 {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    if seen.iter().all(|&x| x) {
        return None;
    }
    Some(DVector::from_iterator(size, seen.iter().map(|&x| if x { 1.0 } else { -1.0 })))
}
