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

//! Clique percolation.
//!
//! Maximal cliques come from Bron–Kerbosch with Tomita pivoting. Two maximal
//! cliques of size ≥ k sharing at least k − 1 nodes contain adjacent
//! k-cliques, and every k-clique sits inside some maximal clique, so the
//! connected components of this overlap relation give the same communities
//! as percolating the k-cliques directly.

use std::collections::BTreeSet;

use super::{CommunityError, OverlappingCommunities};
use crate::graph::BinaryGraph;

/// All maximal cliques, each sorted, in lexicographic order.
pub fn maximal_cliques(g: &BinaryGraph) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let candidates: BTreeSet<usize> = (0..g.node_count()).collect();
    let mut current = Vec::new();
    expand(g, &mut current, candidates, BTreeSet::new(), &mut out);
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort();
    out
}

fn expand(
    g: &BinaryGraph,
    current: &mut Vec<usize>,
    mut candidates: BTreeSet<usize>,
    mut excluded: BTreeSet<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if candidates.is_empty() {
        if excluded.is_empty() {
            out.push(current.clone());
        }
        return;
    }
    let pivot = candidates
        .iter()
        .chain(excluded.iter())
        .copied()
        .max_by_key(|&u| (candidates.intersection(g.neighbors(u)).count(), std::cmp::Reverse(u)))
        .expect("candidates is non-empty");
    let branch: Vec<usize> = candidates.difference(g.neighbors(pivot)).copied().collect();
    for v in branch {
        let nv = g.neighbors(v);
        current.push(v);
        expand(
            g,
            current,
            candidates.intersection(nv).copied().collect(),
            excluded.intersection(nv).copied().collect(),
            out,
        );
        current.pop();
        candidates.remove(&v);
        excluded.insert(v);
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut y = x;
    while parent[y] != root {
        let next = parent[y];
        parent[y] = root;
        y = next;
    }
    root
}

/// k-clique communities. Empty when the graph has no k-clique.
pub fn clique_percolation(g: &BinaryGraph, k: usize) -> Result<OverlappingCommunities, CommunityError> {
    if k < 3 {
        return Err(CommunityError::InvalidCliqueSize(k));
    }
    let cliques: Vec<Vec<usize>> = maximal_cliques(g).into_iter().filter(|c| c.len() >= k).collect();
    let mut parent: Vec<usize> = (0..cliques.len()).collect();
    for a in 0..cliques.len() {
        for b in (a + 1)..cliques.len() {
            if shared(&cliques[a], &cliques[b]) >= k - 1 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut unions: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for (i, c) in cliques.iter().enumerate() {
        let root = find(&mut parent, i);
        unions.entry(root).or_default().extend(c.iter().copied());
    }
    let sets: Vec<BTreeSet<usize>> = unions.into_values().collect();
    let mut communities: Vec<Vec<usize>> = sets
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            !sets
                .iter()
                .enumerate()
                .any(|(j, t)| *i != j && s.is_subset(t) && (s.len() < t.len() || j < *i))
        })
        .map(|(_, s)| s.iter().copied().collect())
        .collect();
    communities.sort();
    Ok(OverlappingCommunities { k, communities })
}

/// Size of the intersection of two sorted lists.
fn shared(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
