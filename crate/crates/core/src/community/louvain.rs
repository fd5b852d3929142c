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

//! Louvain modularity optimization: local moves, then aggregation, repeated
//! until a level produces no move.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Partition;
use crate::graph::WeightedGraph;

/// Graph at one aggregation level. Self-loop weight holds the internal edge
/// weight of the supernode (each internal edge counted once).
struct Level {
    neighbors: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degrees: Vec<f64>,
}

impl Level {
    fn from_graph(g: &WeightedGraph) -> Self {
        let n = g.node_count();
        Self {
            neighbors: (0..n).map(|i| g.neighbors(i).collect()).collect(),
            self_loops: vec![0.0; n],
            degrees: g.degrees().to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.degrees.len()
    }

    /// Local-move phase. Returns the community of each node and whether any
    /// node moved.
    fn move_nodes(&self, two_m: f64, rng: Option<&mut ChaCha8Rng>) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut totals = self.degrees.clone();
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(rng) = rng {
            order.shuffle(rng);
        }
        let mut any_move = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let k_i = self.degrees[i];
                let current = community[i];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for &(j, w) in &self.neighbors[i] {
                    *links.entry(community[j]).or_insert(0.0) += w;
                }
                totals[current] -= k_i;
                let gain = |c: usize, k_in: f64| k_in - totals[c] * k_i / two_m;
                let mut best = current;
                let mut best_gain = gain(current, links.get(&current).copied().unwrap_or(0.0));
                for (&c, &k_in) in &links {
                    let g = gain(c, k_in);
                    if g - best_gain > 1e-12 * k_i.max(f64::MIN_POSITIVE) {
                        best = c;
                        best_gain = g;
                    }
                }
                totals[best] += k_i;
                if best != current {
                    community[i] = best;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
            any_move = true;
        }
        (community, any_move)
    }

    /// Collapses communities (already renumbered densely) into supernodes.
    fn aggregate(&self, community: &[usize], count: usize) -> Level {
        let mut self_loops = vec![0.0; count];
        let mut degrees = vec![0.0; count];
        let mut links: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
        for i in 0..self.len() {
            let ci = community[i];
            self_loops[ci] += self.self_loops[i];
            degrees[ci] += self.degrees[i];
            for &(j, w) in &self.neighbors[i] {
                let cj = community[j];
                if ci == cj {
                    // each internal edge seen from both ends
                    self_loops[ci] += 0.5 * w;
                } else {
                    *links[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Level {
            neighbors: links.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loops,
            degrees,
        }
    }

    /// `Σ_c in_c/m − (tot_c/2m)²` with every node its own community.
    fn quality(&self, m: f64) -> f64 {
        let two_m = 2.0 * m;
        self.self_loops
            .iter()
            .zip(&self.degrees)
            .map(|(&inw, &d)| inw / m - (d / two_m) * (d / two_m))
            .sum()
    }
}

/// Louvain partition. With `seed = None` nodes are visited in natural order;
/// a seed shuffles the visiting order at every level.
pub fn louvain(g: &WeightedGraph, seed: Option<u64>) -> Partition {
    louvain_with_quality(g, seed).0
}

/// Louvain partition together with the modularity of the final aggregated
/// graph.
pub fn louvain_with_quality(g: &WeightedGraph, seed: Option<u64>) -> (Partition, f64) {
    let m = g.total_weight();
    let two_m = 2.0 * m;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut level = Level::from_graph(g);
    // supernode of every original node at the current level
    let mut membership: Vec<usize> = (0..g.node_count()).collect();
    loop {
        let (community, moved) = level.move_nodes(two_m, rng.as_mut());
        if !moved {
            break;
        }
        let dense = Partition::from_assignment(&community);
        for v in membership.iter_mut() {
            *v = dense.community_of(*v);
        }
        level = level.aggregate(dense.assignment(), dense.community_count());
    }
    (Partition::from_assignment(&membership), level.quality(m))
}
