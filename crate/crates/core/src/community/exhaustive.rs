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

//! Brute-force modularity maximization over all set partitions. Test oracle
//! for the heuristic optimizers.

use super::{CommunityError, Partition};
use crate::graph::WeightedGraph;

/// Largest graph accepted; `B(10) = 115 975` partitions.
pub const EXHAUSTIVE_MAX_NODES: usize = 10;

/// Visits partitions as restricted growth strings in lexicographic order and
/// keeps the first one reaching the maximum (beyond a 1e-12 margin).
pub fn exhaustive_max_modularity(g: &WeightedGraph) -> Result<(Partition, f64), CommunityError> {
    let n = g.node_count();
    if n > EXHAUSTIVE_MAX_NODES {
        return Err(CommunityError::TooLarge {
            max: EXHAUSTIVE_MAX_NODES,
            found: n,
        });
    }
    let m = g.total_weight();
    let two_m = 2.0 * m;
    let mut rgs = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut internal = vec![0.0; n];
    let mut total = vec![0.0; n];
    loop {
        internal.iter_mut().for_each(|x| *x = 0.0);
        total.iter_mut().for_each(|x| *x = 0.0);
        for e in g.edges() {
            if rgs[e.i] == rgs[e.j] {
                internal[rgs[e.i]] += e.weight;
            }
        }
        for v in 0..n {
            total[rgs[v]] += g.degree(v);
        }
        let blocks = rgs.iter().max().map_or(0, |&x| x + 1);
        let q: f64 = (0..blocks)
            .map(|c| internal[c] / m - (total[c] / two_m) * (total[c] / two_m))
            .sum();
        if best.as_ref().is_none_or(|(_, b)| q > b + 1e-12) {
            best = Some((rgs.clone(), q));
        }
        if !next_rgs(&mut rgs) {
            break;
        }
    }
    let (assignment, q) = best.expect("at least one partition");
    Ok((Partition::from_assignment(&assignment), q))
}

/// Advances to the next restricted growth string; false after the last.
fn next_rgs(rgs: &mut [usize]) -> bool {
    let n = rgs.len();
    for i in (1..n).rev() {
        let prefix_max = rgs[..i].iter().copied().max().unwrap_or(0);
        if rgs[i] <= prefix_max {
            rgs[i] += 1;
            for x in &mut rgs[i + 1..] {
                *x = 0;
            }
            return true;
        }
    }
    false
}
