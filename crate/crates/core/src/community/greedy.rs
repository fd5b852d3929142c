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

//! Clauset–Newman–Moore agglomerative modularity maximization.
//!
//! Starting from singletons, the connected community pair with the largest
//! `ΔQ = 2 (e_ij − a_i a_j)` is merged until no merge has `ΔQ > 0`. The
//! `ΔQ` values live in per-community sparse rows plus one ordered set that
//! acts as the global priority queue; both are patched locally on each merge.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;

use super::Partition;
use crate::graph::WeightedGraph;

type Key = (Reverse<OrderedFloat<f64>>, usize, usize);

fn key(dq: f64, a: usize, b: usize) -> Key {
    (Reverse(OrderedFloat(dq)), a.min(b), a.max(b))
}

pub fn greedy_modularity(g: &WeightedGraph) -> Partition {
    greedy_modularity_with_quality(g).0
}

/// Partition plus the modularity accumulated as `Q₀ + Σ ΔQ` over merges.
pub fn greedy_modularity_with_quality(g: &WeightedGraph) -> (Partition, f64) {
    let n = g.node_count();
    let two_m = 2.0 * g.total_weight();
    let mut a: Vec<f64> = g.degrees().iter().map(|k| k / two_m).collect();
    let mut dq: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut queue: BTreeSet<Key> = BTreeSet::new();
    for e in g.edges() {
        let value = 2.0 * (e.weight / two_m - a[e.i] * a[e.j]);
        dq[e.i].insert(e.j, value);
        dq[e.j].insert(e.i, value);
        queue.insert(key(value, e.i, e.j));
    }
    let mut quality: f64 = -a.iter().map(|x| x * x).sum::<f64>();
    let mut owner: Vec<usize> = (0..n).collect();

    while let Some(&(Reverse(OrderedFloat(best)), keep, gone)) = queue.first() {
        if best <= 0.0 {
            break;
        }
        quality += best;

        let row_keep = std::mem::take(&mut dq[keep]);
        let row_gone = std::mem::take(&mut dq[gone]);
        for (&k, &v) in &row_keep {
            queue.remove(&key(v, keep, k));
        }
        for (&k, &v) in &row_gone {
            queue.remove(&key(v, gone, k));
        }
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (&k, &v) in &row_keep {
            if k == gone {
                continue;
            }
            let value = match row_gone.get(&k) {
                Some(&w) => v + w,
                None => v - 2.0 * a[gone] * a[k],
            };
            merged.insert(k, value);
        }
        for (&k, &w) in &row_gone {
            if k == keep || row_keep.contains_key(&k) {
                continue;
            }
            merged.insert(k, w - 2.0 * a[keep] * a[k]);
        }
        for (&k, &value) in &merged {
            dq[k].remove(&keep);
            dq[k].remove(&gone);
            dq[k].insert(keep, value);
            queue.insert(key(value, keep, k));
        }
        dq[keep] = merged;
        a[keep] += a[gone];
        a[gone] = 0.0;
        for o in owner.iter_mut() {
            if *o == gone {
                *o = keep;
            }
        }
    }
    (Partition::from_assignment(&owner), quality)
}
