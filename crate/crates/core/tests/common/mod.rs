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

//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the crate's numerics.

#![allow(dead_code)]

use std::collections::BTreeSet;

use dmn_nss::graph::WeightedGraph;
use dmn_nss::ingest::{RoiLabel, TimeSeriesMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn labels(r: usize) -> Vec<RoiLabel> {
    RoiLabel::from_names(&(0..r).map(|i| format!("roi_{i:02}")).collect::<Vec<_>>())
}

/// `T × R` series with random cross-ROI mixing, so ρ is generically nonzero.
pub fn mixed_series(rng: &mut ChaCha8Rng, t: usize, r: usize) -> TimeSeriesMatrix {
    let z = DMatrix::from_fn(t, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mix = DMatrix::from_fn(r, r, |i, j| {
        let g: f64 = rng.sample(StandardNormal);
        if i == j { 1.0 + g.abs() } else { 0.5 * g }
    });
    let offset: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut x = z * mix;
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(offset[j]);
    }
    TimeSeriesMatrix::new("s", x, labels(r)).expect("generated series is valid")
}

pub fn columns(ts: &TimeSeriesMatrix) -> Vec<Vec<f64>> {
    ts.values.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Covariance with the `T − 1` denominator, by direct summation.
pub fn covariance_oracle(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = cols[0].len();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / t as f64).collect();
    (0..cols.len())
        .map(|i| {
            (0..cols.len())
                .map(|j| (0..t).map(|k| (cols[i][k] - means[i]) * (cols[j][k] - means[j])).sum::<f64>() / (t - 1) as f64)
                .collect()
        })
        .collect()
}

/// Orthonormal basis of `span(vectors)` by modified Gram-Schmidt with one
/// reorthogonalisation pass.
fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let n = dot(&w, &w).sqrt();
        if n > 1e-12 * dot(v, v).sqrt() {
            basis.push(w.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn residual(x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut r = x.to_vec();
    for _ in 0..2 {
        for q in basis {
            let c = dot(&r, q);
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= c * qi;
            }
        }
    }
    r
}

/// Partial correlation of columns `i`, `j`: correlation of the residuals
/// after regressing each on an intercept and every other column.
pub fn regression_pcorr(cols: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let t = cols[0].len();
    let mut regressors = vec![vec![1.0; t]];
    regressors.extend((0..cols.len()).filter(|&k| k != i && k != j).map(|k| cols[k].clone()));
    let basis = orthonormal_basis(&regressors);
    let ri = residual(&cols[i], &basis);
    let rj = residual(&cols[j], &basis);
    dot(&ri, &rj) / (dot(&ri, &ri) * dot(&rj, &rj)).sqrt()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Worst relative Frobenius residual over the four Penrose conditions.
pub fn penrose_oracle(a: &[Vec<f64>], x: &[Vec<f64>]) -> f64 {
    let rel = |d: Vec<Vec<f64>>, reference: &[Vec<f64>]| {
        let n = frobenius(reference);
        if n == 0.0 { frobenius(&d) } else { frobenius(&d) / n }
    };
    let ax = matmul(a, x);
    let xa = matmul(x, a);
    [
        rel(sub(&matmul(&ax, a), a), a),
        rel(sub(&matmul(&xa, x), x), x),
        rel(sub(&transpose(&ax), &ax), &ax),
        rel(sub(&transpose(&xa), &xa), &xa),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// `Q = (1/2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)` as a literal double sum.
pub fn modularity_oracle(n: usize, edges: &[(usize, usize, f64)], assignment: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        a[i][j] += w;
        a[j][i] += w;
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if assignment[i] == assignment[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Maximum modularity by recursive enumeration of every labelling in
/// canonical form (node `i` joins an existing block or opens a new one).
pub fn brute_force_max_modularity(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
    fn go(n: usize, edges: &[(usize, usize, f64)], labels: &mut Vec<usize>, blocks: usize, best: &mut f64) {
        if labels.len() == n {
            *best = best.max(modularity_oracle(n, edges, labels));
            return;
        }
        for b in 0..=blocks {
            labels.push(b);
            go(n, edges, labels, blocks.max(b + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(n, edges, &mut Vec::new(), 0, &mut best);
    best
}

/// k-clique communities: every k-subset that is a clique, joined when two
/// share `k − 1` nodes; each component contributes its node union. Unions
/// contained in another union are dropped. Output sorted.
pub fn cpm_oracle(n: usize, pairs: &[(usize, usize)], k: usize) -> Vec<Vec<usize>> {
    let adj: BTreeSet<(usize, usize)> = pairs.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    let connected = |i: usize, j: usize| adj.contains(&(i.min(j), i.max(j)));
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    let mut subset = Vec::new();
    fn subsets(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            subsets(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    subsets(0, n, k, &mut subset, &mut all);
    for s in all {
        if s.iter().enumerate().all(|(a, &u)| s[a + 1..].iter().all(|&v| connected(u, v))) {
            cliques.push(s);
        }
    }
    let m = cliques.len();
    let mut component = vec![usize::MAX; m];
    let mut next = 0;
    for start in 0..m {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = next;
        while let Some(c) = stack.pop() {
            for d in 0..m {
                if component[d] == usize::MAX {
                    let shared = cliques[c].iter().filter(|x| cliques[d].contains(x)).count();
                    if shared + 1 >= k {
                        component[d] = next;
                        stack.push(d);
                    }
                }
            }
        }
        next += 1;
    }
    let mut unions: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); next];
    for (c, clique) in cliques.iter().enumerate() {
        unions[component[c]].extend(clique.iter().copied());
    }
    let mut out: Vec<Vec<usize>> = unions
        .iter()
        .filter(|u| !unions.iter().any(|v| v != *u && u.is_subset(v)))
        .map(|u| u.iter().copied().collect())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Random weighted graph on `n` nodes with at least one edge.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> (Vec<(usize, usize, f64)>, WeightedGraph) {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    edges.push((i, j, rng.random_range(0.05..1.0)));
                }
            }
        }
        if !edges.is_empty() {
            let g = WeightedGraph::unlabeled(n, &edges).expect("valid edges");
            return (edges, g);
        }
    }
}

/// Two cliques of sizes `a` and `b` joined by one bridge `(a − 1, a)`.
/// Within-clique weights in `[hi_low, 1]`, bridge weight `bridge`.
pub fn two_cliques(rng: &mut ChaCha8Rng, a: usize, b: usize, hi_low: f64, bridge: f64) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for (lo, size) in [(0, a), (a, b)] {
        for i in lo..lo + size {
            for j in (i + 1)..lo + size {
                let w = if hi_low >= 1.0 { 1.0 } else { rng.random_range(hi_low..=1.0) };
                edges.push((i, j, w));
            }
        }
    }
    edges.push((a - 1, a, bridge));
    edges
}

/// Planted two-block graph on 6 to 8 nodes: blocks of at least three
/// nodes, dense heavy edges inside blocks, sparse light edges across.
pub fn planted_partition(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize, f64)>, Vec<usize>, WeightedGraph) {
    assert!((6..=8).contains(&n));
    let first = rng.random_range(3..=n - 3);
    let mut block: Vec<usize> = (0..n).map(|i| usize::from(i >= first)).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        block.swap(i, j);
    }
    let p_in = rng.random_range(0.8..=1.0);
    let p_out = rng.random_range(0.0..0.2);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let inside = block[i] == block[j];
            if rng.random_bool(if inside { p_in } else { p_out }) {
                let w = if inside { rng.random_range(0.5..=1.0) } else { rng.random_range(0.05..0.3) };
                edges.push((i, j, w));
            }
        }
    }
    let g = WeightedGraph::unlabeled(n, &edges).expect("valid edges");
    (edges, block, g)
}
