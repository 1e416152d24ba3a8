//! Neighbourhood selection and the sparse similarity graph.

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodStrategy {
    Knee,
    Connectivity,
}

/// How distances are mapped to weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightScaling {
    /// `exp(−d / median(positive d))`.
    #[default]
    Median,
    /// `exp(−d)`.
    Raw,
}

/// Symmetric weighted graph on `n` vertices. Edges are stored once with
/// `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub n: usize,
    pub m: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl SimilarityGraph {
    /// Builds a graph from an explicit edge list, normalising orientation and
    /// dropping duplicate pairs (last weight wins).
    pub fn from_edges(n: usize, m: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for (i, j, s) in edges {
            if i != j {
                map.insert((i.min(j), i.max(j)), s);
            }
        }
        SimilarityGraph { n, m, edges: map.into_iter().map(|((i, j), s)| (i, j, s)).collect() }
    }

    /// Per-vertex `(neighbour, weight)` lists.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, s) in &self.edges {
            adj[i].push((j, s));
            adj[j].push((i, s));
        }
        adj
    }

    /// Connected components as a vertex → component-id map (ids follow the
    /// smallest member).
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n);
        for &(i, j, _) in &self.edges {
            uf.union(i, j);
        }
        let mut ids = vec![usize::MAX; self.n];
        let mut out = vec![0; self.n];
        let mut next = 0;
        for v in 0..self.n {
            let r = uf.find(v);
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            out[v] = ids[r];
        }
        out
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Returns false when already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// Neighbours of every point sorted by `(distance, index)`.
fn neighbor_order(d: &DistanceMatrix) -> Vec<Vec<usize>> {
    let n = d.n();
    (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
            idx
        })
        .collect()
}

fn union_knn_connected(order: &[Vec<usize>], m: usize) -> bool {
    let n = order.len();
    let mut uf = UnionFind::new(n);
    let mut parts = n;
    for (i, nb) in order.iter().enumerate() {
        for &j in nb.iter().take(m) {
            if uf.union(i, j) {
                parts -= 1;
            }
        }
    }
    parts == 1
}

/// `⌈log2 n⌉`, clamped to `[1, n−1]`.
pub fn fallback_neighborhood(n: usize) -> usize {
    let m = (n as f64).log2().ceil() as usize;
    m.clamp(1, n.saturating_sub(1).max(1))
}

/// Chooses the neighbourhood size `m`.
///
/// `Knee` rescales the mean `k`-th-neighbour distance curve (`k = 1..⌈n/2⌉`)
/// to the unit square and takes the point farthest from its chord. `Connectivity` takes the
/// smallest `m` whose union-kNN graph is connected. Both fall back to
/// `⌈log2 n⌉` when the curve is flat.
pub fn select_neighborhood_size(d: &DistanceMatrix, strategy: NeighborhoodStrategy) -> usize {
    let n = d.n();
    if n < 3 {
        return 1;
    }
    let order = neighbor_order(d);
    let kmax = n.div_ceil(2).min(n - 1);
    let curve: Vec<f64> =
        (1..=kmax).map(|k| (0..n).map(|i| d.get(i, order[i][k - 1])).sum::<f64>() / n as f64).collect();
    let flat = curve.iter().all(|c| (c - curve[0]).abs() < 1e-12);
    match strategy {
        NeighborhoodStrategy::Connectivity => {
            if flat && curve[0] < 1e-12 {
                return fallback_neighborhood(n);
            }
            (1..n).find(|&m| union_knn_connected(&order, m)).unwrap_or(n - 1)
        }
        NeighborhoodStrategy::Knee => {
            let span = curve[kmax - 1] - curve[0];
            if flat || kmax < 3 || span < 1e-12 {
                return fallback_neighborhood(n);
            }
            // both axes rescaled to [0, 1]; the knee is the point farthest from
            // the chord, which is where the bend is sharpest
            let y: Vec<f64> = curve.iter().map(|c| (c - curve[0]) / span).collect();
            let mut best = (0.0, 0usize);
            for (k, yk) in y.iter().enumerate() {
                let gap = yk - k as f64 / (kmax - 1) as f64;
                if gap > best.0 {
                    best = (gap, k + 1);
                }
            }
            if best.0 < 1e-12 {
                fallback_neighborhood(n)
            } else {
                best.1
            }
        }
    }
}

/// Weights `exp(−d_ij / scale)` on the union-kNN edge set of size `m`.
pub fn build_similarity_graph(d: &DistanceMatrix, m: usize, scaling: WeightScaling) -> SimilarityGraph {
    let n = d.n();
    let m = m.clamp(1, n.saturating_sub(1).max(1));
    let order = neighbor_order(d);
    let scale = match scaling {
        WeightScaling::Raw => 1.0,
        WeightScaling::Median => median_positive(d).unwrap_or(1.0),
    };
    let mut edges = Vec::new();
    for (i, nb) in order.iter().enumerate() {
        for &j in nb.iter().take(m) {
            edges.push((i, j, (-d.get(i, j) / scale).exp()));
        }
    }
    SimilarityGraph::from_edges(n, m, edges)
}

fn median_positive(d: &DistanceMatrix) -> Option<f64> {
    let mut v: Vec<f64> = Vec::new();
    for i in 0..d.n() {
        for j in i + 1..d.n() {
            let x = d.get(i, j);
            if x > 0.0 {
                v.push(x);
            }
        }
    }
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::metrics::MetricKind;

    fn from_points(pts: &[(f64, f64)]) -> DistanceMatrix {
        DistanceMatrix::from_fn(pts.len(), MetricKind::HilbertL2, |i, j| {
            ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()
        })
    }

    fn bfs_connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in edges {
                let w = if a == v { b } else if b == v { a } else { continue };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Brute-force union-kNN: for each point, rank all others by (d, index).
    fn brute_edges(d: &DistanceMatrix, m: usize) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for i in 0..d.n() {
            for j in 0..d.n() {
                if i == j {
                    continue;
                }
                let rank = (0..d.n())
                    .filter(|&k| k != i && (d.get(i, k) < d.get(i, j) || (d.get(i, k) == d.get(i, j) && k < j)))
                    .count();
                if rank < m {
                    out.insert((i.min(j), i.max(j)));
                }
            }
        }
        out
    }

    #[test]
    fn two_cliques_need_five_neighbours() {
        let mut pts = Vec::new();
        for k in 0..5 {
            pts.push((k as f64 * 0.1, 0.0));
            pts.push((100.0 + k as f64 * 0.1, 0.0));
        }
        let d = from_points(&pts);
        let m = select_neighborhood_size(&d, NeighborhoodStrategy::Connectivity);
        let first = (1..pts.len()).find(|&m| bfs_connected(pts.len(), &brute_edges(&d, m))).unwrap();
        assert_eq!(m, first);
        assert_eq!(m, 5);
    }

    #[test]
    fn identical_points_fall_back() {
        let d = DistanceMatrix::from_fn(10, MetricKind::HilbertL2, |_, _| 0.0);
        assert_eq!(select_neighborhood_size(&d, NeighborhoodStrategy::Knee), 4);
        assert_eq!(select_neighborhood_size(&d, NeighborhoodStrategy::Connectivity), 4);
    }

    #[test]
    fn three_chain_needs_one() {
        let d = from_points(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(select_neighborhood_size(&d, NeighborhoodStrategy::Connectivity), 1);
    }

    #[test]
    fn edges_match_brute_force() {
        let pts = [(0.0, 0.0), (1.0, 0.2), (0.3, 2.0), (5.0, 5.0), (5.5, 4.0), (2.0, 2.0)];
        let d = from_points(&pts);
        let g = build_similarity_graph(&d, 2, WeightScaling::Median);
        let got: BTreeSet<(usize, usize)> = g.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(got, brute_edges(&d, 2));
        assert!(g.edges.iter().all(|e| e.2 > 0.0 && e.2 <= 1.0));
    }

    #[test]
    fn complete_graph_and_unit_weight() {
        let pts = [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0), (3.0, 1.0)];
        let d = from_points(&pts);
        let g = build_similarity_graph(&d, 3, WeightScaling::Raw);
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.edges[0], (0, 1, 1.0));
        assert!((g.edges[1].2 - (-1.0f64).exp()).abs() < 1e-15);
    }
}
