//! Exact piecewise-linear solution path of the one-dimensional fusion
//! problem, traced from merge to merge with a lazily invalidated event queue.
//!
//! While the active clusters keep their members, cluster `k` sits at
//! `ü_k(λ) = mean_k + slope_k·λ` with
//! `slope_k = −(n / (2|I_k|)) Σ_v s̈_kv sgn(ü_k − ü_v)`. Adjacent clusters
//! never cross without merging, so the signed sum `S_k` only changes by
//! addition when two clusters merge.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::fista::{fista_warm_start, FistaOptions};
use crate::metrics::{SimilarityGraph, UnionFind};

/// Events closer than this in `λ` are treated as simultaneous.
pub const TIE_TOL: f64 = 1e-12;

/// One affine piece of a cluster trajectory, active on
/// `[lambda_start, lambda_end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathNode {
    /// Smallest member index; the cluster's id.
    pub id: usize,
    pub size: usize,
    pub mean: f64,
    pub slope: f64,
    pub lambda_start: f64,
    /// `None` while the cluster survives to `λ = ∞`.
    pub lambda_end: Option<f64>,
    pub children: Option<(usize, usize)>,
}

impl PathNode {
    pub fn position(&self, lambda: f64) -> f64 {
        self.mean + self.slope * lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub lambda: f64,
    /// Cluster ids with `a < b`; the merged cluster keeps `a`.
    pub a: usize,
    pub b: usize,
}

/// Solution path of one latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidPath {
    pub dim: usize,
    pub n: usize,
    pub lambda_start: f64,
    /// Leaves first (`nodes[i]` is the initial cluster containing `i` when
    /// the path starts at zero), then one node per merge.
    pub nodes: Vec<PathNode>,
    pub merges: Vec<MergeEvent>,
    /// Nodes created by each merge, parallel to `merges`.
    merge_nodes: Vec<usize>,
    /// Initial node of every subject.
    leaf_of: Vec<usize>,
}

impl CentroidPath {
    pub fn breakpoints(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.lambda).collect()
    }

    /// Cluster node index of every subject after all merges with
    /// `lambda ≤ at` have been applied.
    fn active_nodes(&self, at: f64) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n);
        let mut node_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, &leaf) in self.leaf_of.iter().enumerate() {
            let r = self.nodes[leaf].id;
            uf.union(r, i);
        }
        for i in 0..self.n {
            node_of_root.insert(uf.find(i), self.leaf_of[i]);
        }
        for (m, &node) in self.merges.iter().zip(&self.merge_nodes) {
            if m.lambda > at {
                break;
            }
            uf.union(m.a, m.b);
            node_of_root.insert(uf.find(m.a), node);
        }
        (0..self.n).map(|i| node_of_root[&uf.find(i)]).collect()
    }

    /// Centroid of every subject at `lambda`.
    pub fn evaluate(&self, lambda: f64) -> Vec<f64> {
        let at = lambda.max(self.lambda_start);
        self.active_nodes(at).into_iter().map(|k| self.nodes[k].position(at)).collect()
    }

    /// Cluster id (smallest member) of every subject at `lambda`.
    pub fn partition(&self, lambda: f64) -> Vec<usize> {
        self.active_nodes(lambda).into_iter().map(|k| self.nodes[k].id).collect()
    }

    /// `λ` at which each pair of subjects first shares a cluster
    /// (`∞` when never), as a dense row-major `n × n` matrix.
    pub fn pairwise_merge_lambda(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![f64::INFINITY; n * n];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, &leaf) in self.leaf_of.iter().enumerate() {
            members[leaf].push(i);
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if node.children.is_none() {
                let start = node.lambda_start;
                let ms = &members[k];
                for &a in ms {
                    for &b in ms {
                        out[a * n + b] = if a == b { 0.0 } else { start };
                    }
                }
            }
        }
        for (m, &node) in self.merges.iter().zip(&self.merge_nodes) {
            let (l, r) = self.nodes[node].children.unwrap();
            let (left, right) = (std::mem::take(&mut members[l]), std::mem::take(&mut members[r]));
            for &a in &left {
                for &b in &right {
                    out[a * n + b] = m.lambda;
                    out[b * n + a] = m.lambda;
                }
            }
            members[node] = left;
            members[node].extend(right);
        }
        for i in 0..n {
            out[i * n + i] = 0.0;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    lambda: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl Event {
    fn key(&self) -> (f64, usize, usize) {
        (self.lambda, self.a.min(self.b), self.a.max(self.b))
    }
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        let (l1, a1, b1) = self.key();
        let (l2, a2, b2) = o.key();
        l1.total_cmp(&l2).then(a1.cmp(&a2)).then(b1.cmp(&b2))
    }
}

struct Cluster {
    alive: bool,
    version: u32,
    size: usize,
    sum_x: f64,
    signed: f64,
    node: usize,
    adj: BTreeMap<usize, f64>,
}

/// Next merge among graph-adjacent clusters: one step of the path.
///
/// Returns `(λ_next, (k, v))`, or `None` when no adjacent pair approaches.
/// Exposed for testing; `homotopy_path` runs the same rule incrementally.
pub fn next_breakpoint(
    positions: &[f64],
    sizes: &[usize],
    coupling: &[(usize, usize, f64)],
    n: usize,
    lambda: f64,
) -> Option<(f64, (usize, usize))> {
    let k = positions.len();
    let mut signed = vec![0.0; k];
    for &(a, b, s) in coupling {
        let sg = sign(positions[a] - positions[b]);
        signed[a] += s * sg;
        signed[b] -= s * sg;
    }
    let slope: Vec<f64> = (0..k).map(|c| -(n as f64) / (2.0 * sizes[c] as f64) * signed[c]).collect();
    let mut best: Option<(f64, (usize, usize))> = None;
    for &(a, b, _) in coupling {
        let Some(delta) = meeting_delta(positions[a], positions[b], slope[a], slope[b]) else { continue };
        let cand = (lambda + delta, (a.min(b), a.max(b)));
        let better = match best {
            None => true,
            Some((l, p)) => cand.0 < l - TIE_TOL || ((cand.0 - l).abs() <= TIE_TOL && cand.1 < p),
        };
        if better {
            best = Some(cand);
        }
    }
    best
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Time until two affine trajectories meet, or `None` if they never do.
fn meeting_delta(pa: f64, pb: f64, sa: f64, sb: f64) -> Option<f64> {
    let gap = pa - pb;
    if gap.abs() <= TIE_TOL * (1.0 + pa.abs().max(pb.abs())) {
        return Some(0.0);
    }
    let rel = sb - sa;
    // Δ = (ü_k − ü_v) / (slope_v − slope_k), positive only when approaching
    if rel == 0.0 {
        return None;
    }
    let delta = gap / rel;
    (delta > 0.0).then_some(delta)
}

/// Traces the path from `λ = 0` until every connected component of the
/// graph has collapsed to one cluster.
pub fn homotopy_path(x: &[f64], graph: &SimilarityGraph) -> CentroidPath {
    let singletons: Vec<usize> = (0..x.len()).collect();
    trace(x, graph, &singletons, x, 0.0, 0)
}

/// Starts the path at `lambda_plus > 0` from the clusters of an accurate
/// FISTA solution (adjacent subjects closer than `merge_tol` are fused).
pub fn homotopy_path_warm(x: &[f64], graph: &SimilarityGraph, lambda_plus: f64, merge_tol: f64) -> CentroidPath {
    if lambda_plus <= 0.0 {
        return homotopy_path(x, graph);
    }
    let sol = fista_warm_start(x, graph, lambda_plus, &FistaOptions::default());
    let mut uf = UnionFind::new(x.len());
    for &(i, j, _) in &graph.edges {
        if (sol.u[i] - sol.u[j]).abs() <= merge_tol {
            uf.union(i, j);
        }
    }
    let roots: Vec<usize> = (0..x.len()).map(|i| uf.find(i)).collect();
    trace(x, graph, &roots, &sol.u, lambda_plus, 0)
}

/// `root[i]` gives the initial cluster of subject `i` (the smallest index in
/// it); initial clusters are assumed to be fused already at `lambda0`, and
/// `order` gives their relative order there.
fn trace(x: &[f64], graph: &SimilarityGraph, root: &[usize], order: &[f64], lambda0: f64, dim: usize) -> CentroidPath {
    let n = x.len();
    let nf = n as f64;
    let mut clusters: Vec<Cluster> = (0..n)
        .map(|_| Cluster { alive: false, version: 0, size: 0, sum_x: 0.0, signed: 0.0, node: usize::MAX, adj: BTreeMap::new() })
        .collect();
    for i in 0..n {
        let c = &mut clusters[root[i]];
        c.alive = true;
        c.size += 1;
        c.sum_x += x[i];
    }
    let mean_of = |c: &Cluster| c.sum_x / c.size as f64;
    let slope_of = |c: &Cluster| -nf / (2.0 * c.size as f64) * c.signed;
    for &(i, j, s) in &graph.edges {
        let (a, b) = (root[i], root[j]);
        if a == b {
            continue;
        }
        *clusters[a].adj.entry(b).or_insert(0.0) += s;
        *clusters[b].adj.entry(a).or_insert(0.0) += s;
    }
    // signs from the relative order at the start of the path
    let mut start_pos = vec![0.0; n];
    for i in 0..n {
        start_pos[root[i]] += order[i] / clusters[root[i]].size as f64;
    }
    for k in 0..n {
        if !clusters[k].alive {
            continue;
        }
        let sum: f64 = clusters[k].adj.iter().map(|(&v, &s)| s * sign(start_pos[k] - start_pos[v])).sum();
        clusters[k].signed = sum;
    }
    let mut nodes = Vec::with_capacity(2 * n);
    let mut leaf_of = vec![0; n];
    for k in 0..n {
        if clusters[k].alive {
            clusters[k].node = nodes.len();
            nodes.push(PathNode {
                id: k,
                size: clusters[k].size,
                mean: mean_of(&clusters[k]),
                slope: slope_of(&clusters[k]),
                lambda_start: lambda0,
                lambda_end: None,
                children: None,
            });
        }
    }
    for i in 0..n {
        leaf_of[i] = clusters[root[i]].node;
    }

    let mut heap: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let push_events = |heap: &mut BinaryHeap<Reverse<Event>>, clusters: &Vec<Cluster>, k: usize, lambda: f64| {
        let ck = &clusters[k];
        let (pk, sk) = (mean_of(ck) + slope_of(ck) * lambda, slope_of(ck));
        for &v in ck.adj.keys() {
            let cv = &clusters[v];
            let (pv, sv) = (mean_of(cv) + slope_of(cv) * lambda, slope_of(cv));
            if let Some(delta) = meeting_delta(pk, pv, sk, sv) {
                heap.push(Reverse(Event { lambda: lambda + delta, a: k, b: v, va: ck.version, vb: cv.version }));
            }
        }
    };
    for k in 0..n {
        if clusters[k].alive {
            // each pair once: from the smaller id
            let ck = &clusters[k];
            let (pk, sk) = (mean_of(ck) + slope_of(ck) * lambda0, slope_of(ck));
            for &v in ck.adj.range(k + 1..).map(|(v, _)| v) {
                let cv = &clusters[v];
                let (pv, sv) = (mean_of(cv) + slope_of(cv) * lambda0, slope_of(cv));
                if let Some(delta) = meeting_delta(pk, pv, sk, sv) {
                    heap.push(Reverse(Event { lambda: lambda0 + delta, a: k, b: v, va: ck.version, vb: cv.version }));
                }
            }
        }
    }

    let valid = |e: &Event, clusters: &Vec<Cluster>| {
        clusters[e.a].alive && clusters[e.b].alive && clusters[e.a].version == e.va && clusters[e.b].version == e.vb
    };
    let mut merges = Vec::new();
    let mut merge_nodes = Vec::new();
    let mut current = lambda0;
    let mut batch: Vec<Event> = Vec::new();
    loop {
        batch.clear();
        while let Some(Reverse(e)) = heap.pop() {
            if !valid(&e, &clusters) {
                continue;
            }
            if batch.is_empty() || e.lambda <= batch[0].lambda + TIE_TOL {
                batch.push(e);
            } else {
                heap.push(Reverse(e));
                break;
            }
        }
        if batch.is_empty() {
            break;
        }
        // simultaneous events: lowest cluster ids first, one merge at a time
        let pick = *batch.iter().min_by_key(|e| (e.a.min(e.b), e.a.max(e.b))).unwrap();
        for e in batch.iter().filter(|e| e.a != pick.a || e.b != pick.b) {
            heap.push(Reverse(*e));
        }
        let lambda = pick.lambda.max(current);
        current = lambda;
        let (keep, gone) = (pick.a.min(pick.b), pick.a.max(pick.b));
        // merge adjacency, folding the smaller map into the larger
        let mut adj_keep = std::mem::take(&mut clusters[keep].adj);
        let mut adj_gone = std::mem::take(&mut clusters[gone].adj);
        adj_keep.remove(&gone);
        adj_gone.remove(&keep);
        if adj_keep.len() < adj_gone.len() {
            std::mem::swap(&mut adj_keep, &mut adj_gone);
        }
        for (v, s) in adj_gone {
            *adj_keep.entry(v).or_insert(0.0) += s;
        }
        let gone_neighbors: Vec<usize> = adj_keep.keys().copied().collect();
        for v in gone_neighbors {
            let av = &mut clusters[v].adj;
            let s_gone = av.remove(&gone).unwrap_or(0.0);
            if s_gone != 0.0 {
                *av.entry(keep).or_insert(0.0) += s_gone;
            }
        }
        let (g_size, g_sum, g_signed, g_node) =
            (clusters[gone].size, clusters[gone].sum_x, clusters[gone].signed, clusters[gone].node);
        clusters[gone].alive = false;
        let c = &mut clusters[keep];
        let k_node = c.node;
        c.adj = adj_keep;
        c.size += g_size;
        c.sum_x += g_sum;
        c.signed += g_signed;
        c.version += 1;
        nodes[k_node].lambda_end = Some(lambda);
        nodes[g_node].lambda_end = Some(lambda);
        let node = nodes.len();
        nodes.push(PathNode {
            id: keep,
            size: c.size,
            mean: c.sum_x / c.size as f64,
            slope: -nf / (2.0 * c.size as f64) * c.signed,
            lambda_start: lambda,
            lambda_end: None,
            children: Some((k_node, g_node)),
        });
        c.node = node;
        merges.push(MergeEvent { lambda, a: keep, b: gone });
        merge_nodes.push(node);
        push_events(&mut heap, &clusters, keep, lambda);
    }
    CentroidPath { dim, n, lambda_start: lambda0, nodes, merges, merge_nodes, leaf_of }
}

/// Paths for every column of an `n × s` embedding.
pub fn homotopy_paths(x: &ndarray::Array2<f64>, graph: &SimilarityGraph) -> Vec<CentroidPath> {
    use rayon::prelude::*;
    (0..x.ncols())
        .into_par_iter()
        .map(|d| {
            let col: Vec<f64> = x.column(d).to_vec();
            let singletons: Vec<usize> = (0..col.len()).collect();
            trace(&col, graph, &singletons, &col, 0.0, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvxclust::fista::objective;

    fn complete(n: usize) -> SimilarityGraph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j, 1.0));
            }
        }
        SimilarityGraph::from_edges(n, n - 1, e)
    }

    #[test]
    fn two_points_merge_at_one() {
        let p = homotopy_path(&[0.0, 2.0], &complete(2));
        assert_eq!(p.merges.len(), 1);
        assert!((p.merges[0].lambda - 1.0).abs() < 1e-12);
        let u = p.evaluate(5.0);
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 1.0).abs() < 1e-12);
        let half = p.evaluate(0.5);
        assert!((half[0] - 0.5).abs() < 1e-12 && (half[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn next_breakpoint_hand_cases() {
        let g = [(0, 1, 1.0)];
        let (l, pair) = next_breakpoint(&[0.0, 2.0], &[1, 1], &g, 2, 0.0).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert_eq!(pair, (0, 1));
        // equal slopes: coupling is zero so nothing moves
        assert!(next_breakpoint(&[0.0, 2.0], &[1, 1], &[(0, 1, 0.0)], 2, 0.0).is_none());
        let g3 = [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)];
        let (l, pair) = next_breakpoint(&[0.0, 1.0, 2.0], &[1, 1, 1], &g3, 3, 0.0).unwrap();
        assert!((l - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pair, (0, 1));
    }

    #[test]
    fn three_equally_spaced_tie_break() {
        let p = homotopy_path(&[0.0, 1.0, 2.0], &complete(3));
        assert_eq!(p.merges.len(), 2);
        assert_eq!((p.merges[0].a, p.merges[0].b), (0, 1));
        assert!((p.merges[0].lambda - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.merges[1].lambda - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((p.merges[1].a, p.merges[1].b), (0, 2));
        assert!((p.nodes[0].slope - 3.0).abs() < 1e-12);
        assert_eq!(p.nodes[1].slope, 0.0);
    }

    #[test]
    fn identical_points_merge_immediately() {
        let p = homotopy_path(&[1.5; 5], &complete(5));
        assert_eq!(p.merges.len(), 4);
        assert!(p.merges.iter().all(|m| m.lambda == 0.0));
    }

    #[test]
    fn disconnected_graph_stops_at_components() {
        let g = SimilarityGraph::from_edges(4, 1, [(0, 1, 1.0), (2, 3, 1.0)]);
        let p = homotopy_path(&[0.0, 1.0, 5.0, 7.0], &g);
        assert_eq!(p.merges.len(), 2);
        assert_eq!(p.partition(1e9), vec![0, 0, 2, 2]);
    }

    #[test]
    fn stationarity_holds_along_segments() {
        let x = [0.3, -1.2, 2.5, 0.9, 1.1, -0.4];
        let g = SimilarityGraph::from_edges(
            6,
            2,
            [(0, 1, 0.5), (0, 3, 1.0), (1, 5, 0.7), (2, 4, 0.9), (3, 4, 0.4), (4, 5, 0.2), (2, 3, 0.3)],
        );
        let p = homotopy_path(&x, &g);
        let mut cuts = vec![0.0];
        cuts.extend(p.breakpoints());
        for w in cuts.windows(2) {
            if w[1] - w[0] < 1e-9 {
                continue;
            }
            let lam = 0.5 * (w[0] + w[1]);
            let part = p.partition(lam);
            let u = p.evaluate(lam);
            for k in 0..6 {
                let members: Vec<usize> = (0..6).filter(|&i| part[i] == k).collect();
                if members.is_empty() {
                    continue;
                }
                let mut r = (2.0 / 6.0) * members.iter().map(|&i| u[i] - x[i]).sum::<f64>();
                for &(i, j, s) in &g.edges {
                    if (part[i] == k) != (part[j] == k) {
                        let (inside, outside) = if part[i] == k { (i, j) } else { (j, i) };
                        r += lam * s * sign(u[inside] - u[outside]);
                    }
                }
                assert!(r.abs() < 1e-9, "residual {r} at {lam}");
            }
        }
    }

    #[test]
    fn path_is_optimal_against_perturbations() {
        let x = [0.3, -1.2, 2.5, 0.9, 1.1, -0.4];
        let g = complete(6);
        let p = homotopy_path(&x, &g);
        for lam in [0.05, 0.2, 0.4, 1.0] {
            let u = p.evaluate(lam);
            let f0 = objective(&x, &g, lam, &u);
            for i in 0..6 {
                for h in [1e-4, -1e-4] {
                    let mut v = u.clone();
                    v[i] += h;
                    assert!(objective(&x, &g, lam, &v) >= f0 - 1e-12);
                }
            }
        }
    }
}
