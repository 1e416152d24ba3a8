//! Joint merge hierarchy across latent dimensions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::homotopy::CentroidPath;
use crate::metrics::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyMerge {
    /// Joint merge level; `None` stands for `λ = ∞` (pairs the paths never
    /// join, closed by centroid linkage).
    pub lambda: Option<f64>,
    /// Cluster ids (smallest member) with `a < b`.
    pub a: usize,
    pub b: usize,
    pub size: usize,
}

/// `n − 1` merges in order; cutting after `n − K` merges gives `K` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeHierarchy {
    pub n: usize,
    pub merges: Vec<HierarchyMerge>,
}

impl MergeHierarchy {
    /// Labels `0..K` numbered by first appearance.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let k = k.clamp(1, self.n.max(1));
        let mut uf = UnionFind::new(self.n);
        for m in self.merges.iter().take(self.n - k) {
            uf.union(m.a, m.b);
        }
        relabel(&(0..self.n).map(|i| uf.find(i)).collect::<Vec<_>>())
    }
}

/// Maps arbitrary ids to `0..K` in order of first appearance.
pub fn relabel(ids: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    ids.iter()
        .map(|id| {
            let next = map.len();
            *map.entry(*id).or_insert(next)
        })
        .collect()
}

/// Two subjects join at the largest of their per-dimension merge levels;
/// the hierarchy is single linkage on that matrix. Components the paths
/// never join are closed by centroid linkage on `x` at `λ = ∞`.
pub fn joint_hierarchy(paths: &[CentroidPath], x: &Array2<f64>) -> MergeHierarchy {
    let n = x.nrows();
    let mut joint = vec![0.0f64; n * n];
    for p in paths {
        debug_assert_eq!(p.n, n);
        for (o, v) in joint.iter_mut().zip(p.pairwise_merge_lambda()) {
            *o = o.max(v);
        }
    }
    // Prim on the dense matrix gives the single-linkage merge levels.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![usize::MAX; n];
    let mut tree_edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    if n > 0 {
        best[0] = 0.0;
    }
    for _ in 0..n {
        let mut pick = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (pick == usize::MAX || best[v] < best[pick]) {
                pick = v;
            }
        }
        in_tree[pick] = true;
        if from[pick] != usize::MAX && best[pick].is_finite() {
            tree_edges.push((best[pick], from[pick].min(pick), from[pick].max(pick)));
        }
        for v in 0..n {
            let w = joint[pick * n + v];
            if !in_tree[v] && w < best[v] {
                best[v] = w;
                from[v] = pick;
            }
        }
    }
    tree_edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::new(n);
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (lam, i, j) in tree_edges {
        let (a, b) = (uf.find(i), uf.find(j));
        if a == b {
            continue;
        }
        uf.union(a, b);
        let r = uf.find(a);
        size[r] = size[a] + size[b];
        merges.push(HierarchyMerge { lambda: Some(lam), a: a.min(b), b: a.max(b), size: size[r] });
    }
    // close the remaining components by centroid distance
    loop {
        let mut roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
        roots.sort();
        roots.dedup();
        if roots.len() <= 1 {
            break;
        }
        let s = x.ncols();
        let cents: Vec<Vec<f64>> = roots
            .iter()
            .map(|&r| {
                let members: Vec<usize> = (0..n).filter(|&i| uf.find(i) == r).collect();
                (0..s).map(|d| members.iter().map(|&i| x[[i, d]]).sum::<f64>() / members.len() as f64).collect()
            })
            .collect();
        let mut bestp = (f64::INFINITY, 0, 1);
        for a in 0..roots.len() {
            for b in a + 1..roots.len() {
                let d: f64 = cents[a].iter().zip(&cents[b]).map(|(p, q)| (p - q) * (p - q)).sum();
                if d < bestp.0 {
                    bestp = (d, a, b);
                }
            }
        }
        let (ra, rb) = (roots[bestp.1], roots[bestp.2]);
        uf.union(ra, rb);
        let r = uf.find(ra);
        size[r] = size[ra] + size[rb];
        merges.push(HierarchyMerge { lambda: None, a: ra.min(rb), b: ra.max(rb), size: size[r] });
    }
    MergeHierarchy { n, merges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvxclust::homotopy::homotopy_path;
    use crate::metrics::SimilarityGraph;

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
    fn single_dimension_reproduces_the_path() {
        let x = [0.0, 0.1, 3.0, 3.3, 9.0];
        let g = complete(5);
        let p = homotopy_path(&x, &g);
        let xm = Array2::from_shape_vec((5, 1), x.to_vec()).unwrap();
        let h = joint_hierarchy(std::slice::from_ref(&p), &xm);
        assert_eq!(h.merges.len(), 4);
        for (hm, pm) in h.merges.iter().zip(&p.merges) {
            assert!((hm.lambda.unwrap() - pm.lambda).abs() < 1e-12);
        }
        assert_eq!(h.cut(3), vec![0, 0, 1, 1, 2]);
        assert_eq!(h.cut(1), vec![0; 5]);
    }

    #[test]
    fn joint_level_is_the_max_over_dimensions() {
        // dim 0 merges the pair at λ = 1, dim 1 at λ = 3
        let g = complete(2);
        let p0 = homotopy_path(&[0.0, 2.0], &g);
        let p1 = homotopy_path(&[0.0, 6.0], &g);
        let x = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 2.0, 6.0]).unwrap();
        let h = joint_hierarchy(&[p0.clone(), p1.clone()], &x);
        assert!((h.merges[0].lambda.unwrap() - 3.0).abs() < 1e-12);
        // at λ = 2 only one dimension has fused, at λ = 3 both have
        let (a, b) = (p0.evaluate(2.0), p1.evaluate(2.0));
        assert!(a[0] == a[1] && b[0] != b[1]);
        let b3 = p1.evaluate(3.0);
        assert!((b3[0] - b3[1]).abs() < 1e-12);
    }

    #[test]
    fn disconnected_components_close_at_infinity() {
        let g = SimilarityGraph::from_edges(4, 1, [(0, 1, 1.0), (2, 3, 1.0)]);
        let xs = [0.0, 1.0, 5.0, 7.0];
        let p = homotopy_path(&xs, &g);
        let x = Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
        let h = joint_hierarchy(&[p], &x);
        assert_eq!(h.merges.len(), 3);
        assert_eq!(h.merges[2].lambda, None);
        assert_eq!(h.cut(2), vec![0, 0, 1, 1]);
    }
}
