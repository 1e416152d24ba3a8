//! Internal validation indices and partition selection.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::hierarchy::MergeHierarchy;
use crate::error::{FaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionScores {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub k: usize,
    pub scores: BTreeMap<usize, PartitionScores>,
}

fn pairwise(x: &Array2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn n_clusters(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn silhouette_from(d: &[f64], labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = n_clusters(labels);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[labels[j]] += d[i * n + j];
        }
        let a = sums[labels[i]] / (counts[labels[i]] - 1) as f64;
        let b = (0..k).filter(|&c| c != labels[i] && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Mean silhouette with Euclidean distance; singletons score 0.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> f64 {
    silhouette_from(&pairwise(x), labels)
}

fn centroids(x: &Array2<f64>, labels: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let k = n_clusters(labels);
    let mut c = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mut row = c.row_mut(l);
        row += &x.row(i);
    }
    for (l, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            c.row_mut(l).mapv_inplace(|v| v / cnt as f64);
        }
    }
    (c, counts)
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub fn davies_bouldin(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let (c, counts) = centroids(x, labels);
    let k = counts.len();
    let mut spread = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        spread[l] += dist(x.row(i), c.row(l)) / counts[l] as f64;
    }
    let mut total = 0.0;
    for a in 0..k {
        let mut worst = 0.0f64;
        for b in 0..k {
            if a != b {
                let sep = dist(c.row(a), c.row(b));
                let r = if sep > 0.0 { (spread[a] + spread[b]) / sep } else { f64::INFINITY };
                worst = worst.max(r);
            }
        }
        total += worst;
    }
    total / k as f64
}

pub fn calinski_harabasz(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let (c, counts) = centroids(x, labels);
    let k = counts.len();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let between: f64 = (0..k).map(|l| counts[l] as f64 * dist(c.row(l), mean.view()).powi(2)).sum();
    let within: f64 = labels.iter().enumerate().map(|(i, &l)| dist(x.row(i), c.row(l)).powi(2)).sum();
    if k < 2 || n <= k {
        return 0.0;
    }
    if within == 0.0 {
        return f64::INFINITY;
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

/// A cut whose clusters, apart from one, are all singletons.
fn degenerate(labels: &[usize]) -> bool {
    let k = n_clusters(labels);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts.iter().filter(|&&c| c > 1).count() <= 1 && k >= 2 && labels.len() > k
}

/// Cuts the hierarchy at every `K` in `[kmin, kmax] ∩ [2, n−1]` and keeps the
/// silhouette maximiser (ties to the smaller `K`). `k_fixed` bypasses the
/// search but still reports its scores.
pub fn select_partition(
    h: &MergeHierarchy,
    x: &Array2<f64>,
    kmin: usize,
    kmax: usize,
    k_fixed: Option<usize>,
) -> Result<ClusterResult> {
    let n = h.n;
    let d = pairwise(x);
    if d.iter().all(|v| *v == 0.0) {
        return Err(FaeError::NoValidPartition("all embedded points coincide".into()));
    }
    let score = |labels: &[usize]| PartitionScores {
        silhouette: silhouette_from(&d, labels),
        davies_bouldin: davies_bouldin(x, labels),
        calinski_harabasz: calinski_harabasz(x, labels),
    };
    if let Some(k) = k_fixed {
        if k == 0 || k > n {
            return Err(FaeError::Config(format!("fixed K = {k} outside 1..={n}")));
        }
        let labels = h.cut(k);
        let mut scores = BTreeMap::new();
        if k >= 2 && k < n {
            scores.insert(k, score(&labels));
        }
        return Ok(ClusterResult { labels, k, scores });
    }
    let lo = kmin.max(2);
    let hi = kmax.min(n.saturating_sub(1));
    let mut scores = BTreeMap::new();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for k in lo..=hi {
        let labels = h.cut(k);
        if degenerate(&labels) {
            log::warn!("skipping degenerate cut at K = {k}");
            continue;
        }
        let sc = score(&labels);
        scores.insert(k, sc);
        if best.as_ref().is_none_or(|b| sc.silhouette > b.0) {
            best = Some((sc.silhouette, k, labels));
        }
    }
    match best {
        Some((_, k, labels)) => Ok(ClusterResult { labels, k, scores }),
        None => Err(FaeError::NoValidPartition(format!("no usable cut for K in {lo}..={hi}"))),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::cvxclust::{homotopy_paths, joint_hierarchy};
    use crate::metrics::{build_similarity_graph, DistanceMatrix, MetricKind, WeightScaling};

    fn blobs(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((40, 2), |(i, _)| nd.sample(&mut rng) + if i < 20 { 0.0 } else { 10.0 })
    }

    fn hierarchy(x: &Array2<f64>) -> MergeHierarchy {
        let n = x.nrows();
        let d = DistanceMatrix::from_fn(n, MetricKind::HilbertL2, |i, j| dist(x.row(i), x.row(j)));
        let g = build_similarity_graph(&d, 5, WeightScaling::Median);
        joint_hierarchy(&homotopy_paths(x, &g), x)
    }

    #[test]
    fn separated_blobs_select_two() {
        let x = blobs(4);
        let r = select_partition(&hierarchy(&x), &x, 2, 6, None).unwrap();
        assert_eq!(r.k, 2);
        for (&k, sc) in &r.scores {
            // direct recomputation of the silhouette at each scored K
            let direct = silhouette(&x, &hierarchy(&x).cut(k));
            assert!((sc.silhouette - direct).abs() < 1e-12);
            assert!(sc.silhouette <= r.scores[&2].silhouette);
        }
        assert!(r.labels[..20].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[20..].iter().all(|&l| l != r.labels[0]));
    }

    #[test]
    fn coincident_points_have_no_partition() {
        let x = Array2::from_elem((6, 2), 1.0);
        let h = MergeHierarchy {
            n: 6,
            merges: (1..6).map(|b| super::super::hierarchy::HierarchyMerge { lambda: Some(0.0), a: 0, b, size: b + 1 }).collect(),
        };
        assert!(matches!(select_partition(&h, &x, 2, 4, None), Err(FaeError::NoValidPartition(_))));
    }

    #[test]
    fn fixed_k_is_honoured() {
        let x = blobs(5);
        let r = select_partition(&hierarchy(&x), &x, 2, 6, Some(4)).unwrap();
        assert_eq!(r.k, 4);
        assert_eq!(r.labels.iter().max(), Some(&3));
    }

    #[test]
    fn silhouette_hand_case() {
        // points 0, 1 | 10: a(0)=1, b(0)=10 → 0.9; a(1)=1, b(1)=9 → 8/9; singleton → 0
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 10.0]).unwrap();
        let s = silhouette(&x, &[0, 0, 1]);
        assert!((s - (0.9 + 8.0 / 9.0) / 3.0).abs() < 1e-12);
    }
}
