//! The alternating train/cluster loop.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cvxclust::{homotopy_paths, joint_hierarchy, objective, select_partition, CentroidPath, ClusterResult, MergeHierarchy};
use crate::error::{FaeError, Result};
use crate::fdata::FunctionalDataset;
use crate::metrics::{
    build_similarity_graph, distance_matrix, select_neighborhood_size, MetricKind, MetricOptions, NeighborhoodStrategy,
    SimilarityGraph, WeightScaling,
};
use crate::network::{clustering_loss, FaeNetwork, LossBreakdown, NetInput, NetworkConfig, Trainer};

/// Settings of [`fit`] other than the network itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Pre-training epochs; `None` uses the network config's `epochs`.
    pub pretrain_epochs: Option<usize>,
    /// Epochs of clustering-regularised training per loop.
    pub finetune_epochs: usize,
    /// Loops between cluster updates; `None` never updates after the first.
    pub cluster_refresh_period: Option<usize>,
    pub max_loops: usize,
    /// Stop once the label-change fraction stays below this for two
    /// consecutive refreshes.
    pub tol: f64,
    pub metric: MetricOptions,
    pub neighborhood: NeighborhoodStrategy,
    /// Fixed neighbourhood size; overrides `neighborhood`.
    pub neighbors: Option<usize>,
    pub weight_scaling: WeightScaling,
    pub kmin: usize,
    pub kmax: usize,
    pub k_fixed: Option<usize>,
    /// Replaces the network seed.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            pretrain_epochs: None,
            finetune_epochs: 5,
            cluster_refresh_period: Some(1),
            max_loops: 20,
            tol: 0.01,
            metric: MetricOptions { kind: MetricKind::HilbertL2, grid: 64, radius: None },
            neighborhood: NeighborhoodStrategy::Knee,
            neighbors: None,
            weight_scaling: WeightScaling::Median,
            kmin: 2,
            kmax: 10,
            k_fixed: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FaeError::Config(m));
        if self.cluster_refresh_period == Some(0) {
            return bad("cluster_refresh_period must be at least 1".into());
        }
        if self.kmin < 2 || self.kmax < self.kmin {
            return bad(format!("need 2 <= kmin <= kmax, got {}..{}", self.kmin, self.kmax));
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative".into());
        }
        if self.neighbors == Some(0) {
            return bad("neighbors must be positive".into());
        }
        Ok(())
    }
}

/// Losses on the full dataset after one loop, with the clustering it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub iteration: usize,
    /// Reconstruction loss.
    pub l_r: f64,
    /// Orthogonality plus roughness penalty.
    pub l_w: f64,
    /// Clustering loss of the embedding under the current labels.
    pub l_c: f64,
    /// Convex-clustering objective where the selected partition appears,
    /// summed over latent dimensions; absent when it only forms at `λ = ∞`.
    pub l_s: Option<f64>,
    pub k: usize,
    /// Fraction of subjects whose cluster changed; absent without a refresh.
    pub change_fraction: Option<f64>,
}

/// Wall-clock seconds per phase; kept out of the serialised report so that
/// reports are reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTimings {
    pub graph: f64,
    pub pretrain: f64,
    pub finetune: f64,
    pub cluster: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub neighborhood_size: usize,
    pub graph_edges: usize,
    pub pretrain_loss: Option<LossBreakdown>,
    pub initial_k: usize,
    pub records: Vec<LoopRecord>,
    pub converged: bool,
    pub k: usize,
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub embedding: Array2<f64>,
    #[serde(skip)]
    pub timings: FitTimings,
}

/// One clustering pass on an embedding.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub paths: Vec<CentroidPath>,
    pub hierarchy: MergeHierarchy,
    pub result: ClusterResult,
}

/// Homotopy per latent dimension, joint hierarchy, silhouette selection.
pub fn cluster_embedding(x: &Array2<f64>, graph: &SimilarityGraph, cfg: &FitConfig) -> Result<Clustering> {
    if x.nrows() != graph.n {
        return Err(FaeError::ShapeMismatch(format!("{} embedded points for a graph on {}", x.nrows(), graph.n)));
    }
    let paths = homotopy_paths(x, graph);
    let hierarchy = joint_hierarchy(&paths, x);
    let result = select_partition(&hierarchy, x, cfg.kmin, cfg.kmax, cfg.k_fixed)?;
    Ok(Clustering { paths, hierarchy, result })
}

/// Convex-clustering objective at the level where the `k`-cluster cut of
/// the joint hierarchy is formed.
pub fn fusion_objective(c: &Clustering, x: &Array2<f64>, graph: &SimilarityGraph) -> Option<f64> {
    let n = c.hierarchy.n;
    let k = c.result.k;
    let lambda = if k >= n { Some(0.0) } else { c.hierarchy.merges.get(n - k - 1).and_then(|m| m.lambda) }?;
    let total = c
        .paths
        .iter()
        .zip(x.axis_iter(Axis(1)))
        .map(|(p, col)| objective(&col.to_vec(), graph, lambda, &p.evaluate(lambda)))
        .sum();
    Some(total)
}

/// Share of subjects outside the best-overlapping old cluster of their new
/// cluster; zero exactly when the partitions agree.
pub fn label_change_fraction(old: &[usize], new: &[usize]) -> f64 {
    let ko = old.iter().max().map_or(0, |m| m + 1);
    let kn = new.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; ko]; kn];
    for (&o, &c) in old.iter().zip(new) {
        table[c][o] += 1;
    }
    let kept: usize = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    let fwd = 1.0 - kept as f64 / new.len().max(1) as f64;
    // symmetric: a split is a change even when every part maps into one
    // old cluster
    let mut back = vec![0usize; ko];
    for (o, b) in back.iter_mut().enumerate() {
        *b = (0..kn).map(|c| table[c][o]).max().unwrap_or(0);
    }
    let rev = 1.0 - back.iter().sum::<usize>() as f64 / new.len().max(1) as f64;
    fwd.max(rev)
}

fn full_losses(net: &FaeNetwork, input: &NetInput, x: &Array2<f64>, labels: &[usize]) -> Result<(f64, f64, f64)> {
    let yhat = net.reconstruct(input)?;
    let q = net.grid().1;
    let n = input.len() as f64;
    let mut lr = 0.0;
    for (y, yh) in input.y.outer_iter().zip(yhat.outer_iter()) {
        for (g, w) in q.iter().enumerate() {
            lr += w * y.row(g).iter().zip(yh.row(g)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    let (orth, rough) = net.penalties();
    Ok((lr / n, orth + rough, clustering_loss(x.view(), labels)))
}

/// Fits the autoencoder and clusters its embedding.
pub fn fit(ds: &FunctionalDataset, net_cfg: &NetworkConfig, cfg: &FitConfig) -> Result<(FaeNetwork, ClusterResult, FitReport)> {
    cfg.validate()?;
    net_cfg.validate()?;
    let n = ds.len();
    if n < 3 {
        return Err(FaeError::InvalidDataset(format!("need at least 3 subjects to cluster, got {n}")));
    }
    let mut timings = FitTimings::default();

    let t = Instant::now();
    let dist = distance_matrix(ds, &cfg.metric)?;
    let m = match cfg.neighbors {
        Some(m) => m,
        None => select_neighborhood_size(&dist, cfg.neighborhood),
    };
    let graph = build_similarity_graph(&dist, m, cfg.weight_scaling);
    timings.graph = t.elapsed().as_secs_f64();
    log::info!("similarity graph: {} neighbours, {} edges", m, graph.edges.len());

    let net_cfg = NetworkConfig { seed: cfg.seed, ..net_cfg.clone() };
    let net = FaeNetwork::new(&net_cfg, &ds.basis, ds.dims())?;
    let input = net.prepare(ds)?;
    let mut trainer = Trainer::new(net);
    let t = Instant::now();
    trainer.pretrain(&input, cfg.pretrain_epochs.unwrap_or(net_cfg.epochs))?;
    timings.pretrain = t.elapsed().as_secs_f64();
    let pretrain_loss = trainer.history.last().map(|h| h.loss);

    let t = Instant::now();
    let mut x = trainer.net.embed(&input)?;
    let mut clustering = cluster_embedding(&x, &graph, cfg)?;
    timings.cluster += t.elapsed().as_secs_f64();
    let initial_k = clustering.result.k;
    log::info!("pre-trained embedding clusters into K = {initial_k}");

    let mut records = Vec::new();
    let mut below = 0;
    let mut converged = false;
    for iteration in 1..=cfg.max_loops {
        let t = Instant::now();
        trainer.finetune(&input, &clustering.result.labels, cfg.finetune_epochs)?;
        timings.finetune += t.elapsed().as_secs_f64();
        let t = Instant::now();
        x = trainer.net.embed(&input)?;
        let refresh = cfg.cluster_refresh_period.is_some_and(|p| iteration % p == 0);
        let change = if refresh {
            let next = cluster_embedding(&x, &graph, cfg)?;
            let ch = label_change_fraction(&clustering.result.labels, &next.result.labels);
            clustering = next;
            Some(ch)
        } else {
            None
        };
        timings.cluster += t.elapsed().as_secs_f64();
        let (l_r, l_w, l_c) = full_losses(&trainer.net, &input, &x, &clustering.result.labels)?;
        let l_s = if refresh { fusion_objective(&clustering, &x, &graph) } else { None };
        log::debug!("loop {iteration}: L_r {l_r:.4e} L_c {l_c:.4e} K {} change {change:?}", clustering.result.k);
        records.push(LoopRecord { iteration, l_r, l_w, l_c, l_s, k: clustering.result.k, change_fraction: change });
        if let Some(ch) = change {
            below = if ch < cfg.tol { below + 1 } else { 0 };
            if below >= 2 {
                converged = true;
                break;
            }
        }
        if cfg.cluster_refresh_period.is_none() && cfg.finetune_epochs == 0 {
            // nothing can change any more
            break;
        }
    }
    if cfg.cluster_refresh_period.is_none() {
        // labels are fixed after the first pass by construction
        converged = true;
    } else if !converged {
        log::warn!("labels did not stabilise within {} loops", cfg.max_loops);
    }
    let result = clustering.result;
    let report = FitReport {
        neighborhood_size: m,
        graph_edges: graph.edges.len(),
        pretrain_loss,
        initial_k,
        records,
        converged,
        k: result.k,
        labels: result.labels.clone(),
        embedding: x,
        timings,
    };
    Ok((trainer.into_network(), result, report))
}
