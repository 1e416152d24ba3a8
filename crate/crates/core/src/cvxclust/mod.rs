//! Convex clustering of the latent embedding along its exact solution path.

mod fista;
mod hierarchy;
mod homotopy;
mod validate;

pub use fista::{fista_warm_start, objective, FistaOptions, FistaResult};
pub use hierarchy::{joint_hierarchy, relabel, HierarchyMerge, MergeHierarchy};
pub use homotopy::{
    homotopy_path, homotopy_path_warm, homotopy_paths, next_breakpoint, CentroidPath, MergeEvent, PathNode, TIE_TOL,
};
pub use validate::{calinski_harabasz, davies_bouldin, select_partition, silhouette, ClusterResult, PartitionScores};

use serde::{Deserialize, Serialize};

use crate::metrics::SimilarityGraph;

/// Agreement between a path and FISTA at a set of `λ` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCheck {
    pub max_deviation: f64,
    /// `λ` values where the deviation exceeded the split threshold.
    pub suspected_splits: Vec<f64>,
}

/// Deviation above which a disagreement is reported as a suspected split.
pub const SPLIT_THRESHOLD: f64 = 1e-3;

/// Re-solves the problem with FISTA at each `λ` and compares it with the
/// path.
pub fn verify_path(x: &[f64], graph: &SimilarityGraph, path: &CentroidPath, lambdas: &[f64], opts: &FistaOptions) -> PathCheck {
    let mut check = PathCheck { max_deviation: 0.0, suspected_splits: Vec::new() };
    for &lam in lambdas {
        let u = path.evaluate(lam);
        let f = fista_warm_start(x, graph, lam, opts);
        let dev = u.iter().zip(&f.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dev > SPLIT_THRESHOLD {
            log::warn!("suspected split in dimension {} at lambda {lam:.6e}: deviation {dev:.3e}", path.dim);
            check.suspected_splits.push(lam);
        }
        check.max_deviation = check.max_deviation.max(dev);
    }
    check
}
