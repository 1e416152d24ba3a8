//! End-to-end fitting and external agreement scores.

mod fit;
mod scores;

pub use fit::{
    cluster_embedding, fit, fusion_objective, label_change_fraction, Clustering, FitConfig, FitReport, FitTimings, LoopRecord,
};
pub use scores::{ami, ari};
