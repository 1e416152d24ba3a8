//! The functional autoencoder: a functional encoder layer, a scalar MLP
//! with batch norm and dropout, and three functional decoder layers, all
//! trained with hand-derived gradients.

mod checkpoint;
mod config;
mod layout;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Activation, LossWeights, NetworkConfig};
pub use layout::{Layout, MlpSlots, Segment, SegmentKind};
pub use loss::{clustering_loss, clustering_loss_grad, l1_norm, l1_subgradient, orthogonality_penalty, orthogonality_penalty_grad};
pub use model::{BnMoments, FaeNetwork, ForwardCache, LossBreakdown, Mode, NetInput, BN_EPS, BN_MOMENTUM, MIN_BN_BATCH};
pub use train::{make_batches, pretrain, EpochStats, SgdMomentum, Trainer, DIVERGENCE_FACTOR};

#[cfg(test)]
mod tests;
