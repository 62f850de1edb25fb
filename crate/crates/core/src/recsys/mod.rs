//! Rating prediction from ID embeddings fused with cached review histories.
//!
//! The item embedding attends over the user's history and the user embedding
//! over the item's history, each through a stack of residual single-head
//! attention blocks. A two-layer projector maps the concatenation to a
//! rating. Training minimises MSE plus a squared-distance contrastive hinge.

mod analysis;
mod model;
mod train;

pub use analysis::{
    analyze_by_engagement, bucket_metrics, metrics, BucketMetrics, EngagementReport, Metrics, Prediction,
    ENGAGEMENT_EDGES, LENGTH_EDGES,
};
pub use model::{
    contrastive_loss, fuse, AttnBlock, BatchPlan, IdIndex, Interaction, RecModelParams, RecWeights,
};
pub use train::{evaluate, loss_and_grad, LossParts, predict_records, train_recsys, EpochMetrics, RecTrace, RecsysConfig};

#[cfg(test)]
mod tests;
