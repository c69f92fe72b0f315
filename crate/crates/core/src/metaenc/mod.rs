//! Meta-encoder: a network that emits an instance-specific sparse linear map,
//! its training objective and the sparsity-scheduled training loop.

mod loss;
mod model;
mod persist;
mod train;

pub use loss::{
    cosine_distance_matrix, kl_mean, loss_collinearity, loss_kl, loss_soft_orthogonality,
    loss_stability_jacobian, loss_stability_perturbation, neighbor_dist, total_loss,
    transform_distance_matrix, BatchTargets, Dist, LossParts, LossSpec, LossTerms, LossWeights,
    StabilityMode,
};
pub use model::{
    apply_transform, default_hidden, graph_forward, sparsify_topk, topk_mask, GraphForward,
    MetaEncoder,
};
pub use persist::{EncoderFile, FORMAT_VERSION};
pub use train::{
    loss_and_grad, ramp_alpha, train, EpochRecord, Phase, TrainOutcome, TrainingConfig,
};
