//! Multi-level pixel-aligned implicit occupancy model.

pub mod loss;
pub mod model;
pub mod projection;
pub mod sampler;

pub use loss::{loss_from_logits, occupancy_loss, occupancy_loss_grad, outside_ratio, LossValue, PROB_EPS};
pub use model::{
    coarse_encoder_specs, fine_encoder_specs, normal_input_name, parse_normal_input, CoarseModel, CoarseOutput,
    FineConditioning, FineModel, ModelConfig,
};
pub use projection::{index_bilinear, index_bilinear_backward, project, CropWindow};
pub use sampler::{sample_training_points, Level, QueryBatch, SamplerConfig, MAX_RESAMPLES};
