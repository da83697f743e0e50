//! Losses, per-sample final-layer gradient norms, and the importance
//! sampling distribution built from them.

mod gradnorm;
mod loss;
mod sampling;

pub use gradnorm::{
    factorized_norm, fc_gradient, grad_norm, norm_records, norm_records_csv, per_sample_grad_norms, per_sample_losses,
    vector_norm, FcGrad, GradNormRecord, GradScope, NormOrder, NormSpec,
};
pub use loss::{
    ce_from_logits, ce_logit_grad, ce_loss, clamp_events, gce_from_logits, gce_logit_grad, gce_loss, GceConfig, Loss,
    PROB_FLOOR,
};
pub use sampling::{draw_batch, reweight_weights, sampling_distribution, SamplingDistribution};
