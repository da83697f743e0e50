use std::borrow::Cow;

use crate::data::{augment_seeded, TrainView};
use crate::debias::{draw_batch, Loss, SamplingDistribution};
use crate::error::{Error, Result};
use crate::nn::{backward, forward_batch, sgd_step, ForwardTrace, ModelParams, OptimizerState};
use crate::seed;

use super::TrainConfig;

/// Sample indices plus the (possibly augmented) images of one batch.
pub type Batch<'v> = (Vec<usize>, Vec<Cow<'v, [f64]>>);

/// Fresh parameters for `cfg`'s architecture from the given seed stream.
pub fn init_params(cfg: &TrainConfig, input_dim: usize, classes: usize, stream: u64) -> ModelParams {
    let mut rng = seed::stream(cfg.seed, stream);
    ModelParams::mlp(input_dim, &cfg.hidden, classes, &mut rng)
}

/// Owns the batch-drawing stream and optimizer state of one model's training.
/// One epoch is `n` i.i.d. draws from the sampler, in batches of `batch_size`.
pub struct StageRunner {
    rng: seed::StreamRng,
    aug_seed: u64,
    opt: OptimizerState,
}

impl StageRunner {
    pub fn new(cfg: &TrainConfig, params: &ModelParams, stream: u64) -> Self {
        Self {
            rng: seed::stream(cfg.seed, stream),
            aug_seed: seed::derive(cfg.seed, stream),
            opt: OptimizerState::new(cfg.optimizer, params),
        }
    }

    /// Draws and augments the batches of one epoch.
    pub fn epoch_batches<'v>(
        &mut self,
        view: &TrainView<'v>,
        sampler: &SamplingDistribution,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Vec<Batch<'v>> {
        let n = view.len();
        let size = view.image_size();
        let mut out = Vec::with_capacity(n.div_ceil(cfg.batch_size));
        let mut drawn = 0;
        while drawn < n {
            let bs = cfg.batch_size.min(n - drawn);
            let idx = draw_batch(sampler, bs, &mut self.rng);
            let rows = idx
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    if cfg.augmentation.is_identity() {
                        Cow::Borrowed(view.image(i))
                    } else {
                        Cow::Owned(augment_seeded(
                            view.image(i),
                            size,
                            &cfg.augmentation,
                            self.aug_seed,
                            epoch,
                            drawn + j,
                        ))
                    }
                })
                .collect();
            out.push((idx, rows));
            drawn += bs;
        }
        out
    }

    /// One epoch; `weights` (indexed like the view) scale per-sample losses.
    /// Returns the mean per-sample loss.
    #[allow(clippy::too_many_arguments)]
    pub fn run_epoch(
        &mut self,
        params: &mut ModelParams,
        view: &TrainView<'_>,
        sampler: &SamplingDistribution,
        weights: Option<&[f64]>,
        loss: Loss,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (idx, rows) in self.epoch_batches(view, sampler, cfg, epoch) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
            let trace = forward_batch(params, &refs)?;
            let targets: Vec<usize> = idx.iter().map(|&i| view.target(i)).collect();
            let w: Option<Vec<f64>> = weights.map(|w| idx.iter().map(|&i| w[i]).collect());
            total += self.update(params, &trace, &targets, loss, w.as_deref(), epoch)?;
        }
        Ok(total / view.len() as f64)
    }

    /// Gradient step on the batch mean of (optionally weighted) losses.
    /// Returns the unweighted loss sum.
    pub fn update(
        &mut self,
        params: &mut ModelParams,
        trace: &ForwardTrace,
        targets: &[usize],
        loss: Loss,
        weights: Option<&[f64]>,
        epoch: usize,
    ) -> Result<f64> {
        let bs = trace.batch_size();
        let c = params.n_classes();
        let mut grads = Vec::with_capacity(bs * c);
        let mut sum = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let logits = trace.logits(b);
            sum += loss.value(logits, t);
            let scale = weights.map_or(1.0, |w| w[b]) / bs as f64;
            grads.extend(loss.logit_grad(logits, t).into_iter().map(|g| g * scale));
        }
        if !sum.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("batch loss became {sum}"),
            });
        }
        let g = backward(params, trace, &grads)?;
        sgd_step(params, &g, &mut self.opt, epoch).map_err(|e| match e {
            Error::NonFinite { layer } => Error::Diverged {
                epoch,
                detail: format!("non-finite gradient in layer {layer}"),
            },
            other => other,
        })?;
        Ok(sum)
    }
}
