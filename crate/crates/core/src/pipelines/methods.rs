use log::warn;

use crate::data::{BiasedDataset, TrainView};
use crate::debias::{
    norm_records, per_sample_grad_norms, per_sample_losses, reweight_weights, GradNormRecord, Loss,
    SamplingDistribution,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, predict_all, MetricReport};
use crate::nn::ModelParams;
use crate::seed;

use super::engine::{init_params, StageRunner};
use super::{
    BiasedLoss, EpochRecord, JttConfig, Method, RunResult, Selection, SplitSummary, StageKind, Stopwatch, TrainConfig,
};

/// Per-epoch evaluation plus best-validation snapshot.
struct Tracker<'d> {
    data: &'d BiasedDataset,
    stage: StageKind,
    history: Vec<EpochRecord>,
    best: Option<(usize, f64, ModelParams)>,
}

impl<'d> Tracker<'d> {
    fn new(data: &'d BiasedDataset, stage: StageKind) -> Self {
        Self {
            data,
            stage,
            history: Vec::new(),
            best: None,
        }
    }

    fn record(&mut self, epoch: usize, params: &ModelParams, mean_loss: f64) -> Result<()> {
        let train = evaluate(params, &self.data.train, None)?;
        let val = evaluate(params, &self.data.val, None)?;
        let test = evaluate(params, &self.data.test, None)?;
        if !self.data.val.is_empty() && self.best.as_ref().is_none_or(|b| val.overall > b.1) {
            self.best = Some((epoch, val.overall, params.clone()));
        }
        self.history.push(EpochRecord {
            epoch,
            stage: self.stage,
            mean_loss,
            train: SplitSummary::from(&train),
            val: SplitSummary::from(&val),
            test: SplitSummary::from(&test),
        });
        Ok(())
    }

    fn selection(&self, final_val: &MetricReport, final_test: &MetricReport) -> Result<Selection> {
        Ok(match &self.best {
            Some((epoch, val, params)) => Selection {
                epoch: Some(*epoch),
                val_overall: *val,
                test: evaluate(params, &self.data.test, None)?,
            },
            None => Selection {
                epoch: None,
                val_overall: final_val.overall,
                test: final_test.clone(),
            },
        })
    }
}

fn input_dim(view: &TrainView<'_>) -> Result<usize> {
    if view.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    Ok(view.image(0).len())
}

fn classes(data: &BiasedDataset) -> usize {
    data.spec.n_classes
}

fn biased_loss(cfg: &TrainConfig) -> Loss {
    match cfg.biased_loss {
        BiasedLoss::Gce => Loss::Gce(cfg.gce),
        BiasedLoss::CrossEntropy => Loss::CrossEntropy,
    }
}

struct Outcome {
    params: ModelParams,
    tracker_history: Vec<EpochRecord>,
    selection: Selection,
    final_val: MetricReport,
    final_test: MetricReport,
}

fn finish(data: &BiasedDataset, params: ModelParams, tracker: Tracker<'_>) -> Result<Outcome> {
    let final_val = evaluate(&params, &data.val, None)?;
    let final_test = evaluate(&params, &data.test, None)?;
    let selection = tracker.selection(&final_val, &final_test)?;
    Ok(Outcome {
        params,
        tracker_history: tracker.history,
        selection,
        final_val,
        final_test,
    })
}

fn result(method: Method, out: Outcome, clock: &Stopwatch) -> RunResult {
    RunResult {
        method,
        params: out.params,
        history: out.tracker_history,
        biased_history: Vec::new(),
        final_val: out.final_val,
        final_test: out.final_test,
        selected: out.selection,
        biased_test: None,
        biased_params: None,
        grad_norms: Vec::new(),
        sampling: None,
        sample_weights: None,
        error_set_size: None,
        wall_time_secs: clock.secs(),
    }
}

/// Plain CE training with uniform batches for `epochs_biased + epochs_debiased` epochs.
pub fn train_vanilla(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let clock = Stopwatch::start();
    let view = data.train_view();
    let mut params = init_params(cfg, input_dim(&view)?, classes(data), seed::INIT);
    let mut runner = StageRunner::new(cfg, &params, seed::TRAIN);
    let uniform = SamplingDistribution::uniform(view.len());
    let mut tracker = Tracker::new(data, StageKind::Debiased);
    for epoch in 0..cfg.total_epochs() {
        let loss = runner.run_epoch(&mut params, &view, &uniform, None, Loss::CrossEntropy, cfg, epoch)?;
        tracker.record(epoch, &params, loss)?;
    }
    Ok(result(Method::Vanilla, finish(data, params, tracker)?, &clock))
}

/// Output of step 1: the auxiliary model trained to be biased.
#[derive(Debug, Clone)]
pub struct BiasedStage {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub wall_time_secs: f64,
}

/// Step 1: GCE training (or CE, for the ablation) with uniform augmented batches.
pub fn train_biased(data: &BiasedDataset, cfg: &TrainConfig) -> Result<BiasedStage> {
    cfg.validate()?;
    let clock = Stopwatch::start();
    let view = data.train_view();
    let mut params = init_params(cfg, input_dim(&view)?, classes(data), seed::INIT);
    let mut runner = StageRunner::new(cfg, &params, seed::TRAIN);
    let uniform = SamplingDistribution::uniform(view.len());
    let mut tracker = Tracker::new(data, StageKind::Biased);
    let loss = biased_loss(cfg);
    for epoch in 0..cfg.epochs_biased {
        let l = runner.run_epoch(&mut params, &view, &uniform, None, loss, cfg, epoch)?;
        tracker.record(epoch, &params, l)?;
    }
    Ok(BiasedStage {
        params,
        history: tracker.history,
        wall_time_secs: clock.secs(),
    })
}

/// How step 2 scores samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    GradNorm,
    /// Per-sample CE loss at the biased model.
    Loss,
}

/// How step 3 uses the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step3Mode {
    Resample,
    Reweight,
}

fn step3_init(data: &BiasedDataset, cfg: &TrainConfig, biased: &ModelParams) -> ModelParams {
    if cfg.inherit_params {
        biased.clone()
    } else {
        init_params(cfg, biased.input_dim(), classes(data), seed::INIT)
    }
}

fn step3(
    data: &BiasedDataset,
    cfg: &TrainConfig,
    mut params: ModelParams,
    sampler: &SamplingDistribution,
    weights: Option<&[f64]>,
    mut tracker: Option<&mut Tracker<'_>>,
) -> Result<ModelParams> {
    let view = data.train_view();
    if sampler.len() != view.len() {
        return Err(Error::Dimension(format!(
            "sampling distribution covers {} samples, training split has {}",
            sampler.len(),
            view.len()
        )));
    }
    // Fresh velocity: the optimizer state is not inherited from step 1.
    let mut runner = StageRunner::new(cfg, &params, seed::DEBIAS);
    for epoch in 0..cfg.epochs_debiased {
        let l = runner.run_epoch(&mut params, &view, sampler, weights, Loss::CrossEntropy, cfg, epoch)?;
        if let Some(t) = tracker.as_deref_mut() {
            t.record(epoch, &params, l)?;
        }
    }
    Ok(params)
}

/// Step 3 alone: CE training from the biased parameters with batches drawn from `h`.
pub fn train_pgd_step3(
    data: &BiasedDataset,
    cfg: &TrainConfig,
    biased: &ModelParams,
    h: &SamplingDistribution,
) -> Result<ModelParams> {
    step3(data, cfg, step3_init(data, cfg, biased), h, None, None)
}

/// Uniform-batch CE continuation from `params` on the step-3 seed stream.
pub fn train_continuation(data: &BiasedDataset, cfg: &TrainConfig, params: &ModelParams) -> Result<ModelParams> {
    let n = data.train.len();
    step3(
        data,
        cfg,
        step3_init(data, cfg, params),
        &SamplingDistribution::uniform(n),
        None,
        None,
    )
}

fn scores(data: &BiasedDataset, cfg: &TrainConfig, biased: &ModelParams, scoring: Scoring) -> Result<Vec<f64>> {
    let view = data.train_view();
    match scoring {
        Scoring::GradNorm => per_sample_grad_norms(biased, &view, cfg.norm, cfg.grad_scope),
        Scoring::Loss => per_sample_losses(biased, &view),
    }
}

/// Steps 2 and 3 given a trained biased model.
pub fn debias_from_biased(
    data: &BiasedDataset,
    cfg: &TrainConfig,
    biased: &BiasedStage,
    scoring: Scoring,
    mode: Step3Mode,
) -> Result<RunResult> {
    cfg.validate()?;
    let clock = Stopwatch::start();
    let raw = scores(data, cfg, &biased.params, scoring)?;
    let records = norm_records(&raw);
    let h = SamplingDistribution::from_scores(&raw)?;
    let (sampler, weights) = match mode {
        Step3Mode::Resample => (h.clone(), None),
        Step3Mode::Reweight => (
            SamplingDistribution::uniform(raw.len()),
            Some(reweight_weights(&raw, raw.len())?),
        ),
    };
    let mut tracker = Tracker::new(data, StageKind::Debiased);
    let params = step3(
        data,
        cfg,
        step3_init(data, cfg, &biased.params),
        &sampler,
        weights.as_deref(),
        Some(&mut tracker),
    )?;
    let method = match (scoring, mode) {
        (Scoring::GradNorm, Step3Mode::Resample) => Method::Pgd,
        (Scoring::GradNorm, Step3Mode::Reweight) => Method::PgdReweight,
        (Scoring::Loss, _) => Method::LossResample,
    };
    let mut out = result(method, finish(data, params, tracker)?, &clock);
    out.wall_time_secs += biased.wall_time_secs;
    out.biased_history = biased.history.clone();
    out.biased_test = Some(biased_train_report(data, &biased.params, &records)?);
    out.biased_params = Some(biased.params.clone());
    out.grad_norms = records;
    out.sampling = Some(h);
    out.sample_weights = weights;
    Ok(out)
}

/// Test-split report of the biased model; the histogram covers the training
/// split's normalized scores.
fn biased_train_report(data: &BiasedDataset, params: &ModelParams, records: &[GradNormRecord]) -> Result<MetricReport> {
    let mut test = evaluate(params, &data.test, None)?;
    let normalized: Vec<f64> = records.iter().map(|r| r.normalized_norm).collect();
    test.histogram = evaluate(params, &data.train, Some(&normalized))?.histogram;
    Ok(test)
}

/// Biased model, gradient-norm sampling distribution, resampled debiased model.
pub fn train_pgd(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    let biased = train_biased(data, cfg)?;
    debias_from_biased(data, cfg, &biased, Scoring::GradNorm, Step3Mode::Resample)
}

/// Step 3 with uniform batches and loss weights `n * h_i` instead of resampling.
pub fn train_pgd_reweight(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    let biased = train_biased(data, cfg)?;
    debias_from_biased(data, cfg, &biased, Scoring::GradNorm, Step3Mode::Reweight)
}

/// Resampling proportional to the biased model's per-sample CE loss.
pub fn train_loss_resample(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    let biased = train_biased(data, cfg)?;
    debias_from_biased(data, cfg, &biased, Scoring::Loss, Step3Mode::Resample)
}

/// Interleaved variant: every round trains the biased model one epoch,
/// recomputes `h`, then trains the debiased model one epoch on `h`.
/// Runs `epochs_debiased` rounds.
pub fn train_pgd_single_stage(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let clock = Stopwatch::start();
    let view = data.train_view();
    let uniform = SamplingDistribution::uniform(view.len());
    let mut biased = init_params(cfg, input_dim(&view)?, classes(data), seed::INIT);
    let mut biased_runner = StageRunner::new(cfg, &biased, seed::TRAIN);
    let mut debiased: Option<(ModelParams, StageRunner)> = None;
    let mut tracker = Tracker::new(data, StageKind::Debiased);
    let mut last = None;
    for epoch in 0..cfg.epochs_debiased {
        biased_runner.run_epoch(&mut biased, &view, &uniform, None, biased_loss(cfg), cfg, epoch)?;
        let raw = per_sample_grad_norms(&biased, &view, cfg.norm, cfg.grad_scope)?;
        let h = SamplingDistribution::from_scores(&raw)?;
        let (params, runner) = debiased.get_or_insert_with(|| {
            let p = step3_init(data, cfg, &biased);
            let r = StageRunner::new(cfg, &p, seed::DEBIAS);
            (p, r)
        });
        let l = runner.run_epoch(params, &view, &h, None, Loss::CrossEntropy, cfg, epoch)?;
        tracker.record(epoch, params, l)?;
        last = Some((raw, h));
    }
    let params = match debiased {
        Some((p, _)) => p,
        None => step3_init(data, cfg, &biased),
    };
    let mut out = result(Method::PgdSingleStage, finish(data, params, tracker)?, &clock);
    if let Some((raw, h)) = last {
        let records = norm_records(&raw);
        out.biased_test = Some(biased_train_report(data, &biased, &records)?);
        out.grad_norms = records;
        out.sampling = Some(h);
    }
    out.biased_params = Some(biased);
    Ok(out)
}

/// Just Train Twice: CE model for `epochs_biased` epochs, then a fresh model
/// on the training set with its misclassified samples repeated
/// `ceil(lambda_up) - 1` extra times, for `epochs_biased + epochs_debiased` epochs.
pub fn train_jtt(data: &BiasedDataset, cfg: &TrainConfig, jtt: &JttConfig) -> Result<RunResult> {
    cfg.validate()?;
    let lambda = jtt.resolve(data.spec.rho)?;
    let clock = Stopwatch::start();
    let view = data.train_view();
    let dim = input_dim(&view)?;
    let mut first = init_params(cfg, dim, classes(data), seed::INIT);
    let mut runner = StageRunner::new(cfg, &first, seed::TRAIN);
    let uniform = SamplingDistribution::uniform(view.len());
    for epoch in 0..cfg.epochs_biased {
        runner.run_epoch(&mut first, &view, &uniform, None, Loss::CrossEntropy, cfg, epoch)?;
    }
    let preds = predict_all(&first, &data.train)?;
    let error_set: Vec<usize> = preds
        .iter()
        .zip(view.targets())
        .enumerate()
        .filter(|(_, (p, t))| p != t)
        .map(|(i, _)| i)
        .collect();
    if error_set.is_empty() {
        warn!("JTT error set is empty; second stage reduces to vanilla training");
    }
    let repeats = (lambda.ceil() as usize).saturating_sub(1);
    let extra: Vec<usize> = (0..repeats).flat_map(|_| error_set.iter().copied()).collect();
    let upsampled = view.with_repeats(&extra);

    let mut params = init_params(cfg, dim, classes(data), seed::INIT);
    let mut runner = StageRunner::new(cfg, &params, seed::TRAIN);
    let uniform = SamplingDistribution::uniform(upsampled.len());
    let mut tracker = Tracker::new(data, StageKind::Debiased);
    for epoch in 0..cfg.total_epochs() {
        let l = runner.run_epoch(&mut params, &upsampled, &uniform, None, Loss::CrossEntropy, cfg, epoch)?;
        tracker.record(epoch, &params, l)?;
    }
    let mut out = result(Method::Jtt, finish(data, params, tracker)?, &clock);
    out.biased_test = Some(evaluate(&first, &data.test, None)?);
    out.biased_params = Some(first);
    out.error_set_size = Some(error_set.len());
    Ok(out)
}

/// LfF relative difficulty `CE_b / (CE_b + CE_d)`; 0.5 when both losses vanish.
pub(crate) fn relative_difficulty(ce_biased: f64, ce_debiased: f64) -> f64 {
    let denom = ce_biased + ce_debiased;
    if denom > 0.0 {
        ce_biased / denom
    } else {
        0.5
    }
}

/// Learning from Failure: a GCE-trained biased model and a debiased model
/// trained side by side on the same batches; the debiased CE of each sample is
/// weighted by its relative difficulty.
pub fn train_lff(data: &BiasedDataset, cfg: &TrainConfig) -> Result<RunResult> {
    use crate::debias::ce_from_logits;
    use crate::nn::forward_batch;

    cfg.validate()?;
    let clock = Stopwatch::start();
    let view = data.train_view();
    let dim = input_dim(&view)?;
    let mut biased = init_params(cfg, dim, classes(data), seed::INIT);
    let mut debiased = init_params(cfg, dim, classes(data), seed::AUX_INIT);
    let mut runner_d = StageRunner::new(cfg, &debiased, seed::TRAIN);
    let mut runner_b = StageRunner::new(cfg, &biased, seed::AUX_INIT);
    let uniform = SamplingDistribution::uniform(view.len());
    let mut tracker = Tracker::new(data, StageKind::Debiased);
    for epoch in 0..cfg.total_epochs() {
        let mut total = 0.0;
        for (idx, rows) in runner_d.epoch_batches(&view, &uniform, cfg, epoch) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| view.target(i)).collect();
            let trace_b = forward_batch(&biased, &refs)?;
            let trace_d = forward_batch(&debiased, &refs)?;
            let w: Vec<f64> = targets
                .iter()
                .enumerate()
                .map(|(b, &t)| {
                    relative_difficulty(
                        ce_from_logits(trace_b.logits(b), t),
                        ce_from_logits(trace_d.logits(b), t),
                    )
                })
                .collect();
            let lam = vec![cfg.lff_lambda; targets.len()];
            runner_b.update(&mut biased, &trace_b, &targets, Loss::Gce(cfg.gce), Some(&lam), epoch)?;
            total += runner_d.update(&mut debiased, &trace_d, &targets, Loss::CrossEntropy, Some(&w), epoch)?;
        }
        tracker.record(epoch, &debiased, total / view.len() as f64)?;
    }
    let mut out = result(Method::Lff, finish(data, debiased, tracker)?, &clock);
    out.biased_test = Some(evaluate(&biased, &data.test, None)?);
    out.biased_params = Some(biased);
    Ok(out)
}

/// Full pipeline for each GCE `alpha`; each result carries the biased model's test report.
pub fn gce_alpha_sweep(data: &BiasedDataset, cfg: &TrainConfig, alphas: &[f64]) -> Result<Vec<(f64, RunResult)>> {
    alphas
        .iter()
        .map(|&alpha| {
            let mut c = cfg.clone();
            c.gce.alpha = alpha;
            train_pgd(data, &c).map(|r| (alpha, r))
        })
        .collect()
}

pub fn train_method(method: Method, data: &BiasedDataset, cfg: &TrainConfig, jtt: &JttConfig) -> Result<RunResult> {
    match method {
        Method::Vanilla => train_vanilla(data, cfg),
        Method::Pgd => train_pgd(data, cfg),
        Method::PgdSingleStage => train_pgd_single_stage(data, cfg),
        Method::PgdReweight => train_pgd_reweight(data, cfg),
        Method::LossResample => train_loss_resample(data, cfg),
        Method::Jtt => train_jtt(data, cfg, jtt),
        Method::Lff => train_lff(data, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_difficulty_limits() {
        assert_eq!(relative_difficulty(1.3, 1.3), 0.5);
        assert_eq!(relative_difficulty(0.0, 0.0), 0.5);
        assert!(relative_difficulty(1e-12, 2.0) < 1e-11);
        assert!((relative_difficulty(3.0, 1.0) - 0.75).abs() < 1e-15);
    }
}
