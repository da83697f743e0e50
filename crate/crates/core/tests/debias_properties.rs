use pgd_core::data::{generate_biased_dataset, DatasetSpec};
use pgd_core::debias::{
    ce_from_logits, ce_loss, fc_gradient, gce_loss, grad_norm, per_sample_grad_norms, GceConfig, GradScope, NormSpec,
};
use pgd_core::nn::forward_batch;
use pgd_core::pipelines::{train_biased, TrainConfig};

#[test]
fn gce_tends_to_ce() {
    let cfg = GceConfig { alpha: 1e-8 };
    let mut worst: f64 = 0.0;
    for k in 0..=9900 {
        let p = 0.01 + k as f64 * 1e-4;
        let probs = [p, 0.5 * (1.0 - p), 0.5 * (1.0 - p)];
        worst = worst.max((gce_loss(&probs, 0, cfg) - ce_loss(&probs, 0)).abs());
    }
    assert!(worst < 1e-6, "sup |gce - ce| = {worst}");
}

#[test]
fn trained_model_norms_match_finite_differences_per_sample() {
    let data = generate_biased_dataset(&DatasetSpec {
        n_train: 60,
        n_val: 0,
        n_test: 5,
        rho: 0.1,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs_biased: 2,
        epochs_debiased: 0,
        batch_size: 16,
        hidden: vec![10],
        ..Default::default()
    };
    let mut params = train_biased(&data, &cfg).unwrap().params;
    let view = data.train_view();
    let norms = per_sample_grad_norms(&params, &view, NormSpec::default(), GradScope::FinalLayer).unwrap();
    let head_start = params.num_params() - params.head().weight.len() - params.head().bias.len();
    let h = 1e-6;
    for (i, &norm) in norms.iter().enumerate() {
        let x = view.image(i);
        let t = view.target(i);
        let trace = forward_batch(&params, &[x]).unwrap();
        let analytic = grad_norm(&fc_gradient(&trace, 0, t), NormSpec::default());
        assert!((analytic - norm).abs() <= 1e-12 * analytic.max(1e-300));
        let mut sq = 0.0;
        for k in head_start..params.num_params() {
            let orig = *params.param_mut(k);
            *params.param_mut(k) = orig + h;
            let up = ce_from_logits(forward_batch(&params, &[x]).unwrap().logits(0), t);
            *params.param_mut(k) = orig - h;
            let down = ce_from_logits(forward_batch(&params, &[x]).unwrap().logits(0), t);
            *params.param_mut(k) = orig;
            let g = (up - down) / (2.0 * h);
            sq += g * g;
        }
        let numeric = f64::sqrt(sq);
        assert!(
            (analytic - numeric).abs() <= 1e-6 * analytic,
            "sample {i}: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn biased_model_gives_conflicting_samples_larger_norms() {
    let data = generate_biased_dataset(&DatasetSpec {
        n_train: 3000,
        n_val: 0,
        n_test: 10,
        rho: 0.01,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs_biased: 8,
        hidden: vec![32],
        ..Default::default()
    };
    let biased = train_biased(&data, &cfg).unwrap();
    let norms = per_sample_grad_norms(
        &biased.params,
        &data.train_view(),
        NormSpec::default(),
        GradScope::FinalLayer,
    )
    .unwrap();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let (mut c, mut a) = (0.0, 0.0);
    let (mut nc, mut na) = (0usize, 0usize);
    for (s, n) in data.train.iter().zip(&norms) {
        if s.is_aligned() {
            a += n / max;
            na += 1;
        } else {
            c += n / max;
            nc += 1;
        }
    }
    assert!(nc > 0);
    assert!(c / nc as f64 > a / na as f64);
}
