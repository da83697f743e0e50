//! Accuracy breakdowns and gradient-norm histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::Result;
use crate::nn::{forward_batch, ModelParams};

const EVAL_CHUNK: usize = 512;
pub const HISTOGRAM_BINS: usize = 10;

/// Counts of normalized gradient norms in bins `[0.0,0.1) ... [0.9,1.0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormHistogram {
    pub edges: Vec<f64>,
    pub aligned: Vec<usize>,
    pub conflicting: Vec<usize>,
}

impl NormHistogram {
    pub fn total(&self) -> usize {
        self.aligned.iter().sum::<usize>() + self.conflicting.iter().sum::<usize>()
    }
}

/// Bin of a normalized norm; right-open bins except the last, which is closed.
pub fn histogram_bin(v: f64) -> usize {
    let b = (v * HISTOGRAM_BINS as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(HISTOGRAM_BINS - 1)
    }
}

pub fn norm_histogram(normalized: &[f64], aligned: &[bool]) -> NormHistogram {
    let mut hist = NormHistogram {
        edges: (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect(),
        aligned: vec![0; HISTOGRAM_BINS],
        conflicting: vec![0; HISTOGRAM_BINS],
    };
    for (&v, &a) in normalized.iter().zip(aligned) {
        let b = histogram_bin(v);
        if a {
            hist.aligned[b] += 1;
        } else {
            hist.conflicting[b] += 1;
        }
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub overall: f64,
    pub n_aligned: usize,
    pub n_conflicting: usize,
    /// `None` when the subgroup is empty.
    pub aligned: Option<f64>,
    pub conflicting: Option<f64>,
    /// Minimum accuracy over non-empty (target, primary bias value) groups.
    pub worst_group: f64,
    pub per_class: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub histogram: Option<NormHistogram>,
}

fn ratio(hit: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Scores a fixed set of predictions.
pub fn evaluate_predictions(predictions: &[usize], samples: &[LabeledSample], n_classes: usize) -> MetricReport {
    assert_eq!(predictions.len(), samples.len());
    let mut hits = 0;
    let (mut al_n, mut al_hit, mut cf_n, mut cf_hit) = (0, 0, 0, 0);
    let mut class = vec![(0usize, 0usize); n_classes];
    let mut groups: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (&pred, s) in predictions.iter().zip(samples) {
        let ok = pred == s.target;
        hits += ok as usize;
        if s.is_aligned() {
            al_n += 1;
            al_hit += ok as usize;
        } else {
            cf_n += 1;
            cf_hit += ok as usize;
        }
        if s.target < n_classes {
            class[s.target].0 += 1;
            class[s.target].1 += ok as usize;
        }
        let bias = s.bias_values.first().copied().unwrap_or(s.target);
        let g = groups.entry((s.target, bias)).or_default();
        g.0 += 1;
        g.1 += ok as usize;
    }
    let worst_group = groups
        .values()
        .map(|&(n, h)| h as f64 / n as f64)
        .fold(f64::INFINITY, f64::min);
    MetricReport {
        n: samples.len(),
        overall: ratio(hits, samples.len()).unwrap_or(0.0),
        n_aligned: al_n,
        n_conflicting: cf_n,
        aligned: ratio(al_hit, al_n),
        conflicting: ratio(cf_hit, cf_n),
        worst_group: if worst_group.is_finite() { worst_group } else { 0.0 },
        per_class: class.iter().map(|&(n, h)| ratio(h, n)).collect(),
        histogram: None,
    }
}

pub fn predict_all(params: &ModelParams, samples: &[LabeledSample]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(|s| s.image.data()).collect();
        preds.extend(forward_batch(params, &rows)?.predictions());
    }
    Ok(preds)
}

/// Accuracy breakdown of `params` on a split; attaches a histogram when
/// normalized gradient norms for the same samples are given.
pub fn evaluate(
    params: &ModelParams,
    samples: &[LabeledSample],
    normalized_norms: Option<&[f64]>,
) -> Result<MetricReport> {
    let preds = predict_all(params, samples)?;
    let mut report = evaluate_predictions(&preds, samples, params.n_classes());
    if let Some(norms) = normalized_norms {
        let aligned: Vec<bool> = samples.iter().map(|s| s.is_aligned()).collect();
        report.histogram = Some(norm_histogram(norms, &aligned));
    }
    Ok(report)
}

/// Probability that a random positive outranks a random negative (ties count half).
pub fn auroc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&v| (v, true))
        .chain(negative.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U via average ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}
