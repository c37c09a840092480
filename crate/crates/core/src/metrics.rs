//! ROC-AUC, Hanley-McNeil confidence intervals and the weight-norm
//! convergence diagnostic.

use serde::{Deserialize, Serialize};

use crate::nn::MlpModel;
use crate::{Error, Result};

/// z-score of a symmetric 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub theta: f64,
    pub n_samples: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_counts(y: &[f64], scores: &[f64]) -> Result<(usize, usize)> {
    if y.len() != scores.len() {
        return Err(Error::Input(format!("{} labels but {} scores", y.len(), scores.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("label {bad} is not in {{0, 1}}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1.0).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!("need both classes, got {n_pos} positive and {n_neg} negative")));
    }
    Ok((n_pos, n_neg))
}

/// Mann-Whitney AUC via rank sums, ties receiving their mid-rank.
pub fn roc_auc(y: &[f64], scores: &[f64]) -> Result<AucEstimate> {
    let (n_pos, n_neg) = class_counts(y, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean.
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| y[i] == 1.0).count();
        pos_rank_sum += mid * pos_in_group as f64;
        start = end;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(AucEstimate { theta: u / (n_pos as f64 * n_neg as f64), n_samples: y.len(), n_pos, n_neg })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for decreasing thresholds, starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(y: &[f64], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = class_counts(y, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if y[order[k]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint { threshold, fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
    }
    Ok(points)
}

pub fn roc_to_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Hanley-McNeil standard error of an AUC estimate and its symmetric 95%
/// interval `theta +/- 1.96 SE`. Bounds are not clipped to `[0, 1]`.
pub fn hanley_mcneil_ci(theta: f64, n: usize) -> Result<ConfidenceInterval> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::DegenerateVariance(format!("theta must lie strictly inside (0, 1), got {theta}")));
    }
    if n < 2 {
        return Err(Error::Input(format!("sample size must be at least 2, got {n}")));
    }
    let q1 = theta / (2.0 - theta);
    let q2 = 2.0 * theta * theta / (1.0 + theta);
    let nf = n as f64;
    let var = (theta * (1.0 - theta) + (nf - 1.0) * (q1 + q2 - 2.0 * theta * theta)) / (nf * nf);
    let se = var.sqrt();
    Ok(ConfidenceInterval { lower: theta - Z_95 * se, upper: theta + Z_95 * se, se, level: 0.95 })
}

/// `|rms(w_cent) - mean_i rms(w_i)|` where `rms(w) = ||w||_2 / sqrt(dim w)`.
pub fn convergence_metric(centralized: &MlpModel, nodes: &[&MlpModel]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Input("convergence metric needs at least one node model".into()));
    }
    Ok(rms_gap(centralized.rms_norm(), nodes))
}

fn rms_gap(cent_rms: f64, nodes: &[&MlpModel]) -> f64 {
    let mean = nodes.iter().map(|m| m.rms_norm()).sum::<f64>() / nodes.len() as f64;
    (cent_rms - mean).abs()
}

/// RMS norms of the centralized model after each of its iterations, used to
/// score distributed rounds against the baseline at the same step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBaseline {
    pub rms_per_iteration: Vec<f64>,
}

impl ConvergenceBaseline {
    /// Compares round `round` (1-based) with the centralized model at the same
    /// iteration, or its final model if it stopped earlier.
    pub fn metric_at(&self, round: usize, nodes: &[&MlpModel]) -> Result<f64> {
        if nodes.is_empty() {
            return Err(Error::Input("convergence metric needs at least one node model".into()));
        }
        let idx = round.clamp(1, self.rms_per_iteration.len().max(1)) - 1;
        let cent = *self
            .rms_per_iteration
            .get(idx)
            .ok_or_else(|| Error::Input("centralized baseline trace is empty".into()))?;
        Ok(rms_gap(cent, nodes))
    }
}

/// Mean and population standard deviation of per-trial values.
pub fn averaged_auc_over_trials(thetas: &[f64]) -> Result<(f64, f64)> {
    mean_and_sd(thetas)
}

pub fn mean_and_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Input("no trials to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
