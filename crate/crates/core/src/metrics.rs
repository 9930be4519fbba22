//! Multi-label evaluation: hamming loss, ranking loss, one-error, coverage
//! and average precision.

use crate::dataset::check_label_vector;
use crate::error::{Error, Result};
use crate::model::{label_ranks, predict_labels};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub hamming_loss: f64,
    pub ranking_loss: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub average_precision: f64,
    pub n_evaluated: usize,
}

pub const METRIC_NAMES: [&str; 5] = [
    "hamming_loss",
    "ranking_loss",
    "one_error",
    "coverage",
    "average_precision",
];

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 5] {
        [
            self.hamming_loss,
            self.ranking_loss,
            self.one_error,
            self.coverage,
            self.average_precision,
        ]
    }
}

fn validate(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let k = truth[0].len();
    for (i, (s, y)) in scores.iter().zip(truth).enumerate() {
        check_label_vector(y, k, i)?;
        if s.len() != k {
            return Err(Error::InvalidInstance {
                index: i,
                message: format!("score vector has length {}, expected {k}", s.len()),
            });
        }
    }
    Ok(())
}

struct InstanceMetrics {
    hamming: f64,
    ranking: f64,
    one_error: f64,
    coverage: f64,
    precision: f64,
}

fn instance_metrics(scores: &[f64], y: &[bool]) -> InstanceMetrics {
    let k = y.len();
    let ranks = label_ranks(scores);
    let predicted = predict_labels(scores);
    let hamming = predicted.iter().zip(y).filter(|(p, t)| p != t).count() as f64 / k as f64;

    let relevant: Vec<usize> = (0..k).filter(|&l| y[l]).collect();
    let irrelevant_count = k - relevant.len();

    // Walk labels in rank order, counting irrelevant labels seen so far.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&l| ranks[l]);
    let mut irrelevant_above = 0usize;
    let mut relevant_above = 0usize;
    let mut reversed = 0usize;
    let mut precision = 0.0;
    for &l in &order {
        if y[l] {
            relevant_above += 1;
            reversed += irrelevant_above;
            precision += relevant_above as f64 / ranks[l] as f64;
        } else {
            irrelevant_above += 1;
        }
    }
    let deepest = relevant.iter().map(|&l| ranks[l]).max().unwrap_or(1);
    InstanceMetrics {
        hamming,
        ranking: reversed as f64 / (relevant.len() * irrelevant_count) as f64,
        one_error: if y[order[0]] { 0.0 } else { 1.0 },
        coverage: (deepest - 1) as f64 / k as f64,
        precision: precision / relevant.len() as f64,
    }
}

/// All five metrics, averaged over instances. Every truth vector must be
/// neither empty nor full.
pub fn evaluate_all(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<MetricsReport> {
    validate(scores, truth)?;
    let n = scores.len();
    let mut sums = [0.0; 5];
    for (s, y) in scores.iter().zip(truth) {
        let m = instance_metrics(s, y);
        sums[0] += m.hamming;
        sums[1] += m.ranking;
        sums[2] += m.one_error;
        sums[3] += m.coverage;
        sums[4] += m.precision;
    }
    let n_f = n as f64;
    Ok(MetricsReport {
        hamming_loss: sums[0] / n_f,
        ranking_loss: sums[1] / n_f,
        one_error: sums[2] / n_f,
        coverage: sums[3] / n_f,
        average_precision: sums[4] / n_f,
        n_evaluated: n,
    })
}

pub fn hamming_loss(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(evaluate_all(scores, truth)?.hamming_loss)
}

pub fn ranking_loss(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(evaluate_all(scores, truth)?.ranking_loss)
}

pub fn one_error(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(evaluate_all(scores, truth)?.one_error)
}

pub fn coverage(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(evaluate_all(scores, truth)?.coverage)
}

pub fn average_precision(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(evaluate_all(scores, truth)?.average_precision)
}
