//! Evaluation metrics and report records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric over an empty set")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("ROC-AUC is undefined with only one class present")]
    SingleClass,
    #[error("labels must be 0 or 1, got {0}")]
    NonBinaryLabel(f64),
}

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != target.len() {
        return Err(MetricError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic, with tied scores
/// contributing one half (midrank convention). O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(MetricError::NonBinaryLabel(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are doubled so midranks stay integral and the sum is exact.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank*2 = i + j + 2
        let midrank2 = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as u128;
        pos_rank_sum2 += midrank2 * pos_in_group;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // U = R_pos - p(p+1)/2 ; 2U = R2 - p(p+1)
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "AUC")]
    Auc,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Mae => "MAE",
            MetricName::Auc => "AUC",
        }
    }

    /// MAE is minimized, AUC maximized.
    pub fn is_better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            MetricName::Mae => candidate < incumbent,
            MetricName::Auc => candidate > incumbent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub metric_name: MetricName,
    pub value: f64,
    pub n: usize,
    pub units: String,
    pub mean_prediction: f64,
    /// Records dropped because they lacked the task label.
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_manifest_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// Full-precision JSON followed by nothing else; see [`Self::summary`] for
    /// the rounded human form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {} = {:.4} {} (n = {}, mean prediction {:.4})",
            self.task, self.metric_name.as_str(), self.value, self.units, self.n, self.mean_prediction
        )
    }
}
