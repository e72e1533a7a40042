use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CareError, Result};

fn metric_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CareError::Metric(msg.into()))
}

/// Index of the largest score, ties going to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    scores: Vec<Vec<f64>>,
    predicted: Vec<usize>,
    truth: Vec<usize>,
    num_classes: usize,
}

impl PredictionSet {
    pub fn new(scores: Vec<Vec<f64>>, truth: Vec<usize>, num_classes: usize) -> Result<Self> {
        if scores.len() != truth.len() {
            return metric_err(format!("{} score vectors for {} labels", scores.len(), truth.len()));
        }
        for (i, (s, &t)) in scores.iter().zip(&truth).enumerate() {
            if s.len() != num_classes {
                return metric_err(format!("sample {i} has {} scores, expected {num_classes}", s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return metric_err(format!("sample {i} has a non-finite score"));
            }
            if t >= num_classes {
                return metric_err(format!("sample {i} has label {t} outside 0..{num_classes}"));
            }
        }
        let predicted = scores.iter().map(|s| argmax(s)).collect();
        Ok(Self {
            scores,
            predicted,
            truth,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    /// `confusion[true][predicted]`.
    pub fn confusion(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0; self.num_classes]; self.num_classes];
        for (&t, &p) in self.truth.iter().zip(&self.predicted) {
            m[t][p] += 1;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub per_class_recall: Vec<f64>,
    pub mca: f64,
}

/// Per-class recall and their unweighted mean (MCA).
pub fn compute_recalls(preds: &PredictionSet) -> Result<RecallSummary> {
    let confusion = preds.confusion();
    let mut per_class_recall = Vec::with_capacity(preds.num_classes);
    for (c, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return metric_err(format!("class {c} has no samples in the ground truth"));
        }
        per_class_recall.push(row[c] as f64 / total as f64);
    }
    let mca = per_class_recall.iter().sum::<f64>() / per_class_recall.len() as f64;
    Ok(RecallSummary { per_class_recall, mca })
}

/// Mann-Whitney AUC of `scores` for the positive set, midranks for ties.
/// `None` when either side is empty.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    /// `None` for classes without positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// One-vs-rest AUC per class, averaged over the classes where it is defined.
pub fn one_vs_rest_auc(preds: &PredictionSet) -> Result<AucSummary> {
    let per_class: Vec<Option<f64>> = (0..preds.num_classes)
        .map(|c| {
            let scores: Vec<f64> = preds.scores.iter().map(|s| s[c]).collect();
            let positive: Vec<bool> = preds.truth.iter().map(|&t| t == c).collect();
            let auc = rank_auc(&scores, &positive);
            if auc.is_none() {
                warn!("AUC of class {c} is undefined (no positives or no negatives); excluded from the mean");
            }
            auc
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return metric_err("AUC is undefined for every class");
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AucSummary { per_class, mean })
}
