//! Training and evaluation arithmetic: AUROC, inverse-prevalence class
//! weights, weighted binary cross-entropy, the cosine learning-rate
//! multiplier and hard-vote ensembling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{Diagnosis, DiagnosisVector};

pub const N_LABELS: usize = 5;

/// Probability clamp used by [`weighted_bce`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("single class present{}", .0.map(|d| format!(" for label {d}")).unwrap_or_default())]
    SingleClass(Option<Diagnosis>),
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("label {0} has no positive samples")]
    ZeroPositives(Diagnosis),
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("empty vote matrix")]
    NoModels,
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`, from rank sums with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass(None));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group spanning ranks i+1..=j has midrank
    // (i+1+j)/2, so twice the midrank is an integer.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_midrank = (i + 1 + j) as u64;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum_pos += twice_midrank * pos_in_group;
        i = j;
    }
    // 2U = 2R⁺ − n⁺(n⁺+1)
    let twice_u = twice_rank_sum_pos - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-sample scores for the five labels with aligned ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredPredictions {
    pub scores: Vec<[f64; N_LABELS]>,
    pub truth: Vec<DiagnosisVector>,
}

impl ScoredPredictions {
    pub fn column(&self, label: Diagnosis) -> (Vec<f64>, Vec<bool>) {
        let k = label.index();
        (
            self.scores.iter().map(|s| s[k]).collect(),
            self.truth.iter().map(|t| t.0[k]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocSummary {
    pub per_label: [f64; N_LABELS],
    pub macro_auroc: f64,
}

/// Per-label AUROCs and their unweighted mean.
pub fn macro_auroc(preds: &ScoredPredictions) -> Result<AurocSummary, MetricsError> {
    if preds.scores.len() != preds.truth.len() {
        return Err(MetricsError::LengthMismatch(preds.scores.len(), preds.truth.len()));
    }
    let mut per_label = [0.0; N_LABELS];
    for d in Diagnosis::ALL {
        let (s, l) = preds.column(d);
        per_label[d.index()] = auroc(&s, &l).map_err(|e| match e {
            MetricsError::SingleClass(_) => MetricsError::SingleClass(Some(d)),
            other => other,
        })?;
    }
    let macro_auroc = per_label.iter().sum::<f64>() / N_LABELS as f64;
    Ok(AurocSummary {
        per_label,
        macro_auroc,
    })
}

/// Positive-class loss weights, one per label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; N_LABELS]);

/// `weight_k = total / count_k`, the inverse of each label's positive rate.
pub fn positive_weights(counts: [u64; N_LABELS], total: u64) -> Result<ClassWeights, MetricsError> {
    let mut w = [0.0; N_LABELS];
    for d in Diagnosis::ALL {
        let c = counts[d.index()];
        if c == 0 {
            return Err(MetricsError::ZeroPositives(d));
        }
        if c > total {
            return Err(MetricsError::InvalidCount(format!(
                "{d}: {c} positives exceeds total {total}"
            )));
        }
        w[d.index()] = total as f64 / c as f64;
    }
    Ok(ClassWeights(w))
}

/// Positive counts per label over a set of label vectors.
pub fn positive_counts<'a>(labels: impl IntoIterator<Item = &'a DiagnosisVector>) -> ([u64; N_LABELS], u64) {
    let mut counts = [0u64; N_LABELS];
    let mut total = 0;
    for l in labels {
        total += 1;
        for (c, &on) in counts.iter_mut().zip(l.0.iter()) {
            *c += on as u64;
        }
    }
    (counts, total)
}

/// `−[w·y·ln p + (1−y)·ln(1−p)]` with `p` clamped to `[ε, 1−ε]`.
pub fn weighted_bce(prob: f64, label: bool, pos_weight: f64) -> f64 {
    let p = prob.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -pos_weight * p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean of [`weighted_bce`] over every sample and label.
pub fn batch_weighted_bce(
    probs: &[[f64; N_LABELS]],
    labels: &[DiagnosisVector],
    weights: &ClassWeights,
) -> Result<f64, MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        for k in 0..N_LABELS {
            acc += weighted_bce(p[k], y.0[k], weights.0[k]);
        }
    }
    Ok(acc / (probs.len() * N_LABELS) as f64)
}

/// Learning-rate multiplier `½(1 + cos(2π·cycles·progress))`.
pub fn cosine_lambda(progress: f64, num_cycles: f64) -> f64 {
    0.5 * (1.0 + (2.0 * PI * num_cycles * progress).cos())
}

/// `k` models × `n` samples of binary votes for each label.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    pub votes: Vec<Vec<[bool; N_LABELS]>>,
}

impl VoteMatrix {
    /// Thresholds each model's probabilities (`p >= threshold` votes 1).
    pub fn from_probabilities(models: &[Vec<[f64; N_LABELS]>], threshold: f64) -> Self {
        VoteMatrix {
            votes: models
                .iter()
                .map(|m| m.iter().map(|p| p.map(|v| v >= threshold)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub predictions: Vec<[bool; N_LABELS]>,
    /// Fraction of models voting positive.
    pub scores: Vec<[f64; N_LABELS]>,
}

/// Majority vote: positive iff at least `⌈(k+1)/2⌉` models agree, so even-k
/// ties resolve negative.
pub fn hard_vote(votes: &VoteMatrix) -> Result<VoteResult, MetricsError> {
    let k = votes.votes.len();
    if k == 0 {
        return Err(MetricsError::NoModels);
    }
    let n = votes.votes[0].len();
    if let Some(bad) = votes.votes.iter().find(|m| m.len() != n) {
        return Err(MetricsError::LengthMismatch(bad.len(), n));
    }
    let needed = (k + 2) / 2; // ⌈(k+1)/2⌉
    let mut predictions = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut count = [0usize; N_LABELS];
        for m in &votes.votes {
            for (c, &v) in count.iter_mut().zip(m[i].iter()) {
                *c += v as usize;
            }
        }
        predictions.push(count.map(|c| c >= needed));
        scores.push(count.map(|c| c as f64 / k as f64));
    }
    Ok(VoteResult {
        predictions,
        scores,
    })
}

/// Per-sample mean of the models' soft probabilities.
pub fn mean_probabilities(models: &[Vec<[f64; N_LABELS]>]) -> Result<Vec<[f64; N_LABELS]>, MetricsError> {
    let k = models.len();
    if k == 0 {
        return Err(MetricsError::NoModels);
    }
    let n = models[0].len();
    let mut out = vec![[0.0; N_LABELS]; n];
    for m in models {
        if m.len() != n {
            return Err(MetricsError::LengthMismatch(m.len(), n));
        }
        for (acc, p) in out.iter_mut().zip(m) {
            for j in 0..N_LABELS {
                acc[j] += p[j];
            }
        }
    }
    for acc in &mut out {
        for v in acc.iter_mut() {
            *v /= k as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auroc(&s, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&s, &[false, false, true, true]).unwrap(), 0.0);
        let s = [0.7, 0.3, 0.5, 0.2];
        assert_eq!(auroc(&s, &[true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn auroc_errors() {
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass(None)));
        assert_eq!(auroc(&[0.1], &[true, false]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(auroc(&[0.1, f64::NAN], &[true, false]), Err(MetricsError::NonFinite(1)));
    }

    fn preds(cols: [(Vec<f64>, Vec<bool>); 5]) -> ScoredPredictions {
        let n = cols[0].0.len();
        ScoredPredictions {
            scores: (0..n).map(|i| std::array::from_fn(|k| cols[k].0[i])).collect(),
            truth: (0..n).map(|i| DiagnosisVector(std::array::from_fn(|k| cols[k].1[i]))).collect(),
        }
    }

    #[test]
    fn macro_is_unweighted_mean() {
        let perfect = (vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]);
        let inverted = (vec![0.9, 0.8, 0.2, 0.1], vec![false, false, true, true]);
        let half = (vec![0.7, 0.3, 0.5, 0.2], vec![true, false, false, true]);
        let p = preds([perfect.clone(), perfect.clone(), perfect.clone(), perfect.clone(), perfect.clone()]);
        assert_eq!(macro_auroc(&p).unwrap().macro_auroc, 1.0);
        let p = preds([perfect, inverted, half.clone(), half.clone(), half]);
        let s = macro_auroc(&p).unwrap();
        assert_eq!(s.per_label, [1.0, 0.0, 0.5, 0.5, 0.5]);
        assert_eq!(s.macro_auroc, 0.5);
    }

    #[test]
    fn macro_names_single_class_label() {
        let ok = (vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]);
        let all_pos = (vec![0.9, 0.8, 0.2, 0.1], vec![true; 4]);
        let p = preds([ok.clone(), ok.clone(), all_pos, ok.clone(), ok]);
        assert_eq!(macro_auroc(&p), Err(MetricsError::SingleClass(Some(Diagnosis::Hyp))));
    }

    #[test]
    fn weights_from_counts() {
        let w = positive_weights([3819, 1033, 1850, 3137, 3640], 15009).unwrap();
        assert_eq!(w.0[0], 15009.0 / 3819.0);
        assert!((w.0[0] - 3.930).abs() < 5e-4);
        assert!((w.0[1] - 14.529).abs() < 1e-3);
        let one = positive_weights([5; 5], 5).unwrap();
        assert_eq!(one.0, [1.0; 5]);
        assert_eq!(
            positive_weights([1, 0, 1, 1, 1], 5),
            Err(MetricsError::ZeroPositives(Diagnosis::Af))
        );
        assert!(positive_weights([6, 1, 1, 1, 1], 5).is_err());
    }

    #[test]
    fn bce_values() {
        assert!(weighted_bce(1.0 - BCE_EPS, true, 1.0) < 1e-6);
        assert!((weighted_bce(0.5, true, 2.0) - 1.3862943611198906).abs() < 1e-12);
        for w in [0.1, 1.0, 7.0] {
            assert!((weighted_bce(0.5, false, w) - std::f64::consts::LN_2).abs() < 1e-12);
        }
        // clamping keeps the loss finite at the extremes
        assert!(weighted_bce(0.0, true, 3.0).is_finite());
        assert!(weighted_bce(1.0, false, 3.0).is_finite());
    }

    #[test]
    fn batch_bce_is_mean() {
        let probs = vec![[0.5; 5], [0.5; 5]];
        let labels = vec![DiagnosisVector([true; 5]), DiagnosisVector([false; 5])];
        let w = ClassWeights([2.0; 5]);
        let loss = batch_weighted_bce(&probs, &labels, &w).unwrap();
        assert!((loss - 1.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine_lambda(0.0, 0.5), 1.0);
        assert!(cosine_lambda(1.0, 0.5).abs() < 1e-15);
        assert!((cosine_lambda(0.25, 0.5) - 0.8535533905932737).abs() < 1e-12);
    }

    #[test]
    fn vote_examples() {
        let col = |v: &[u8]| VoteMatrix {
            votes: v.iter().map(|&b| vec![[b == 1; 5]]).collect(),
        };
        let r = hard_vote(&col(&[1, 1, 1, 0, 0])).unwrap();
        assert!(r.predictions[0][0]);
        assert_eq!(r.scores[0][0], 0.6);
        let r = hard_vote(&col(&[0, 0, 0, 0, 0])).unwrap();
        assert!(!r.predictions[0][0]);
        assert_eq!(r.scores[0][0], 0.0);
        let r = hard_vote(&col(&[1, 1, 0, 0])).unwrap();
        assert!(!r.predictions[0][0]);
        assert_eq!(r.scores[0][0], 0.5);
        assert_eq!(hard_vote(&VoteMatrix { votes: vec![] }), Err(MetricsError::NoModels));
    }

    #[test]
    fn single_model_vote_is_its_threshold() {
        let probs = vec![vec![[0.2, 0.5, 0.7, 0.49, 0.51]]];
        let r = hard_vote(&VoteMatrix::from_probabilities(&probs, 0.5)).unwrap();
        assert_eq!(r.predictions[0], [false, true, true, false, true]);
        assert_eq!(mean_probabilities(&probs).unwrap(), probs[0]);
    }
}
