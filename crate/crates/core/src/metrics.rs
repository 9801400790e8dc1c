//! Accuracy and privacy measurements: confusion-based classification
//! metrics, MSE, AUC-PR and the minimum-privacy tracker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`; 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `TP / (TP + FP)`; 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `(FP + FN) / total`.
    pub fn error_rate(&self) -> f64 {
        ratio(self.fp + self.fn_, self.total())
    }

    /// `2 r p / (r + p)`; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let r = self.recall();
        let p = self.precision();
        if r + p == 0.0 {
            0.0
        } else {
            2.0 * r * p / (r + p)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts over paired binary predictions and truths.
pub fn classification_metrics(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::domain(format!(
            "classification_metrics over {} predictions and {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Fraction of mismatched labels; works for any label arity.
pub fn error_rate_multiclass(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::domain("error rate over mismatched label vectors"));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean squared element difference.
pub fn mse_metric(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    Ok(crate::nn::loss::mse(pred, truth)?.0)
}

/// Which privacy metric a measurement carries, and how leakage reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ErrorRate,
    Recall,
    Precision,
    F1,
    Mse,
    AucPr,
}

impl MetricKind {
    /// Higher values mean a more successful attack for recall-like metrics;
    /// error rate and MSE leak when they are low.
    pub fn higher_is_leakier(&self) -> bool {
        matches!(self, MetricKind::Recall | MetricKind::Precision | MetricKind::F1 | MetricKind::AucPr)
    }

    /// Maps a raw measurement to a privacy level where higher means more
    /// private: bounded leakage metrics are inverted as `1 - value`,
    /// error rate and MSE already point that way.
    pub fn privacy_level(&self, value: f64) -> f64 {
        if self.higher_is_leakier() {
            1.0 - value
        } else {
            value
        }
    }
}

/// One privacy measurement at a given training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyMeasurement {
    pub kind: MetricKind,
    pub value: f64,
}

/// The leakiest measurement of a homogeneous series: the maximum for
/// higher-is-leakier kinds, the minimum otherwise.
pub fn min_privacy(track: &[PrivacyMeasurement]) -> Result<PrivacyMeasurement> {
    let first = track
        .first()
        .ok_or_else(|| Error::domain("min_privacy over an empty series"))?;
    if track.iter().any(|m| m.kind != first.kind) {
        return Err(Error::domain("min_privacy over mixed metric kinds"));
    }
    let value = if first.kind.higher_is_leakier() {
        track.iter().map(|m| m.value).fold(f64::NEG_INFINITY, f64::max)
    } else {
        track.iter().map(|m| m.value).fold(f64::INFINITY, f64::min)
    };
    Ok(PrivacyMeasurement {
        kind: first.kind,
        value,
    })
}

/// Area under the precision-recall curve.
///
/// Items are swept in descending score order with tied scores entering as a
/// group; the curve is anchored at (recall 0, precision 1) and integrated by
/// trapezoid between consecutive recall levels.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::domain("auc_pr over mismatched score/label vectors"));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 {
        return Err(Error::domain("auc_pr needs at least one positive label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut prev_precision = 1.0;
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group before emitting a curve point.
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: every distinct score is a threshold; points are
    /// visited in descending-score order and integrated the same way.
    fn auc_pr_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let positives = labels.iter().filter(|&&l| l != 0).count();
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut area = 0.0;
        let (mut prev_r, mut prev_p) = (0.0, 1.0);
        for t in thresholds {
            let mut tp = 0;
            let mut fp = 0;
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= t {
                    if l != 0 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let r = tp as f64 / positives as f64;
            let p = tp as f64 / (tp + fp) as f64;
            area += (r - prev_r) * (p + prev_p) / 2.0;
            prev_r = r;
            prev_p = p;
        }
        area
    }

    #[test]
    fn perfect_ranking_has_unit_area() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [1, 1, 1, 0, 0];
        assert!((auc_pr(&scores, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_positive_ranked_last() {
        let scores = [4.0, 3.0, 2.0, 1.0];
        let labels = [0, 0, 0, 1];
        let got = auc_pr(&scores, &labels).unwrap();
        let want = auc_pr_oracle(&scores, &labels);
        assert!((got - want).abs() < 1e-12);
        // Three pure-negative thresholds pin precision to 0 at recall 0; the
        // final point (recall 1, precision 1/4) adds (1)(0.25 + 0)/2.
        assert!((got - 0.125).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_invariance() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65];
        let labels = [0, 0, 1, 1, 1];
        let a = auc_pr(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp()).collect();
        let b = auc_pr(&transformed, &labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ties_enter_as_a_group() {
        let scores = [1.0, 1.0, 0.5, 0.5];
        let labels = [1, 0, 1, 0];
        let got = auc_pr(&scores, &labels).unwrap();
        let want = auc_pr_oracle(&scores, &labels);
        assert!((got - want).abs() < 1e-12);
        // Permuting tied entries leaves the value unchanged.
        let scores2 = [1.0, 1.0, 0.5, 0.5];
        let labels2 = [0, 1, 0, 1];
        assert_eq!(got, auc_pr(&scores2, &labels2).unwrap());
    }

    #[test]
    fn zero_positives_is_a_domain_error() {
        assert!(auc_pr(&[1.0, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn exhaustive_small_patterns_match_oracle() {
        // All label patterns and a few score patterns up to n = 8.
        let score_sets: [&[f64]; 3] = [
            &[0.9, 0.1, 0.5, 0.7, 0.3, 0.2, 0.8, 0.6],
            &[0.5, 0.5, 0.5, 0.2, 0.2, 0.9, 0.9, 0.1],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        ];
        for n in 1..=8usize {
            for mask in 1u32..(1 << n) {
                let labels: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
                for scores in score_sets {
                    let s = &scores[..n];
                    let got = auc_pr(s, &labels).unwrap();
                    let want = auc_pr_oracle(s, &labels);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "n={n} mask={mask} got {got} want {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn confusion_metric_cases() {
        let c = classification_metrics(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c.error_rate(), 0.0);
        assert_eq!(c.recall(), 1.0);
        assert_eq!(c.precision(), 1.0);
        assert_eq!(c.f1(), 1.0);

        // TP=9, FN=1, FP=0.
        let mut pred = vec![1u8; 9];
        pred.push(0);
        let truth = vec![1u8; 10];
        let c = classification_metrics(&pred, &truth).unwrap();
        assert_eq!(c.recall(), 0.9);
        assert_eq!(c.precision(), 1.0);
        assert!((c.f1() - 2.0 * 0.9 / 1.9).abs() < 1e-12);

        let c = classification_metrics(&[1, 0, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(c.error_rate(), 0.5);
    }

    #[test]
    fn degenerate_confusions_use_zero_conventions() {
        // No positives in truth: recall 0. Nothing predicted positive: precision 0.
        let c = classification_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(c.recall(), 0.0);
        assert_eq!(c.precision(), 0.0);
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn error_rate_is_one_minus_accuracy() {
        // Power-of-two total keeps both divisions exact in f64.
        let pred = [1u8, 0, 1, 1, 0, 0, 1, 0];
        let truth = [1u8, 1, 1, 0, 0, 0, 1, 0];
        let c = classification_metrics(&pred, &truth).unwrap();
        let acc = (c.tp + c.tn) as f64 / c.total() as f64;
        assert_eq!(c.error_rate(), 1.0 - acc);

        let pred = [1u8, 0, 1, 1, 0, 0];
        let truth = [1u8, 1, 1, 0, 0, 0];
        let c = classification_metrics(&pred, &truth).unwrap();
        let acc = (c.tp + c.tn) as f64 / c.total() as f64;
        assert!((c.error_rate() - (1.0 - acc)).abs() < 1e-15);
    }

    #[test]
    fn min_privacy_picks_the_leakiest_epoch() {
        let recalls: Vec<PrivacyMeasurement> = [0.6, 0.9, 0.7]
            .iter()
            .map(|&v| PrivacyMeasurement {
                kind: MetricKind::Recall,
                value: v,
            })
            .collect();
        assert_eq!(min_privacy(&recalls).unwrap().value, 0.9);

        let mses: Vec<PrivacyMeasurement> = [2.0, 0.5, 1.0]
            .iter()
            .map(|&v| PrivacyMeasurement {
                kind: MetricKind::Mse,
                value: v,
            })
            .collect();
        assert_eq!(min_privacy(&mses).unwrap().value, 0.5);

        let single = [PrivacyMeasurement {
            kind: MetricKind::F1,
            value: 0.42,
        }];
        assert_eq!(min_privacy(&single).unwrap().value, 0.42);
    }

    #[test]
    fn min_privacy_rejects_mixed_kinds() {
        let mixed = [
            PrivacyMeasurement {
                kind: MetricKind::Recall,
                value: 0.5,
            },
            PrivacyMeasurement {
                kind: MetricKind::Mse,
                value: 0.5,
            },
        ];
        assert!(min_privacy(&mixed).is_err());
    }

    #[test]
    fn privacy_level_inversion() {
        assert_eq!(MetricKind::Recall.privacy_level(0.8), 0.19999999999999996);
        assert_eq!(MetricKind::ErrorRate.privacy_level(0.8), 0.8);
        assert_eq!(MetricKind::Mse.privacy_level(3.0), 3.0);
    }
}
