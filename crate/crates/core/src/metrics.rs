//! Imbalance-aware binary classification metrics. Malignant is the positive
//! class throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub g_mean: f64,
    pub accuracy: f64,
    /// NaN (serialized as null) when undefined or not computed.
    pub auc: f64,
    /// Set when a class is absent and a rate is undefined (NaN).
    pub degenerate: bool,
    pub fold: Option<usize>,
    pub config_fingerprint: String,
}

impl MetricsReport {
    /// The paper-style display triple, rounded to two decimals.
    pub fn triple(&self) -> String {
        format!(
            "({:.2}, {:.2}, {:.2})",
            self.sensitivity, self.specificity, self.g_mean
        )
    }
}

/// Confusion metrics from hard decisions. `true` means malignant.
pub fn confusion_metrics(decisions: &[bool], labels: &[bool]) -> Result<MetricsReport> {
    if decisions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} decisions vs {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::Input("empty decision list".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &l) in decisions.iter().zip(labels) {
        match (d, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(from_counts(tp, fp, tn, fn_))
}

/// Metrics from explicit confusion counts.
pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> MetricsReport {
    let pos = tp + fn_;
    let neg = tn + fp;
    let sensitivity = if pos > 0 { tp as f64 / pos as f64 } else { f64::NAN };
    let specificity = if neg > 0 { tn as f64 / neg as f64 } else { f64::NAN };
    let g_mean = (sensitivity * specificity).sqrt();
    let n = pos + neg;
    let accuracy = if n > 0 {
        (tp + tn) as f64 / n as f64
    } else {
        f64::NAN
    };
    MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        g_mean,
        accuracy,
        auc: f64::NAN,
        degenerate: pos == 0 || neg == 0,
        fold: None,
        config_fingerprint: String::new(),
    }
}

/// Area under the ROC curve by the rank (Mann-Whitney) formulation, with
/// half credit for ties. Returns NaN when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over runs of tied scores (ranks are 1-based).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    (rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64)
}

/// O(N^2) pairwise AUC oracle: fraction of (positive, negative) pairs ranked
/// correctly, ties counting half.
pub fn roc_auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut credit = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    #[test]
    fn table_counts_7_of_7_and_20_of_24() {
        let m = from_counts(7, 4, 20, 0);
        assert_eq!(m.triple(), "(1.00, 0.83, 0.91)");
        assert!(!m.degenerate);
    }

    #[test]
    fn all_correct_is_ones() {
        let m = from_counts(5, 0, 9, 0);
        assert_eq!((m.sensitivity, m.specificity, m.g_mean), (1.0, 1.0, 1.0));
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn two_more_benign_correct_rounds_to_92_and_96() {
        let m = from_counts(7, 2, 22, 0);
        assert_eq!(m.triple(), "(1.00, 0.92, 0.96)");
        assert!((m.specificity - 22.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn g_mean_squared_is_the_product_pre_rounding() {
        let mut rng = Pcg32::new(1);
        for _ in 0..50 {
            let tp = rng.below(20);
            let fn_ = rng.below(20) + 1;
            let tn = rng.below(20) + 1;
            let fp = rng.below(20);
            let m = from_counts(tp, fp, tn, fn_);
            assert!((m.g_mean * m.g_mean - m.sensitivity * m.specificity).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_flags_nan() {
        let m = confusion_metrics(&[true, true], &[true, true]).unwrap();
        assert!(m.degenerate);
        assert!(m.specificity.is_nan());
        assert_eq!(m.sensitivity, 1.0);
    }

    #[test]
    fn perfect_separation_gives_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels), 1.0);
    }

    #[test]
    fn all_tied_scores_give_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(roc_auc(&scores, &labels), 0.5);
    }

    #[test]
    fn single_class_is_nan() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_nan());
    }

    #[test]
    fn rank_formulation_equals_pairwise_oracle_exactly() {
        let mut rng = Pcg32::new(2);
        for trial in 0..100 {
            let n = 2 + rng.below(199);
            let mut scores = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                // Coarse quantization forces plenty of ties.
                let s = (rng.next_f64() * 8.0).floor() / 8.0;
                scores.push(s);
                labels.push(rng.next_f64() < 0.35);
            }
            if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
                continue;
            }
            let fast = roc_auc(&scores, &labels);
            let slow = roc_auc_pairwise(&scores, &labels);
            assert_eq!(fast, slow, "trial {} differs: {} vs {}", trial, fast, slow);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = Pcg32::new(3);
        let scores: Vec<f64> = (0..60).map(|_| rng.next_f64()).collect();
        let labels: Vec<bool> = (0..60).map(|_| rng.next_f64() < 0.3).collect();
        let base = roc_auc(&scores, &labels);
        let squashed: Vec<f64> = scores.iter().map(|&s| (4.0 * s).exp()).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 10.0 * s - 3.0).collect();
        assert_eq!(roc_auc(&squashed, &labels), base);
        assert_eq!(roc_auc(&shifted, &labels), base);
    }

    #[test]
    fn nan_serializes_as_null() {
        let m = from_counts(3, 0, 0, 0);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"specificity\":null"));
    }
}
