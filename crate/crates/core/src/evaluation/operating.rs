//! Threshold selection under a sensitivity floor and confusion metrics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Ratio metrics are `None` when their denominator is zero.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (a + b > 0).then(|| a as f64 / (a + b) as f64)
}

impl OperatingPoint {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let sensitivity = ratio(tp, fn_);
        let specificity = ratio(tn, fp);
        OperatingPoint {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            sensitivity,
            specificity,
            balanced_accuracy: sensitivity.zip(specificity).map(|(a, b)| (a + b) / 2.0),
            ppv: ratio(tp, fp),
            npv: ratio(tn, fn_),
        }
    }
}

/// Alert iff `score >= threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> OperatingPoint {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    OperatingPoint::from_counts(threshold, tp, fp, tn, fn_)
}

/// Candidate thresholds: every observed score plus 0 and 1, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = scores.iter().copied().chain([0.0, 1.0]).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// The largest candidate threshold whose sensitivity meets `floor`.
/// Raising the threshold never lowers specificity, so this is the most
/// specific operating point that honours the floor.
pub fn select_threshold(scores: &[f64], labels: &[bool], floor: f64) -> Result<OperatingPoint> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if !floor.is_finite() {
        return Err(Error::Config("sensitivity floor must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("threshold selection needs at least one positive visit".into()));
    }
    let mut pos_scores: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    pos_scores.sort_by(f64::total_cmp);
    let candidates = threshold_candidates(scores);
    // sensitivity falls as the threshold rises; scan from the top
    for &theta in candidates.iter().rev() {
        let below = pos_scores.partition_point(|&s| s < theta);
        let sens = (n_pos - below) as f64 / n_pos as f64;
        if sens >= floor {
            return Ok(confusion_metrics(scores, labels, theta));
        }
    }
    let max_achievable = 1.0;
    Err(Error::FloorUnreachable { floor, max_achievable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let op = select_threshold(&[0.9, 0.8, 0.2], &[true, true, false], 0.85).unwrap();
        assert_eq!(op.threshold, 0.8);
        assert_eq!(op.sensitivity, Some(1.0));
        assert_eq!(op.specificity, Some(1.0));
    }

    #[test]
    fn arithmetic_example() {
        let op = OperatingPoint::from_counts(0.5, 85, 10, 90, 15);
        assert_eq!(op.sensitivity, Some(0.85));
        assert_eq!(op.specificity, Some(0.9));
        assert!((op.balanced_accuracy.unwrap() - 0.875).abs() < 1e-12);
        assert!((op.ppv.unwrap() - 85.0 / 95.0).abs() < 1e-12);
        assert!((op.npv.unwrap() - 90.0 / 105.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_thresholds() {
        let scores = [0.2, 0.7, 0.4];
        let labels = [true, false, true];
        let all = confusion_metrics(&scores, &labels, 0.0);
        assert_eq!((all.sensitivity, all.specificity), (Some(1.0), Some(0.0)));
        let none = confusion_metrics(&scores, &labels, 0.7 + 1e-9);
        assert_eq!(none.sensitivity, Some(0.0));
    }

    #[test]
    fn adversarial_ordering_forces_zero_specificity() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [true, true, true, false, false];
        let op = select_threshold(&scores, &labels, 0.85).unwrap();
        assert_eq!(op.threshold, 0.1);
        assert_eq!(op.specificity, Some(0.0));
    }

    #[test]
    fn unreachable_floor() {
        match select_threshold(&[0.3, 0.6], &[true, false], 1.2) {
            Err(Error::FloorUnreachable { max_achievable, .. }) => assert_eq!(max_achievable, 1.0),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn counts_monotone_in_threshold(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = confusion_metrics(&scores, &labels, lo);
            let q = confusion_metrics(&scores, &labels, hi);
            prop_assert!(q.tp <= p.tp && q.fp <= p.fp && q.tn >= p.tn && q.fn_ >= p.fn_);
            prop_assert_eq!(p.tp + p.fp + p.tn + p.fn_, scores.len());
        }
    }
}
