//! Rank-based discrimination: concordance, ROC and precision-recall.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn require_both(scores: &[f64], labels: &[bool], what: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs both classes ({pos} positive, {neg} negative visits)"
        )));
    }
    Ok((pos, neg))
}

/// Probability that a positive visit outscores a negative one, ties
/// counting one half. Computed from mid-ranks.
pub fn concordance_index(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = require_both(scores, labels, "concordance")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // ranks k+1..=end share their mean
        let mid = (k + 1 + end) as f64 / 2.0;
        rank_sum += mid * order[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Alert threshold; `None` for the no-alert end point.
    pub threshold: Option<f64>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    /// (false positive rate, true positive rate).
    pub roc: Vec<CurvePoint>,
    /// (recall, precision).
    pub pr: Vec<CurvePoint>,
    pub auc_roc: f64,
    pub pr_auc: f64,
    /// Positive prevalence, the precision of a random ranking.
    pub pr_baseline: f64,
}

/// Cumulative (tp, fp) after alerting on all scores >= each unique score,
/// sweeping from the highest score down.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0, 0);
    let mut out = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

pub fn roc_pr_curves(scores: &[f64], labels: &[bool]) -> Result<CurveSummary> {
    let (pos, neg) = require_both(scores, labels, "ROC analysis")?;
    let (p, n) = (pos as f64, neg as f64);
    let steps = sweep(scores, labels);
    let mut roc = vec![CurvePoint {
        threshold: None,
        x: 0.0,
        y: 0.0,
    }];
    let mut pr = Vec::with_capacity(steps.len());
    let mut auc = 0.0;
    let mut ap = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    for &(s, tp, fp) in &steps {
        let (tpr, fpr) = (tp as f64 / p, fp as f64 / n);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tpr - prev_tpr) * precision;
        roc.push(CurvePoint {
            threshold: Some(s),
            x: fpr,
            y: tpr,
        });
        pr.push(CurvePoint {
            threshold: Some(s),
            x: tpr,
            y: precision,
        });
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Ok(CurveSummary {
        roc,
        pr,
        auc_roc: auc,
        pr_auc: ap,
        pr_baseline: p / (p + n),
    })
}

/// True positive rate of the ROC polyline at false positive rate `fpr`.
pub fn interpolate_roc(roc: &[CurvePoint], fpr: f64) -> f64 {
    for w in roc.windows(2) {
        let (a, b) = (w[0], w[1]);
        if fpr <= b.x {
            if b.x == a.x {
                return b.y;
            }
            return a.y + (b.y - a.y) * (fpr - a.x) / (b.x - a.x);
        }
    }
    roc.last().map_or(0.0, |p| p.y)
}

/// Step-interpolated precision at `recall`: the precision of the first
/// sweep point reaching that recall.
pub fn interpolate_pr(pr: &[CurvePoint], recall: f64) -> f64 {
    pr.iter()
        .find(|p| p.x >= recall - 1e-12)
        .or(pr.last())
        .map_or(0.0, |p| p.y)
}
