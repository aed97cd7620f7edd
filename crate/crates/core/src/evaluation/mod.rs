//! Discrimination, operating-point and calibration evaluation with
//! patient-clustered uncertainty.

mod bootstrap;
mod calibration;
mod discrimination;
mod operating;

pub use bootstrap::{
    bootstrap_replicates, clustered_bootstrap_band, clustered_bootstrap_ci, quantile, Interval, PatientScores,
};
pub use calibration::{calibration_fit, CalibrationBin, CalibrationFit};
pub use discrimination::{concordance_index, interpolate_pr, interpolate_roc, roc_pr_curves, CurvePoint, CurveSummary};
pub use operating::{confusion_metrics, select_threshold, threshold_candidates, OperatingPoint};

use serde::{Deserialize, Serialize};

use crate::cohort::Outcome;
use crate::dataset::PreparedSet;
use crate::labeling::VisitLabel;
use crate::models::RiskModel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredVisit {
    pub visit_day: i64,
    pub score: f64,
    pub label: VisitLabel,
}

/// One patient's visits with model scores; censored visits are kept for
/// alert accounting but never enter a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatient {
    pub patient_id: String,
    pub outcome: Outcome,
    pub visits: Vec<ScoredVisit>,
}

pub fn score_patients(model: &RiskModel, set: &PreparedSet) -> Result<Vec<ScoredPatient>> {
    let scores = model.score_set(set)?;
    Ok(set
        .patients
        .iter()
        .zip(scores)
        .map(|(p, s)| ScoredPatient {
            patient_id: p.patient_id.clone(),
            outcome: p.outcome,
            visits: p
                .visit_days
                .iter()
                .zip(&p.labels)
                .zip(s)
                .map(|((&visit_day, &label), score)| ScoredVisit { visit_day, score, label })
                .collect(),
        })
        .collect())
}

/// Labeled visits of each patient; patients without any are dropped.
pub fn patient_scores(patients: &[ScoredPatient]) -> Vec<PatientScores> {
    patients
        .iter()
        .map(|p| {
            let (scores, labels) = p
                .visits
                .iter()
                .filter_map(|v| v.label.target().map(|y| (v.score, y == 1.0)))
                .unzip();
            PatientScores { scores, labels }
        })
        .filter(|p: &PatientScores| !p.scores.is_empty())
        .collect()
}

/// Pooled labeled (score, label) pairs.
pub fn pooled(patients: &[ScoredPatient]) -> (Vec<f64>, Vec<bool>) {
    patients
        .iter()
        .flat_map(|p| &p.visits)
        .filter_map(|v| v.label.target().map(|y| (v.score, y == 1.0)))
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub sensitivity_floor: f64,
    pub calibration_bins: usize,
    pub n_boot: usize,
    /// Points on the false-positive-rate and recall grids of the bands.
    pub grid_points: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            sensitivity_floor: 0.85,
            calibration_bins: 10,
            n_boot: 1000,
            grid_points: 101,
        }
    }
}

/// A curve on a fixed grid with its bootstrap band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub y: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n_patients: usize,
    pub n_labeled_visits: usize,
    pub prevalence: f64,
    pub c_index: f64,
    pub c_index_ci: Interval,
    pub auc_roc: f64,
    pub pr_auc: f64,
    pub pr_auc_ci: Interval,
    pub operating_point: OperatingPoint,
    pub calibration: CalibrationFit,
    pub curves: CurveSummary,
    pub roc_band: Vec<BandPoint>,
    pub pr_band: Vec<BandPoint>,
}

fn grid(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Full evaluation of one model's scores on one dataset. The operating
/// threshold is selected on this same data at the configured floor.
pub fn evaluate(model: &str, patients: &[ScoredPatient], config: &EvaluationConfig, seed: u64) -> Result<EvaluationReport> {
    let (scores, labels) = pooled(patients);
    let clusters = patient_scores(patients);
    let c_index = concordance_index(&scores, &labels)?;
    let curves = roc_pr_curves(&scores, &labels)?;
    let operating_point = select_threshold(&scores, &labels, config.sensitivity_floor)?;
    let calibration = calibration_fit(&scores, &labels, config.calibration_bins)?;
    let c_index_ci = clustered_bootstrap_ci(&clusters, config.n_boot, seed, concordance_index)?;
    let pr_auc_ci = clustered_bootstrap_ci(&clusters, config.n_boot, seed, |s, l| Ok(roc_pr_curves(s, l)?.pr_auc))?;

    let xs = grid(config.grid_points);
    let roc_ci = clustered_bootstrap_band(&clusters, xs.len(), config.n_boot, seed, |s, l| {
        let c = roc_pr_curves(s, l)?;
        Ok(xs.iter().map(|&x| interpolate_roc(&c.roc, x)).collect())
    })?;
    let pr_ci = clustered_bootstrap_band(&clusters, xs.len(), config.n_boot, seed, |s, l| {
        let c = roc_pr_curves(s, l)?;
        Ok(xs.iter().map(|&x| interpolate_pr(&c.pr, x)).collect())
    })?;
    let band = |ci: Vec<(f64, f64)>, f: &dyn Fn(f64) -> f64| -> Vec<BandPoint> {
        xs.iter()
            .zip(ci)
            .map(|(&x, (low, high))| BandPoint { x, y: f(x), low, high })
            .collect()
    };
    let roc_band = band(roc_ci, &|x| interpolate_roc(&curves.roc, x));
    let pr_band = band(pr_ci, &|x| interpolate_pr(&curves.pr, x));

    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok(EvaluationReport {
        model: model.to_string(),
        n_patients: clusters.len(),
        n_labeled_visits: labels.len(),
        prevalence: n_pos as f64 / labels.len() as f64,
        c_index,
        c_index_ci,
        auc_roc: curves.auc_roc,
        pr_auc: curves.pr_auc,
        pr_auc_ci,
        operating_point,
        calibration,
        curves,
        roc_band,
        pr_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn scored_cohort(n: usize, seed: u64) -> Vec<ScoredPatient> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let died = rng.random_bool(0.5);
                let visits = (0..4)
                    .map(|t| {
                        let label = if died && t >= 2 { VisitLabel::Positive } else { VisitLabel::Negative };
                        let score = (0.2 + 0.5 * (label == VisitLabel::Positive) as u8 as f64) * rng.random::<f64>() + 0.1;
                        ScoredVisit { visit_day: 60 * t, score, label }
                    })
                    .collect();
                ScoredPatient {
                    patient_id: format!("P{i}"),
                    outcome: if died { Outcome::died(300) } else { Outcome::alive(500) },
                    visits,
                }
            })
            .collect()
    }

    #[test]
    fn report_is_consistent() {
        let pts = scored_cohort(120, 4);
        let cfg = EvaluationConfig {
            n_boot: 200,
            ..EvaluationConfig::default()
        };
        let r = evaluate("toy", &pts, &cfg, 1).unwrap();
        assert!((r.c_index - r.auc_roc).abs() < 1e-9);
        assert!(r.c_index_ci.low <= r.c_index && r.c_index <= r.c_index_ci.high);
        assert!(r.operating_point.sensitivity.unwrap() >= 0.85);
        assert_eq!(r.calibration.bins.iter().map(|b| b.count).sum::<usize>(), r.n_labeled_visits);
        assert_eq!(r.roc_band.len(), 101);
        assert!(r.roc_band.iter().all(|b| b.low <= b.high));
        assert_eq!(r, evaluate("toy", &pts, &cfg, 1).unwrap());
    }
}
