//! Alert burden, time in warning and lead time at a fixed threshold.
//!
//! A visit is in alert when its score is at least the threshold. Censored
//! visits carry an alert flag but are left out of every count, as they are
//! out of every other metric.

use serde::{Deserialize, Serialize};

use crate::cohort::Outcome;
use crate::evaluation::ScoredPatient;
use crate::labeling::VisitLabel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertVisit {
    pub visit_day: i64,
    pub score: f64,
    pub alert: bool,
    pub label: VisitLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTrace {
    pub patient_id: String,
    pub outcome: Outcome,
    pub visits: Vec<AlertVisit>,
}

impl AlertTrace {
    pub fn new(patient: &ScoredPatient, threshold: f64) -> Self {
        AlertTrace {
            patient_id: patient.patient_id.clone(),
            outcome: patient.outcome,
            visits: patient
                .visits
                .iter()
                .map(|v| AlertVisit {
                    visit_day: v.visit_day,
                    score: v.score,
                    alert: v.score >= threshold,
                    label: v.label,
                })
                .collect(),
        }
    }

    fn counted_alerts(&self) -> impl Iterator<Item = &AlertVisit> {
        self.visits.iter().filter(|v| v.alert && v.label.is_labeled())
    }

    pub fn has_alerted_positive(&self) -> bool {
        self.counted_alerts().any(|v| v.label == VisitLabel::Positive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseType {
    /// Died, with at least one alerted positive visit.
    TruePositive,
    /// Alerted at least once but never had a positive visit.
    FalsePositive,
    Other,
}

pub fn case_type(trace: &AlertTrace) -> CaseType {
    if trace.outcome.is_death() && trace.has_alerted_positive() {
        CaseType::TruePositive
    } else if trace.counted_alerts().next().is_some() && !trace.visits.iter().any(|v| v.label == VisitLabel::Positive) {
        CaseType::FalsePositive
    } else {
        CaseType::Other
    }
}

/// Alerts per 100 visits.
pub fn alert_density_from_counts(alerts: usize, visits: usize) -> f64 {
    if visits == 0 {
        0.0
    } else {
        100.0 * alerts as f64 / visits as f64
    }
}

/// Alerts per 100 labeled visits over all traces.
pub fn alert_density(traces: &[AlertTrace]) -> f64 {
    let visits = traces.iter().flat_map(|t| &t.visits).filter(|v| v.label.is_labeled()).count();
    let alerts = traces.iter().map(|t| t.counted_alerts().count()).sum();
    alert_density_from_counts(alerts, visits)
}

/// Days spent in alert: for every alerted visit, the gap back to the
/// previous visit. The first visit has no predecessor and adds nothing.
pub fn time_in_warning(trace: &AlertTrace) -> Result<i64> {
    let mut total = 0;
    for (k, v) in trace.visits.iter().enumerate().skip(1) {
        let gap = v.visit_day - trace.visits[k - 1].visit_day;
        if gap < 0 {
            return Err(Error::Integrity(format!("visits of {} are not ordered by day", trace.patient_id)));
        }
        if v.alert && v.label.is_labeled() {
            total += gap;
        }
    }
    Ok(total)
}

/// Days from the first alerted positive visit to death.
pub fn lead_time(trace: &AlertTrace) -> Option<i64> {
    if !trace.outcome.is_death() {
        return None;
    }
    trace
        .counted_alerts()
        .find(|v| v.label == VisitLabel::Positive)
        .map(|v| trace.outcome.event_day - v.visit_day)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientImpact {
    pub patient_id: String,
    pub died: bool,
    pub case: CaseType,
    pub time_in_warning: i64,
    pub lead_time: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub threshold: f64,
    pub n_patients: usize,
    pub n_labeled_visits: usize,
    pub n_alerts: usize,
    pub alert_density: f64,
    pub alert_fraction: f64,
    pub median_lead_time: Option<f64>,
    pub median_tiw_true_positive: Option<f64>,
    pub median_tiw_false_positive: Option<f64>,
    pub n_true_positive_patients: usize,
    pub n_false_positive_patients: usize,
    pub patients: Vec<PatientImpact>,
}

pub fn impact_report(patients: &[ScoredPatient], threshold: f64) -> Result<ImpactReport> {
    let traces: Vec<AlertTrace> = patients.iter().map(|p| AlertTrace::new(p, threshold)).collect();
    summarize_traces(&traces, threshold)
}

/// Aggregates traces that may have been alerted at different thresholds,
/// e.g. out-of-fold traces each thresholded within its own fold; `threshold`
/// is only recorded.
pub fn summarize_traces(traces: &[AlertTrace], threshold: f64) -> Result<ImpactReport> {
    let mut rows = Vec::with_capacity(traces.len());
    for t in traces {
        rows.push(PatientImpact {
            patient_id: t.patient_id.clone(),
            died: t.outcome.is_death(),
            case: case_type(t),
            time_in_warning: time_in_warning(t)?,
            lead_time: lead_time(t),
        });
    }
    let n_labeled_visits = traces.iter().flat_map(|t| &t.visits).filter(|v| v.label.is_labeled()).count();
    let n_alerts = traces.iter().map(|t| t.counted_alerts().count()).sum();
    let tiw = |case: CaseType| -> Vec<f64> {
        rows.iter().filter(|r| r.case == case).map(|r| r.time_in_warning as f64).collect()
    };
    let leads: Vec<f64> = rows.iter().filter_map(|r| r.lead_time.map(|d| d as f64)).collect();
    let alert_density = alert_density_from_counts(n_alerts, n_labeled_visits);
    Ok(ImpactReport {
        threshold,
        n_patients: traces.len(),
        n_labeled_visits,
        n_alerts,
        alert_density,
        alert_fraction: alert_density / 100.0,
        median_lead_time: median(&leads),
        median_tiw_true_positive: median(&tiw(CaseType::TruePositive)),
        median_tiw_false_positive: median(&tiw(CaseType::FalsePositive)),
        n_true_positive_patients: rows.iter().filter(|r| r.case == CaseType::TruePositive).count(),
        n_false_positive_patients: rows.iter().filter(|r| r.case == CaseType::FalsePositive).count(),
        patients: rows,
    })
}
