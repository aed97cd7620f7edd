//! Visit-level labels under a fixed look-ahead horizon.
//!
//! A visit is positive when the patient died within `(0, horizon]` days of
//! it, negative when the patient is known to have survived at least
//! `horizon` days past it, and censored otherwise. Censored visits carry no
//! supervision and are dropped from every loss and metric.

use serde::{Deserialize, Serialize};

use crate::cohort::{Outcome, PatientTimeline, Status};
use crate::features::N_FEATURES;
use crate::{Error, Result};

pub const HORIZON_DAYS: i64 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitLabel {
    Positive,
    Negative,
    Censored,
}

impl VisitLabel {
    pub fn is_labeled(self) -> bool {
        self != VisitLabel::Censored
    }

    /// 1.0 / 0.0 for labeled visits.
    pub fn target(self) -> Option<f64> {
        match self {
            VisitLabel::Positive => Some(1.0),
            VisitLabel::Negative => Some(0.0),
            VisitLabel::Censored => None,
        }
    }
}

/// Labels one visit. A visit on the death day itself (gap 0) falls outside
/// the strict `0 < gap` window and is treated as censored.
pub fn label_visit(visit_day: i64, outcome: &Outcome, horizon: i64) -> Result<VisitLabel> {
    if horizon <= 0 {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let gap = outcome.event_day - visit_day;
    if gap < 0 {
        return Err(Error::Integrity(format!(
            "visit on day {visit_day} lies after the recorded outcome day {}",
            outcome.event_day
        )));
    }
    Ok(match outcome.status {
        Status::Died if gap == 0 => VisitLabel::Censored,
        Status::Died if gap <= horizon => VisitLabel::Positive,
        Status::Died => VisitLabel::Negative,
        Status::LastKnownAlive if gap >= horizon => VisitLabel::Negative,
        Status::LastKnownAlive => VisitLabel::Censored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVisit {
    pub patient_id: String,
    pub visit_day: i64,
    pub features: Vec<Option<f64>>,
    pub label: VisitLabel,
    pub horizon_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPatient {
    pub patient_id: String,
    pub outcome: Outcome,
    pub visits: Vec<LabeledVisit>,
}

impl LabeledPatient {
    pub fn has_positive(&self) -> bool {
        self.visits.iter().any(|v| v.label == VisitLabel::Positive)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub patients: usize,
    pub visits: usize,
    pub positive: usize,
    pub negative: usize,
    pub censored: usize,
}

impl LabelSummary {
    pub fn add(&mut self, label: VisitLabel) {
        self.visits += 1;
        match label {
            VisitLabel::Positive => self.positive += 1,
            VisitLabel::Negative => self.negative += 1,
            VisitLabel::Censored => self.censored += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCohort {
    pub horizon_days: i64,
    pub patients: Vec<LabeledPatient>,
    pub summary: LabelSummary,
}

impl LabeledCohort {
    pub fn visits(&self) -> impl Iterator<Item = &LabeledVisit> + Clone {
        self.patients.iter().flat_map(|p| p.visits.iter())
    }

    /// Sub-cohort with the given patients, in the order of `ids`.
    pub fn subset(&self, ids: &[String]) -> Result<LabeledCohort> {
        let index: std::collections::HashMap<&str, &LabeledPatient> =
            self.patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
        let mut patients = Vec::with_capacity(ids.len());
        let mut summary = LabelSummary::default();
        for id in ids {
            let p = index
                .get(id.as_str())
                .ok_or_else(|| Error::Integrity(format!("unknown patient {id}")))?;
            summary.patients += 1;
            for v in &p.visits {
                summary.add(v.label);
            }
            patients.push((*p).clone());
        }
        Ok(LabeledCohort {
            horizon_days: self.horizon_days,
            patients,
            summary,
        })
    }
}

pub fn label_cohort(cohort: &[PatientTimeline], horizon: i64) -> Result<LabeledCohort> {
    let mut summary = LabelSummary::default();
    let mut patients = Vec::with_capacity(cohort.len());
    for timeline in cohort {
        summary.patients += 1;
        let mut visits = Vec::with_capacity(timeline.visits.len());
        for visit in &timeline.visits {
            let label = label_visit(visit.visit_day, &timeline.outcome, horizon).map_err(|e| match e {
                Error::Integrity(m) => Error::Integrity(format!("patient {}: {m}", timeline.patient_id)),
                other => other,
            })?;
            summary.add(label);
            let features: Vec<Option<f64>> = visit.features.to_vec();
            debug_assert_eq!(features.len(), N_FEATURES);
            visits.push(LabeledVisit {
                patient_id: timeline.patient_id.clone(),
                visit_day: visit.visit_day,
                features,
                label,
                horizon_days: horizon,
            });
        }
        patients.push(LabeledPatient {
            patient_id: timeline.patient_id.clone(),
            outcome: timeline.outcome,
            visits,
        });
    }
    Ok(LabeledCohort {
        horizon_days: horizon,
        patients,
        summary,
    })
}
