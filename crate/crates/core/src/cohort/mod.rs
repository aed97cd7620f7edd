//! Longitudinal cohorts: one timeline of visits plus an outcome per patient.

mod csv_io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::features::{DAYS_SINCE_LAST_VISIT, DOSE_REDUCED, ECOG, FEATURE_NAMES, N_FEATURES, SAE_COUNT};
use crate::{Error, Result};

pub use csv_io::{load_cohort, read_cohort, write_cohort, write_cohort_to, CSV_HEADER};
pub use synthetic::{generate_synthetic, SyntheticSpec, TrajectorySignal, WeibullBaseline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub patient_id: String,
    /// Days since enrollment.
    pub visit_day: i64,
    /// Values in `FEATURE_NAMES` order; `None` marks a missing measurement.
    pub features: [Option<f64>; N_FEATURES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Died,
    LastKnownAlive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: Status,
    /// Death day when `status` is `Died`, end of follow-up otherwise.
    pub event_day: i64,
}

impl Outcome {
    pub fn died(event_day: i64) -> Self {
        Outcome {
            status: Status::Died,
            event_day,
        }
    }

    pub fn alive(event_day: i64) -> Self {
        Outcome {
            status: Status::LastKnownAlive,
            event_day,
        }
    }

    pub fn is_death(&self) -> bool {
        self.status == Status::Died
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub patient_id: String,
    pub visits: Vec<VisitRecord>,
    pub outcome: Outcome,
}

impl PatientTimeline {
    /// Builds a timeline and checks every visit/outcome invariant.
    pub fn new(patient_id: impl Into<String>, visits: Vec<VisitRecord>, outcome: Outcome) -> Result<Self> {
        let timeline = PatientTimeline {
            patient_id: patient_id.into(),
            visits,
            outcome,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    pub fn validate(&self) -> Result<()> {
        let pid = &self.patient_id;
        let Some(last) = self.visits.last() else {
            return Err(Error::Integrity(format!("patient {pid} has no visits")));
        };
        if self.visits[0].visit_day < 0 {
            return Err(Error::Integrity(format!("patient {pid} has a negative visit_day")));
        }
        for (i, visit) in self.visits.iter().enumerate() {
            if &visit.patient_id != pid {
                return Err(Error::Integrity(format!(
                    "visit of patient {} filed under patient {pid}",
                    visit.patient_id
                )));
            }
            if i > 0 && visit.visit_day <= self.visits[i - 1].visit_day {
                return Err(Error::Integrity(format!(
                    "patient {pid}: visit_day {} does not increase after {}",
                    visit.visit_day,
                    self.visits[i - 1].visit_day
                )));
            }
            check_features(pid, visit.visit_day, &visit.features)?;
            if let Some(gap) = visit.features[DAYS_SINCE_LAST_VISIT] {
                let expected = if i == 0 {
                    0
                } else {
                    visit.visit_day - self.visits[i - 1].visit_day
                };
                if gap != expected as f64 {
                    return Err(Error::Integrity(format!(
                        "patient {pid}, day {}: days_since_last_visit is {gap}, expected {expected}",
                        visit.visit_day
                    )));
                }
            }
        }
        if self.outcome.event_day < last.visit_day {
            return Err(Error::Integrity(format!(
                "patient {pid}: outcome day {} precedes last visit day {}",
                self.outcome.event_day, last.visit_day
            )));
        }
        Ok(())
    }

    pub fn last_visit_day(&self) -> i64 {
        self.visits.last().map(|v| v.visit_day).unwrap_or(0)
    }
}

fn check_features(pid: &str, day: i64, features: &[Option<f64>; N_FEATURES]) -> Result<()> {
    for (j, value) in features.iter().enumerate() {
        let Some(v) = *value else { continue };
        let bad = |why: &str| {
            Err(Error::Integrity(format!(
                "patient {pid}, day {day}: {} = {v} {why}",
                FEATURE_NAMES[j]
            )))
        };
        if !v.is_finite() {
            return bad("is not finite");
        }
        match j {
            DOSE_REDUCED if v != 0.0 && v != 1.0 => return bad("must be 0 or 1"),
            ECOG if !(0.0..=4.0).contains(&v) || v.fract() != 0.0 => return bad("must be an integer in 0..=4"),
            SAE_COUNT if v < 0.0 || v.fract() != 0.0 => return bad("must be a non-negative integer"),
            DAYS_SINCE_LAST_VISIT if v < 0.0 => return bad("must be non-negative"),
            _ => {}
        }
    }
    Ok(())
}

/// Validates a whole cohort, including uniqueness of patient ids.
pub fn validate_cohort(cohort: &[PatientTimeline]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for patient in cohort {
        if !seen.insert(patient.patient_id.as_str()) {
            return Err(Error::Integrity(format!("duplicate patient id {}", patient.patient_id)));
        }
        patient.validate()?;
    }
    Ok(())
}
