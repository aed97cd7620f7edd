//! Standardized, imputed per-patient feature sequences ready for modelling.

use serde::{Deserialize, Serialize};

use crate::cohort::Outcome;
use crate::features::FeatureFingerprint;
use crate::labeling::VisitLabel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedPatient {
    pub patient_id: String,
    pub outcome: Outcome,
    pub visit_days: Vec<i64>,
    /// One fully observed standardized row per visit.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<VisitLabel>,
}

impl PreparedPatient {
    pub fn has_positive(&self) -> bool {
        self.labels.contains(&VisitLabel::Positive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSet {
    pub feature_names: Vec<String>,
    pub horizon_days: i64,
    pub patients: Vec<PreparedPatient>,
}

/// Labeled visits flattened to rows, with a pointer back to their patient.
#[derive(Debug, Clone, Default)]
pub struct LabeledRows {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// (patient index, visit index) of each row.
    pub origin: Vec<(usize, usize)>,
}

/// Landmark rows: covariates at a visit and the residual time to the
/// patient's outcome from that visit.
#[derive(Debug, Clone, Default)]
pub struct LandmarkRows {
    pub x: Vec<Vec<f64>>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

impl PreparedSet {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn fingerprint(&self) -> FeatureFingerprint {
        FeatureFingerprint::of(&self.feature_names)
    }

    pub fn n_visits(&self) -> usize {
        self.patients.iter().map(|p| p.labels.len()).sum()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    pub fn labeled_rows(&self) -> LabeledRows {
        let mut rows = LabeledRows::default();
        for (i, p) in self.patients.iter().enumerate() {
            for (t, label) in p.labels.iter().enumerate() {
                if let Some(y) = label.target() {
                    rows.x.push(p.features[t].clone());
                    rows.y.push(y);
                    rows.origin.push((i, t));
                }
            }
        }
        rows
    }

    /// One row per labeled visit; censored visits carry no row.
    pub fn landmark_rows(&self) -> LandmarkRows {
        let mut rows = LandmarkRows::default();
        for p in &self.patients {
            for (t, label) in p.labels.iter().enumerate() {
                if label.is_labeled() {
                    rows.x.push(p.features[t].clone());
                    rows.time.push((p.outcome.event_day - p.visit_days[t]) as f64);
                    rows.event.push(p.outcome.is_death());
                }
            }
        }
        rows
    }

    /// Adds a column; `values[i][t]` is the value for patient `i`, visit `t`.
    pub fn append_feature(&mut self, name: impl Into<String>, values: Vec<Vec<f64>>) -> Result<()> {
        let name = name.into();
        if self.feature_names.contains(&name) {
            return Err(Error::Config(format!("feature {name} already present")));
        }
        if values.len() != self.patients.len() {
            return Err(Error::Shape(format!(
                "{} patient columns supplied for {} patients",
                values.len(),
                self.patients.len()
            )));
        }
        for (p, col) in self.patients.iter().zip(&values) {
            if col.len() != p.features.len() {
                return Err(Error::Shape(format!("visit count mismatch for {}", p.patient_id)));
            }
        }
        for (p, col) in self.patients.iter_mut().zip(values) {
            for (row, v) in p.features.iter_mut().zip(col) {
                row.push(v);
            }
        }
        self.feature_names.push(name);
        Ok(())
    }

    /// Patients whose id is in `ids`, in this set's order.
    pub fn subset(&self, ids: &[String]) -> PreparedSet {
        let keep: std::collections::HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        PreparedSet {
            feature_names: self.feature_names.clone(),
            horizon_days: self.horizon_days,
            patients: self.patients.iter().filter(|p| keep.contains(p.patient_id.as_str())).cloned().collect(),
        }
    }
}
