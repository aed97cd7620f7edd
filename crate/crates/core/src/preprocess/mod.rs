//! Fold-local standardization and imputation.
//!
//! Everything here is fitted on training patients only. The fitted
//! [`Preprocessor`] records which patients it saw, and preparing data in the
//! [`DataRole::Evaluation`] role refuses any of them.

mod fingerprint;
mod imputer;
mod scaler;

pub use fingerprint::FoldFingerprint;
pub use imputer::{fit_imputer, ImputationModel, ImputerConfig, ImputerKind, MaskedSequence};
pub use scaler::{fit_scaler, Scaler};

use serde::{Deserialize, Serialize};

use crate::dataset::{PreparedPatient, PreparedSet};
use crate::labeling::{LabeledCohort, LabeledPatient};
use crate::{Error, Result};

/// How a prepared dataset relates to the preprocessor's training patients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRole {
    /// The patients the preprocessor was fitted on.
    Training,
    /// Held-out data; must share no patient with the fit.
    Evaluation,
    /// Deliberate re-scoring of development data, e.g. an external run on
    /// the development cohort itself. No overlap check.
    Resubstitution,
}

/// Scaler and imputer fitted together on one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub scaler: Scaler,
    pub imputer: ImputationModel,
}

/// Standardizes one patient's raw visits into a masked sequence.
pub fn standardize(scaler: &Scaler, patient: &LabeledPatient) -> Result<MaskedSequence> {
    let rows = patient
        .visits
        .iter()
        .map(|v| {
            if v.features.len() != scaler.n_features() {
                return Err(Error::Shape(format!(
                    "visit of {} has {} features, scaler expects {}",
                    patient.patient_id,
                    v.features.len(),
                    scaler.n_features()
                )));
            }
            Ok(scaler.transform(&v.features))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskedSequence::from_options(patient.patient_id.clone(), &rows))
}

impl Preprocessor {
    pub fn fit(
        train: &LabeledCohort,
        feature_names: &[String],
        kind: ImputerKind,
        config: &ImputerConfig,
        seed: u64,
    ) -> Result<Self> {
        let scaler = Scaler::fit(feature_names, train.visits())?;
        let sequences = train
            .patients
            .iter()
            .map(|p| standardize(&scaler, p))
            .collect::<Result<Vec<_>>>()?;
        let imputer = fit_imputer(&sequences, kind, config, seed)?;
        Ok(Preprocessor { scaler, imputer })
    }

    /// Checks `ids` against both fit fingerprints.
    pub fn check_disjoint<'a>(&self, ids: impl IntoIterator<Item = &'a str> + Clone) -> Result<()> {
        self.scaler.fit_fingerprint.check_disjoint(ids.clone())?;
        self.imputer.fit_fingerprint.check_disjoint(ids)
    }

    /// Standardizes and imputes a labeled cohort.
    pub fn prepare(&self, cohort: &LabeledCohort, role: DataRole) -> Result<PreparedSet> {
        if role == DataRole::Evaluation {
            self.check_disjoint(cohort.patients.iter().map(|p| p.patient_id.as_str()))?;
        }
        let patients = cohort
            .patients
            .iter()
            .map(|p| {
                let seq = standardize(&self.scaler, p)?;
                let features = self.imputer.impute(&seq)?;
                Ok(PreparedPatient {
                    patient_id: p.patient_id.clone(),
                    outcome: p.outcome,
                    visit_days: p.visits.iter().map(|v| v.visit_day).collect(),
                    features,
                    labels: p.visits.iter().map(|v| v.label).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSet {
            feature_names: self.scaler.feature_names.clone(),
            horizon_days: cohort.horizon_days,
            patients,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic, SyntheticSpec};
    use crate::features::default_feature_names;
    use crate::labeling::label_cohort;

    fn quick_config() -> ImputerConfig {
        ImputerConfig {
            epochs: 2,
            ..ImputerConfig::default()
        }
    }

    #[test]
    fn evaluation_role_rejects_training_patients() {
        let cohort = label_cohort(&generate_synthetic(&SyntheticSpec::new(40, 3)).unwrap(), 180).unwrap();
        let ids: Vec<String> = cohort.patients.iter().map(|p| p.patient_id.clone()).collect();
        let train = cohort.subset(&ids[..30]).unwrap();
        let test = cohort.subset(&ids[30..]).unwrap();
        let pre = Preprocessor::fit(&train, &default_feature_names(), ImputerKind::DenoisingAutoencoder, &quick_config(), 1)
            .unwrap();
        assert!(pre.prepare(&test, DataRole::Evaluation).is_ok());
        assert!(matches!(pre.prepare(&cohort, DataRole::Evaluation), Err(Error::Leakage(_))));
        let prepared = pre.prepare(&cohort, DataRole::Resubstitution).unwrap();
        assert_eq!(prepared.patients.len(), 40);
        assert!(prepared
            .patients
            .iter()
            .all(|p| p.features.iter().all(|r| r.len() == 8 && r.iter().all(|v| v.is_finite()))));
    }
}
