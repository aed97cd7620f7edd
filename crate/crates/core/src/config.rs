//! Run configuration, read from JSON. Every field has a default, so `{}` is
//! a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::EvaluationConfig;
use crate::labeling::HORIZON_DAYS;
use crate::models::{CoxConfig, LogisticConfig, ModelConfig, ModelKind, RsfConfig, SequenceConfig};
use crate::preprocess::{ImputerConfig, ImputerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputerSettings {
    /// Imputer used in front of logistic, Cox and forest models.
    pub static_kind: ImputerKind,
    /// Imputer used in front of the recurrent models.
    pub sequence_kind: ImputerKind,
    #[serde(flatten)]
    pub training: ImputerConfig,
}

impl Default for ImputerSettings {
    fn default() -> Self {
        ImputerSettings {
            static_kind: ImputerKind::DenoisingAutoencoder,
            sequence_kind: ImputerKind::TemporalAutoencoder,
            training: ImputerConfig::default(),
        }
    }
}

impl ImputerSettings {
    pub fn kind_for(&self, model: ModelKind) -> ImputerKind {
        if model.is_sequence() {
            self.sequence_kind
        } else {
            self.static_kind
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon_days: i64,
    pub sensitivity_floor: f64,
    pub k_folds: usize,
    pub models: Vec<ModelKind>,
    pub imputer: ImputerSettings,
    pub logistic: LogisticConfig,
    pub cox: CoxConfig,
    pub rsf: RsfConfig,
    pub sequence: SequenceConfig,
    pub n_boot: usize,
    pub importance_repeats: usize,
    pub calibration_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            horizon_days: HORIZON_DAYS,
            sensitivity_floor: 0.85,
            k_folds: 3,
            models: ModelKind::ALL.to_vec(),
            imputer: ImputerSettings::default(),
            logistic: LogisticConfig::default(),
            cox: CoxConfig::default(),
            rsf: RsfConfig::default(),
            sequence: SequenceConfig::default(),
            n_boot: 1000,
            importance_repeats: 10,
            calibration_bins: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_days <= 0 {
            return Err(Error::Config("horizon_days must be positive".into()));
        }
        if !(self.sensitivity_floor > 0.0 && self.sensitivity_floor <= 1.0) {
            return Err(Error::Config("sensitivity_floor must lie in (0, 1]".into()));
        }
        if self.k_folds == 0 {
            return Err(Error::Config("k_folds must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::Config("models list contains duplicates".into()));
        }
        if self.n_boot == 0 || self.importance_repeats == 0 || self.calibration_bins == 0 {
            return Err(Error::Config("n_boot, importance_repeats and calibration_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            logistic: self.logistic.clone(),
            cox: self.cox.clone(),
            rsf: self.rsf.clone(),
            sequence: self.sequence.clone(),
        }
    }

    pub fn evaluation_config(&self) -> EvaluationConfig {
        EvaluationConfig {
            sensitivity_floor: self.sensitivity_floor,
            calibration_bins: self.calibration_bins,
            n_boot: self.n_boot,
            ..EvaluationConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form, defaults filled in.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.models.len(), 5);
        assert_eq!(c.imputer.kind_for(ModelKind::Gru), ImputerKind::TemporalAutoencoder);
        assert_eq!(c.imputer.kind_for(ModelKind::Cox), ImputerKind::DenoisingAutoencoder);
    }

    #[test]
    fn partial_json_and_validation() {
        let c: RunConfig = serde_json::from_str(r#"{"models": ["gru"], "rsf": {"n_trees": 5}, "imputer": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.models, vec![ModelKind::Gru]);
        assert_eq!(c.rsf.n_trees, 5);
        assert_eq!(c.rsf.mtry, 3);
        assert_eq!(c.imputer.training.epochs, 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
        let bad = RunConfig {
            sensitivity_floor: 1.5,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_ne!(RunConfig::default().digest(), c.digest());
    }
}
