//! Five risk models behind one scoring contract: every visit of a prepared
//! history gets a probability of death within the horizon.

pub mod cox;
pub mod logistic;
pub mod rsf;
pub mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSet;
use crate::features::FeatureFingerprint;
use crate::nn::recurrent::CellKind;
use crate::{Error, Result};

pub use cox::{fit_cox_rows, BaselineHazard, CoxConfig, CoxModel};
pub use logistic::{fit_logistic, LogisticConfig, LogisticModel};
pub use rsf::{fit_rsf_rows, RsfConfig, RsfModel};
pub use sequence::{fit_sequence, SequenceBatch, SequenceConfig, SequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Cox,
    Rsf,
    Gru,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Logistic, ModelKind::Cox, ModelKind::Rsf, ModelKind::Gru, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Cox => "cox",
            ModelKind::Rsf => "rsf",
            ModelKind::Gru => "gru",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, ModelKind::Gru | ModelKind::Lstm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}; expected logistic, cox, rsf, gru or lstm")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub logistic: LogisticConfig,
    pub cox: CoxConfig,
    pub rsf: RsfConfig,
    pub sequence: SequenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic(LogisticModel),
    Cox(CoxModel),
    Rsf(RsfModel),
    Sequence(SequenceModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub fingerprint: FeatureFingerprint,
    pub params: ModelParams,
}

impl RiskModel {
    /// Scores every visit of one prepared history. Static models score each
    /// visit on its own row; sequence models read the history up to the
    /// visit.
    pub fn score_history(&self, features: &[Vec<f64>]) -> Vec<f64> {
        match &self.params {
            ModelParams::Logistic(m) => features.iter().map(|x| m.score(x)).collect(),
            ModelParams::Cox(m) => features.iter().map(|x| m.score(x)).collect(),
            ModelParams::Rsf(m) => features.iter().map(|x| m.score(x)).collect(),
            ModelParams::Sequence(m) => m.score_history(features),
        }
    }

    /// Per-patient, per-visit scores for a prepared set.
    pub fn score_set(&self, set: &PreparedSet) -> Result<Vec<Vec<f64>>> {
        self.fingerprint.check(&set.fingerprint())?;
        Ok(set.patients.iter().map(|p| self.score_history(&p.features)).collect())
    }
}

/// Fits one model kind on a prepared training set.
pub fn fit_model(kind: ModelKind, train: &PreparedSet, config: &ModelConfig, seed: u64) -> Result<RiskModel> {
    let horizon = train.horizon_days as f64;
    let params = match kind {
        ModelKind::Logistic => {
            let rows = train.labeled_rows();
            ModelParams::Logistic(fit_logistic(&rows.x, &rows.y, &config.logistic)?)
        }
        ModelKind::Cox => {
            let rows = train.landmark_rows();
            ModelParams::Cox(fit_cox_rows(&rows.x, &rows.time, &rows.event, horizon, &config.cox)?)
        }
        ModelKind::Rsf => {
            let rows = train.landmark_rows();
            ModelParams::Rsf(fit_rsf_rows(&rows.x, &rows.time, &rows.event, horizon, &config.rsf, seed)?)
        }
        ModelKind::Gru | ModelKind::Lstm => {
            let cell = if kind == ModelKind::Gru { CellKind::Gru } else { CellKind::Lstm };
            let batch = SequenceBatch::from_set(train, config.sequence.max_len);
            ModelParams::Sequence(fit_sequence(&batch, cell, &config.sequence, seed)?)
        }
    };
    Ok(RiskModel {
        kind,
        feature_names: train.feature_names.clone(),
        fingerprint: train.fingerprint(),
        params,
    })
}
