use serde::{Deserialize, Serialize};

use super::FoldFingerprint;
use crate::features::default_feature_names;
use crate::labeling::LabeledVisit;
use crate::{Error, Result};

/// Per-feature z-score standardization estimated on observed training values
/// (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose observed values were constant; their std is set to 1.
    pub degenerate: Vec<String>,
    pub fit_fingerprint: FoldFingerprint,
}

/// Fits on the default eight-feature layout.
pub fn fit_scaler(train_visits: &[LabeledVisit]) -> Result<Scaler> {
    Scaler::fit(&default_feature_names(), train_visits.iter())
}

impl Scaler {
    pub fn fit<'a>(feature_names: &[String], visits: impl Iterator<Item = &'a LabeledVisit> + Clone) -> Result<Self> {
        let d = feature_names.len();
        let mut count = vec![0usize; d];
        let mut sum = vec![0.0; d];
        for v in visits.clone() {
            if v.features.len() != d {
                return Err(Error::Shape(format!(
                    "visit of {} has {} features, expected {d}",
                    v.patient_id,
                    v.features.len()
                )));
            }
            for (j, x) in v.features.iter().enumerate() {
                if let Some(x) = x {
                    count[j] += 1;
                    sum[j] += x;
                }
            }
        }
        for j in 0..d {
            if count[j] < 2 {
                return Err(Error::Config(format!(
                    "feature {} has {} observed training value(s); at least 2 are needed",
                    feature_names[j], count[j]
                )));
            }
        }
        let mean: Vec<f64> = (0..d).map(|j| sum[j] / count[j] as f64).collect();
        let mut ss = vec![0.0; d];
        for v in visits.clone() {
            for (j, x) in v.features.iter().enumerate() {
                if let Some(x) = x {
                    ss[j] += (x - mean[j]).powi(2);
                }
            }
        }
        let mut degenerate = Vec::new();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let s = (ss[j] / count[j] as f64).sqrt();
                if s > 1e-12 * mean[j].abs().max(1.0) {
                    s
                } else {
                    log::warn!("feature {} is constant in the training fold; using std = 1", feature_names[j]);
                    degenerate.push(feature_names[j].clone());
                    1.0
                }
            })
            .collect();
        let fit_fingerprint = FoldFingerprint::from_ids(visits.map(|v| v.patient_id.as_str()));
        Ok(Scaler {
            feature_names: feature_names.to_vec(),
            mean,
            std,
            degenerate,
            fit_fingerprint,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[Option<f64>]) -> Vec<Option<f64>> {
        x.iter()
            .enumerate()
            .map(|(j, v)| v.map(|v| (v - self.mean[j]) / self.std[j]))
            .collect()
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, v)| v * self.std[j] + self.mean[j]).collect()
    }
}
