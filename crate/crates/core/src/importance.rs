//! Permutation feature importance measured as loss of concordance.
//!
//! Feature `j` is shuffled across patients as a whole column: patient `i`
//! receives patient `pi(i)`'s values of that feature, aligned by position
//! counted back from the most recent visit. Sequence lengths, labels and
//! every other feature stay in place.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSet;
use crate::evaluation::{concordance_index, pooled, score_patients};
use crate::models::RiskModel;
use crate::{Error, Result};

/// Importance of every feature on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldImportance {
    pub baseline_c_index: f64,
    /// Baseline minus mean permuted C-index, per feature.
    pub decrease: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_decrease: f64,
    /// Sample standard deviation over folds; 0 with a single fold.
    pub sd: f64,
    pub fold_values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub features: Vec<FeatureImportance>,
}

fn c_index_of(model: &RiskModel, set: &PreparedSet) -> Result<f64> {
    let (scores, labels) = pooled(&score_patients(model, set)?);
    concordance_index(&scores, &labels)
}

/// Copy of `set` with feature `j` moved between patients by `perm`. When
/// the source history is shorter than the target, the source's earliest
/// value fills the older positions.
pub fn permute_feature(set: &PreparedSet, j: usize, perm: &[usize]) -> PreparedSet {
    let mut out = set.clone();
    for (i, target) in out.patients.iter_mut().enumerate() {
        let source = &set.patients[perm[i]].features;
        let n = target.features.len();
        for (t, row) in target.features.iter_mut().enumerate() {
            let back = n - 1 - t;
            let s = source.len().saturating_sub(1 + back);
            row[j] = source[s][j];
        }
    }
    out
}

pub fn permutation_importance(model: &RiskModel, set: &PreparedSet, n_repeats: usize, seed: u64) -> Result<FoldImportance> {
    if n_repeats == 0 {
        return Err(Error::Config("n_repeats must be at least 1".into()));
    }
    let baseline = c_index_of(model, set)?;
    let d = set.n_features();
    let n = set.patients.len();
    let jobs: Vec<(usize, usize)> = (0..d).flat_map(|j| (0..n_repeats).map(move |r| (j, r))).collect();
    let permuted: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((j * n_repeats + r) as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            c_index_of(model, &permute_feature(set, j, &perm))
        })
        .collect::<Result<_>>()?;
    let decrease = (0..d)
        .map(|j| baseline - permuted[j * n_repeats..(j + 1) * n_repeats].iter().sum::<f64>() / n_repeats as f64)
        .collect();
    Ok(FoldImportance {
        baseline_c_index: baseline,
        decrease,
    })
}

/// Mean and sample SD of per-fold importances.
pub fn aggregate_importance(feature_names: &[String], folds: &[FoldImportance]) -> ImportanceResult {
    let k = folds.len();
    let features = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let fold_values: Vec<f64> = folds.iter().map(|f| f.decrease[j]).collect();
            let mean = if k == 0 { 0.0 } else { fold_values.iter().sum::<f64>() / k as f64 };
            let sd = if k < 2 {
                0.0
            } else {
                (fold_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            };
            FeatureImportance {
                feature: name.clone(),
                mean_decrease: mean,
                sd,
                fold_values,
            }
        })
        .collect();
    ImportanceResult { features }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_set;
    use crate::models::{LogisticModel, ModelKind, ModelParams};

    fn zero_model(set: &PreparedSet) -> RiskModel {
        RiskModel {
            kind: ModelKind::Logistic,
            feature_names: set.feature_names.clone(),
            fingerprint: set.fingerprint(),
            params: ModelParams::Logistic(LogisticModel {
                intercept: 0.3,
                coefficients: vec![0.0; set.n_features()],
                iterations: 0,
            }),
        }
    }

    #[test]
    fn identity_permutation_keeps_set() {
        let set = toy_set();
        assert_eq!(permute_feature(&set, 0, &[0, 1]), set);
    }

    #[test]
    fn permutation_aligns_from_latest_visit() {
        let set = toy_set();
        let p = permute_feature(&set, 0, &[1, 0]);
        // patient 0 (3 visits) takes patient 1's column [-1, -1] padded with its first value
        let col: Vec<f64> = p.patients[0].features.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![-1.0, -1.0, -1.0]);
        let col: Vec<f64> = p.patients[1].features.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![0.5, 1.0]);
        assert_eq!(p.patients[0].features[0][1], 1.0);
        assert_eq!(p.patients[0].labels, set.patients[0].labels);
    }

    #[test]
    fn ignoring_model_has_zero_importance() {
        let mut set = toy_set();
        set.patients[1].labels = vec![crate::labeling::VisitLabel::Negative; 2];
        let r = permutation_importance(&zero_model(&set), &set, 5, 1).unwrap();
        assert!(r.decrease.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn aggregate_statistics() {
        let names = vec!["a".to_string()];
        let folds = vec![
            FoldImportance { baseline_c_index: 0.8, decrease: vec![0.1] },
            FoldImportance { baseline_c_index: 0.8, decrease: vec![0.3] },
        ];
        let r = aggregate_importance(&names, &folds);
        assert!((r.features[0].mean_decrease - 0.2).abs() < 1e-12);
        assert!((r.features[0].sd - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate_importance(&names, &folds[..1]).features[0].sd, 0.0);
    }
}
