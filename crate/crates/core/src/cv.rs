//! Patient-level stratified cross-validation, model comparison and the
//! fitted development pipeline used for external validation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::PreparedSet;
use crate::evaluation::{
    concordance_index, evaluate, pooled, score_patients, select_threshold, EvaluationReport, OperatingPoint,
    ScoredPatient,
};
use crate::features::FeatureFingerprint;
use crate::impact::{impact_report, summarize_traces, AlertTrace, ImpactReport};
use crate::importance::{aggregate_importance, permutation_importance, FoldImportance, ImportanceResult};
use crate::labeling::LabeledCohort;
use crate::models::{fit_model, ModelKind, RiskModel};
use crate::preprocess::{DataRole, ImputerKind, Preprocessor};
use crate::{Error, Result};

/// Evaluation protocol note carried in every comparison report.
pub const PROTOCOL_NOTE: &str = "Operating thresholds are selected on each test fold's own scores at the \
sensitivity floor. This measures achievable operating points; a deployed threshold must be fixed on \
separate local calibration data.";

/// A seed derived from `seed` for a numbered purpose.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Patient ids of each fold.
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// All patients outside `fold`; with a single fold, every patient.
    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        if self.k == 1 {
            return self.folds[0].clone();
        }
        self.folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect()
    }
}

/// Stratifies patients by whether they have any positive visit, shuffles
/// each stratum and deals it round-robin across folds.
pub fn make_folds(cohort: &LabeledCohort, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for positive in [true, false] {
        let mut stratum: Vec<String> = cohort
            .patients
            .iter()
            .filter(|p| p.has_positive() == positive)
            .map(|p| p.patient_id.clone())
            .collect();
        if stratum.len() < k {
            return Err(Error::Config(format!(
                "{} stratum has {} patient(s), fewer than k = {k}",
                if positive { "positive" } else { "negative" },
                stratum.len()
            )));
        }
        stratum.shuffle(&mut rng);
        for id in stratum {
            folds[next % k].push(id);
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample SD over folds; 0 with one fold.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanSd { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub folds_used: usize,
    pub c_index: MeanSd,
    pub sensitivity: Option<MeanSd>,
    pub specificity: Option<MeanSd>,
    pub balanced_accuracy: Option<MeanSd>,
    pub ppv: Option<MeanSd>,
    pub npv: Option<MeanSd>,
    pub thresholds: Vec<f64>,
    pub mean_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub protocol: String,
    pub sensitivity_floor: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub skipped_folds: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

/// One model's result on one test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: ModelKind,
    pub c_index: f64,
    pub operating_point: OperatingPoint,
    pub test_patients: Vec<ScoredPatient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub plan: FoldPlan,
    pub report: ComparisonReport,
    /// Ordered by fold, then by the configured model order.
    pub outcomes: Vec<FoldOutcome>,
}

impl Comparison {
    /// Out-of-fold scored patients of one model.
    pub fn out_of_fold(&self, model: ModelKind) -> Vec<ScoredPatient> {
        self.outcomes
            .iter()
            .filter(|o| o.model == model)
            .flat_map(|o| o.test_patients.iter().cloned())
            .collect()
    }

    /// Alert burden with each test fold thresholded at its own operating
    /// point.
    pub fn impact(&self, model: ModelKind) -> Result<ImpactReport> {
        let mut traces = Vec::new();
        let mut thresholds = Vec::new();
        for o in self.outcomes.iter().filter(|o| o.model == model) {
            thresholds.push(o.operating_point.threshold);
            traces.extend(o.test_patients.iter().map(|p| AlertTrace::new(p, o.operating_point.threshold)));
        }
        let mean = thresholds.iter().sum::<f64>() / thresholds.len().max(1) as f64;
        summarize_traces(&traces, mean)
    }
}

/// Train and test data of one fold, preprocessed per imputer kind.
struct FoldData {
    fold: usize,
    train: LabeledCohort,
    test: LabeledCohort,
    role: DataRole,
}

impl FoldData {
    fn new(cohort: &LabeledCohort, plan: &FoldPlan, fold: usize) -> Result<Self> {
        Ok(FoldData {
            fold,
            train: cohort.subset(&plan.train_ids(fold))?,
            test: cohort.subset(plan.test_ids(fold))?,
            role: if plan.k == 1 { DataRole::Resubstitution } else { DataRole::Evaluation },
        })
    }

    fn is_usable(&self) -> bool {
        let s = &self.test.summary;
        s.positive > 0 && s.negative > 0
    }

    fn prepare(
        &self,
        names: &[String],
        kind: ImputerKind,
        config: &RunConfig,
    ) -> Result<(PreparedSet, PreparedSet)> {
        let seed = derive_seed(config.seed, 100 + self.fold as u64);
        let pre = Preprocessor::fit(&self.train, names, kind, &config.imputer.training, seed)?;
        Ok((pre.prepare(&self.train, DataRole::Training)?, pre.prepare(&self.test, self.role)?))
    }
}

/// A fold's test result with the fitted model and its prepared test set.
type FittedFold = (FoldOutcome, RiskModel, PreparedSet);

fn fold_models(
    data: &FoldData,
    names: &[String],
    config: &RunConfig,
) -> Result<Vec<FittedFold>> {
    let mut prepared: BTreeMap<ImputerKind, (PreparedSet, PreparedSet)> = BTreeMap::new();
    for &m in &config.models {
        let kind = config.imputer.kind_for(m);
        if let std::collections::btree_map::Entry::Vacant(slot) = prepared.entry(kind) {
            slot.insert(data.prepare(names, kind, config)?);
        }
    }
    let model_config = config.model_config();
    config
        .models
        .par_iter()
        .map(|&m| {
            let (train, test) = &prepared[&config.imputer.kind_for(m)];
            let seed = derive_seed(config.seed, 1000 + 10 * data.fold as u64 + m as u64);
            let model = fit_model(m, train, &model_config, seed)?;
            let test_patients = score_patients(&model, test)?;
            let (scores, labels) = pooled(&test_patients);
            let outcome = FoldOutcome {
                fold: data.fold,
                model: m,
                c_index: concordance_index(&scores, &labels)?,
                operating_point: select_threshold(&scores, &labels, config.sensitivity_floor)?,
                test_patients,
            };
            Ok((outcome, model, test.clone()))
        })
        .collect()
}

fn usable_folds(cohort: &LabeledCohort, plan: &FoldPlan) -> Result<(Vec<FoldData>, Vec<usize>)> {
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for fold in 0..plan.k {
        let data = FoldData::new(cohort, plan, fold)?;
        if data.is_usable() {
            usable.push(data);
        } else {
            log::warn!("fold {fold} skipped: its test patients have a single label class");
            skipped.push(fold);
        }
    }
    if usable.len() < plan.k.min(2) {
        return Err(Error::UndefinedMetric(format!(
            "only {} of {} folds have both label classes",
            usable.len(),
            plan.k
        )));
    }
    Ok((usable, skipped))
}

fn collect_values(outcomes: &[&FoldOutcome], f: impl Fn(&OperatingPoint) -> Option<f64>) -> Option<MeanSd> {
    let v: Vec<f64> = outcomes.iter().filter_map(|o| f(&o.operating_point)).collect();
    MeanSd::of(&v)
}

/// Fits every configured model on every fold and summarizes the test-fold
/// results as mean (SD) over folds.
pub fn run_comparison(cohort: &LabeledCohort, feature_names: &[String], config: &RunConfig) -> Result<Comparison> {
    config.validate()?;
    let plan = make_folds(cohort, config.k_folds, config.seed)?;
    let (folds, skipped) = usable_folds(cohort, &plan)?;
    let per_fold: Vec<Vec<FittedFold>> = folds
        .par_iter()
        .map(|data| fold_models(data, feature_names, config))
        .collect::<Result<_>>()?;
    let outcomes: Vec<FoldOutcome> = per_fold.into_iter().flatten().map(|(o, _, _)| o).collect();

    let rows = config
        .models
        .iter()
        .map(|&m| {
            let mine: Vec<&FoldOutcome> = outcomes.iter().filter(|o| o.model == m).collect();
            let c: Vec<f64> = mine.iter().map(|o| o.c_index).collect();
            let thresholds: Vec<f64> = mine.iter().map(|o| o.operating_point.threshold).collect();
            ComparisonRow {
                model: m,
                folds_used: mine.len(),
                c_index: MeanSd::of(&c).expect("at least one usable fold"),
                sensitivity: collect_values(&mine, |op| op.sensitivity),
                specificity: collect_values(&mine, |op| op.specificity),
                balanced_accuracy: collect_values(&mine, |op| op.balanced_accuracy),
                ppv: collect_values(&mine, |op| op.ppv),
                npv: collect_values(&mine, |op| op.npv),
                mean_threshold: thresholds.iter().sum::<f64>() / thresholds.len() as f64,
                thresholds,
            }
        })
        .collect();
    Ok(Comparison {
        plan,
        report: ComparisonReport {
            protocol: PROTOCOL_NOTE.to_string(),
            sensitivity_floor: config.sensitivity_floor,
            k_folds: config.k_folds,
            seed: config.seed,
            skipped_folds: skipped,
            rows,
        },
        outcomes,
    })
}

/// Permutation importance of one model, computed on each test fold.
pub fn cv_importance(
    cohort: &LabeledCohort,
    feature_names: &[String],
    model: ModelKind,
    config: &RunConfig,
) -> Result<ImportanceResult> {
    let config = RunConfig {
        models: vec![model],
        ..config.clone()
    };
    config.validate()?;
    let plan = make_folds(cohort, config.k_folds, config.seed)?;
    let (folds, _) = usable_folds(cohort, &plan)?;
    let per_fold: Vec<FoldImportance> = folds
        .par_iter()
        .map(|data| {
            let (_, fitted, test) = fold_models(data, feature_names, &config)?.remove(0);
            let seed = derive_seed(config.seed, 5000 + data.fold as u64);
            permutation_importance(&fitted, &test, config.importance_repeats, seed)
        })
        .collect::<Result<_>>()?;
    Ok(aggregate_importance(feature_names, &per_fold))
}

pub const PIPELINE_VERSION: u32 = 1;

/// Preprocessor and model fitted on a whole development cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub version: u32,
    pub horizon_days: i64,
    pub feature_names: Vec<String>,
    pub feature_fingerprint: FeatureFingerprint,
    pub preprocessor: Preprocessor,
    pub model: RiskModel,
}

pub fn fit_pipeline(cohort: &LabeledCohort, feature_names: &[String], model: ModelKind, config: &RunConfig) -> Result<Pipeline> {
    config.validate()?;
    let pre = Preprocessor::fit(
        cohort,
        feature_names,
        config.imputer.kind_for(model),
        &config.imputer.training,
        derive_seed(config.seed, 100),
    )?;
    let train = pre.prepare(cohort, DataRole::Training)?;
    let fitted = fit_model(model, &train, &config.model_config(), derive_seed(config.seed, 1000 + model as u64))?;
    Ok(Pipeline {
        version: PIPELINE_VERSION,
        horizon_days: cohort.horizon_days,
        feature_names: feature_names.to_vec(),
        feature_fingerprint: FeatureFingerprint::of(feature_names),
        preprocessor: pre,
        model: fitted,
    })
}

impl Pipeline {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let p: Pipeline = serde_json::from_slice(&bytes)?;
        if p.version != PIPELINE_VERSION {
            return Err(Error::Config(format!(
                "pipeline artifact version {} is not supported (expected {PIPELINE_VERSION})",
                p.version
            )));
        }
        Ok(p)
    }

    /// Scores a labeled cohort without refitting anything.
    pub fn score(&self, cohort: &LabeledCohort, feature_names: &[String], role: DataRole) -> Result<Vec<ScoredPatient>> {
        self.feature_fingerprint.check(&FeatureFingerprint::of(feature_names))?;
        if cohort.horizon_days != self.horizon_days {
            return Err(Error::Config(format!(
                "cohort labeled at {} days, pipeline trained at {}",
                cohort.horizon_days, self.horizon_days
            )));
        }
        let set = self.preprocessor.prepare(cohort, role)?;
        score_patients(&self.model, &set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReport {
    pub evaluation: EvaluationReport,
    pub impact: ImpactReport,
    pub importance: ImportanceResult,
}

/// Applies a fitted pipeline to another cohort. The threshold is selected
/// afresh on that cohort at the floor. Patients seen during fitting are
/// refused unless `allow_overlap` is set.
pub fn run_external(
    pipeline: &Pipeline,
    cohort: &LabeledCohort,
    feature_names: &[String],
    config: &RunConfig,
    allow_overlap: bool,
) -> Result<ExternalReport> {
    let role = if allow_overlap { DataRole::Resubstitution } else { DataRole::Evaluation };
    let patients = pipeline.score(cohort, feature_names, role)?;
    let evaluation = evaluate(
        pipeline.model.kind.name(),
        &patients,
        &config.evaluation_config(),
        derive_seed(config.seed, 9000),
    )?;
    let impact = impact_report(&patients, evaluation.operating_point.threshold)?;
    let set = pipeline.preprocessor.prepare(cohort, role)?;
    let fold = permutation_importance(&pipeline.model, &set, config.importance_repeats, derive_seed(config.seed, 9001))?;
    Ok(ExternalReport {
        evaluation,
        impact,
        importance: aggregate_importance(feature_names, &[fold]),
    })
}
