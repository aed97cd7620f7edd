//! Deterministic emission of run artifacts: CSV tables, JSON reports, a run
//! manifest and minimal SVG charts. CSV files are the source of truth; the
//! charts only render them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::cv::{derive_seed, run_comparison, run_external, ComparisonReport, FoldPlan, MeanSd, Pipeline, PROTOCOL_NOTE};
use crate::evaluation::{evaluate, BandPoint, CurvePoint, EvaluationReport};
use crate::features::FeatureFingerprint;
use crate::impact::{CaseType, ImpactReport};
use crate::importance::ImportanceResult;
use crate::labeling::LabeledCohort;
use crate::{Error, Result};

/// Four decimal places, rounding half to even on the shortest decimal
/// form of the value (so 0.00125 gives 0.0012). Negative zero prints as
/// zero.
pub fn fmt4(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    // Display never uses an exponent and round-trips.
    let plain = v.abs().to_string();
    let (int, frac) = plain.split_once('.').unwrap_or((&plain, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(4)).collect();
    let rest = frac.get(4..).unwrap_or("");
    let round_up = match rest.as_bytes().first() {
        Some(b'6'..=b'9') => true,
        Some(b'5') => rest[1..].bytes().any(|b| b != b'0') || (digits[digits.len() - 1] - b'0') % 2 == 1,
        _ => false,
    };
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 4;
    let body = format!(
        "{}.{}",
        std::str::from_utf8(&digits[..split]).expect("ascii digits"),
        std::str::from_utf8(&digits[split..]).expect("ascii digits")
    );
    if v < 0.0 && digits.iter().any(|&d| d != b'0') {
        format!("-{body}")
    } else {
        body
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

/// Full SHA-256 hex digest of a value's JSON form.
pub fn digest_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to regenerate a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Base seed; every fold, model, bootstrap and permutation seed is
    /// derived from it by stream number.
    pub seed: u64,
    pub config: RunConfig,
    pub config_digest: String,
    pub cohort_digest: String,
    pub feature_names: Vec<String>,
    pub feature_fingerprint: FeatureFingerprint,
    pub fold_plan: Option<FoldPlan>,
    /// Files written next to the manifest, sorted.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(
        command: &str,
        config: &RunConfig,
        cohort: &C,
        feature_names: &[String],
        fold_plan: Option<FoldPlan>,
    ) -> Result<Self> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            config_digest: config.digest(),
            cohort_digest: digest_json(cohort)?,
            feature_names: feature_names.to_vec(),
            feature_fingerprint: FeatureFingerprint::of(feature_names),
            fold_plan,
            files: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub manifest: Manifest,
    pub comparison: Option<ComparisonReport>,
    pub evaluations: Vec<EvaluationReport>,
    /// Keyed by model name.
    pub impacts: BTreeMap<String, ImpactReport>,
    pub importance: Option<ImportanceResult>,
}

impl ReportBundle {
    pub fn new(manifest: Manifest) -> Self {
        ReportBundle {
            manifest,
            comparison: None,
            evaluations: Vec::new(),
            impacts: BTreeMap::new(),
            importance: None,
        }
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    protocol: &'a str,
    comparison: &'a Option<ComparisonReport>,
    evaluations: &'a [EvaluationReport],
}

/// Rounds every non-integer number in a JSON tree to four decimals.
fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r: f64 = fmt4(x).parse().expect("formatted float parses");
            serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn json_bytes<T: Serialize>(value: &T, round: bool) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    if round {
        v = round_json(v);
    }
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Integrity(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Integrity(format!("csv encoding failed: {e}")))
}

fn mean_sd_cells(m: Option<MeanSd>) -> [String; 2] {
    match m {
        Some(m) => [fmt4(m.mean), fmt4(m.sd)],
        None => [String::new(), String::new()],
    }
}

pub const COMPARISON_HEADER: [&str; 16] = [
    "model",
    "folds_used",
    "c_index_mean",
    "c_index_sd",
    "sensitivity_mean",
    "sensitivity_sd",
    "specificity_mean",
    "specificity_sd",
    "balanced_accuracy_mean",
    "balanced_accuracy_sd",
    "ppv_mean",
    "ppv_sd",
    "npv_mean",
    "npv_sd",
    "threshold_mean",
    "thresholds",
];

pub fn comparison_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.model.name().to_string(), r.folds_used.to_string()];
            row.extend(mean_sd_cells(Some(r.c_index)));
            for m in [r.sensitivity, r.specificity, r.balanced_accuracy, r.ppv, r.npv] {
                row.extend(mean_sd_cells(m));
            }
            row.push(fmt4(r.mean_threshold));
            row.push(r.thresholds.iter().map(|t| fmt4(*t)).collect::<Vec<_>>().join(";"));
            row
        })
        .collect();
    csv_bytes(&COMPARISON_HEADER, &rows)
}

pub fn calibration_csv(report: &EvaluationReport) -> Result<Vec<u8>> {
    let cal = &report.calibration;
    let rows: Vec<Vec<String>> = cal
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let fitted = cal.slope.zip(cal.intercept).map(|(s, c)| c + s * b.mean_predicted);
            vec![
                i.to_string(),
                fmt4(b.lower),
                fmt4(b.upper),
                fmt4(b.mean_predicted),
                fmt4(b.observed_rate),
                b.count.to_string(),
                fmt_opt(fitted),
            ]
        })
        .collect();
    csv_bytes(&["bin", "lower", "upper", "mean_predicted", "observed_rate", "count", "fitted"], &rows)
}

/// Raw ROC/PR sweeps plus the bootstrap bands on the fixed grid.
pub fn roc_pr_csv(reports: &[EvaluationReport]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for r in reports {
        let sweep = |curve: &str, pts: &[CurvePoint], rows: &mut Vec<Vec<String>>| {
            for p in pts {
                rows.push(vec![
                    r.model.clone(),
                    curve.into(),
                    "sweep".into(),
                    fmt_opt(p.threshold),
                    fmt4(p.x),
                    fmt4(p.y),
                    String::new(),
                    String::new(),
                ]);
            }
        };
        let band = |curve: &str, pts: &[BandPoint], rows: &mut Vec<Vec<String>>| {
            for p in pts {
                rows.push(vec![
                    r.model.clone(),
                    curve.into(),
                    "band".into(),
                    String::new(),
                    fmt4(p.x),
                    fmt4(p.y),
                    fmt4(p.low),
                    fmt4(p.high),
                ]);
            }
        };
        sweep("roc", &r.curves.roc, &mut rows);
        sweep("pr", &r.curves.pr, &mut rows);
        band("roc", &r.roc_band, &mut rows);
        band("pr", &r.pr_band, &mut rows);
    }
    csv_bytes(&["model", "curve", "kind", "threshold", "x", "y", "low", "high"], &rows)
}

fn case_name(c: CaseType) -> &'static str {
    match c {
        CaseType::TruePositive => "true_positive",
        CaseType::FalsePositive => "false_positive",
        CaseType::Other => "other",
    }
}

pub fn tiw_csv(impacts: &BTreeMap<String, ImpactReport>) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (model, rep) in impacts {
        for p in &rep.patients {
            rows.push(vec![
                model.clone(),
                p.patient_id.clone(),
                p.died.to_string(),
                case_name(p.case).into(),
                p.time_in_warning.to_string(),
                p.lead_time.map(|l| l.to_string()).unwrap_or_default(),
            ]);
        }
    }
    csv_bytes(&["model", "patient_id", "died", "case", "time_in_warning", "lead_time"], &rows)
}

pub fn importance_csv(result: Option<&ImportanceResult>) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = result
        .map(|r| r.features.as_slice())
        .unwrap_or_default()
        .iter()
        .map(|f| {
            vec![
                f.feature.clone(),
                fmt4(f.mean_decrease),
                fmt4(f.sd),
                f.fold_values.iter().map(|v| fmt4(*v)).collect::<Vec<_>>().join(";"),
            ]
        })
        .collect();
    csv_bytes(&["feature", "mean_decrease", "sd", "fold_values"], &rows)
}

mod svg {
    use super::*;

    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 56.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    pub struct Series {
        pub name: String,
        pub points: Vec<(f64, f64)>,
        pub band: Vec<(f64, f64, f64)>,
    }

    fn esc(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    }

    fn open(title: &str) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, esc(title));
        s
    }

    fn axes(s: &mut String, x_label: &str, y_label: &str, y_max: f64) {
        let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
        let _ = writeln!(s, "<path d=\"M{x0} {y1} L{x0} {y0} L{x1} {y0}\" fill=\"none\" stroke=\"black\"/>");
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let x = x0 + f * (x1 - x0);
            let y = y0 - f * (y0 - y1);
            let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.2}</text>", y0 + 16.0, f);
            let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.2}</text>", x0 - 6.0, y + 4.0, f * y_max);
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 14.0, esc(x_label));
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            H / 2.0,
            H / 2.0,
            esc(y_label)
        );
    }

    fn px(x: f64, y: f64, y_max: f64) -> (f64, f64) {
        (PAD + x * (W - 2.0 * PAD), H - PAD - (y / y_max) * (H - 2.0 * PAD))
    }

    fn legend(s: &mut String, names: &[&str]) {
        for (i, n) in names.iter().enumerate() {
            let y = PAD + 16.0 * i as f64;
            let c = COLORS[i % COLORS.len()];
            let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{c}\"/>", W - PAD - 110.0, y);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", W - PAD - 95.0, y + 9.0, esc(n));
        }
    }

    /// Lines on the unit square, optional shaded band per series.
    pub fn lines(title: &str, x_label: &str, y_label: &str, series: &[Series], diagonal: bool) -> String {
        let mut s = open(title);
        axes(&mut s, x_label, y_label, 1.0);
        if diagonal {
            let (a, b) = (px(0.0, 0.0, 1.0), px(1.0, 1.0, 1.0));
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
                a.0, a.1, b.0, b.1
            );
        }
        for (i, ser) in series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            if !ser.band.is_empty() {
                let mut d = String::new();
                for (k, &(x, lo, _)) in ser.band.iter().enumerate() {
                    let (a, b) = px(x, lo.clamp(0.0, 1.0), 1.0);
                    let _ = write!(d, "{}{a:.2} {b:.2} ", if k == 0 { "M" } else { "L" });
                }
                for &(x, _, hi) in ser.band.iter().rev() {
                    let (a, b) = px(x, hi.clamp(0.0, 1.0), 1.0);
                    let _ = write!(d, "L{a:.2} {b:.2} ");
                }
                let _ = writeln!(s, "<path d=\"{}Z\" fill=\"{c}\" fill-opacity=\"0.15\" stroke=\"none\"/>", d);
            }
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| {
                    let (a, b) = px(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0), 1.0);
                    format!("{a:.2},{b:.2}")
                })
                .collect();
            let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\"/>", pts.join(" "));
        }
        let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
        legend(&mut s, &names);
        s.push_str("</svg>\n");
        s
    }

    /// Vertical bars with optional error whiskers.
    pub fn bars(title: &str, y_label: &str, items: &[(String, f64, f64)]) -> String {
        let mut s = open(title);
        let y_max = items.iter().map(|(_, v, e)| v + e).fold(0.0_f64, f64::max).max(1e-9) * 1.1;
        axes(&mut s, "", y_label, y_max);
        let n = items.len().max(1) as f64;
        let slot = (W - 2.0 * PAD) / n;
        for (i, (name, v, e)) in items.iter().enumerate() {
            let x = PAD + slot * (i as f64 + 0.15);
            let (_, top) = px(0.0, v.max(0.0), y_max);
            let base = H - PAD;
            let c = COLORS[0];
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{c}\"/>",
                slot * 0.7,
                base - top
            );
            if *e > 0.0 {
                let cx = x + slot * 0.35;
                let (_, lo) = px(0.0, (v - e).max(0.0), y_max);
                let (_, hi) = px(0.0, v + e, y_max);
                let _ = writeln!(s, "<line x1=\"{cx:.2}\" y1=\"{lo:.2}\" x2=\"{cx:.2}\" y2=\"{hi:.2}\" stroke=\"black\"/>");
            }
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
                x + slot * 0.35,
                base + 30.0,
                esc(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes every artifact of the bundle into `dir` and returns the paths.
/// Emission is a pure function of the bundle, so identical bundles give
/// identical bytes.
pub fn emit_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    if let Some(cmp) = &bundle.comparison {
        files.insert("comparison.csv".into(), comparison_csv(cmp)?);
        let items: Vec<(String, f64, f64)> =
            cmp.rows.iter().map(|r| (r.model.name().to_string(), r.c_index.mean, r.c_index.sd)).collect();
        files.insert("comparison.svg".into(), svg::bars("C-index by model (mean, SD)", "C-index", &items).into_bytes());
    }

    for r in &bundle.evaluations {
        files.insert(format!("calibration_{}.csv", r.model), calibration_csv(r)?);
        let series = svg::Series {
            name: r.model.clone(),
            points: r.calibration.bins.iter().map(|b| (b.mean_predicted, b.observed_rate)).collect(),
            band: Vec::new(),
        };
        let title = match (r.calibration.slope, r.calibration.intercept) {
            (Some(s), Some(c)) => format!("Calibration {}: slope {}, intercept {}", r.model, fmt4(s), fmt4(c)),
            _ => format!("Calibration {}", r.model),
        };
        files.insert(
            format!("calibration_{}.svg", r.model),
            svg::lines(&title, "mean predicted", "observed rate", &[series], true).into_bytes(),
        );
    }

    if !bundle.evaluations.is_empty() {
        files.insert("roc_pr.csv".into(), roc_pr_csv(&bundle.evaluations)?);
        let roc: Vec<svg::Series> = bundle
            .evaluations
            .iter()
            .map(|r| svg::Series {
                name: r.model.clone(),
                points: r.curves.roc.iter().map(|p| (p.x, p.y)).collect(),
                band: r.roc_band.iter().map(|b| (b.x, b.low, b.high)).collect(),
            })
            .collect();
        let pr: Vec<svg::Series> = bundle
            .evaluations
            .iter()
            .map(|r| svg::Series {
                name: r.model.clone(),
                points: r.curves.pr.iter().map(|p| (p.x, p.y)).collect(),
                band: r.pr_band.iter().map(|b| (b.x, b.low, b.high)).collect(),
            })
            .collect();
        files.insert("roc.svg".into(), svg::lines("ROC", "false positive rate", "true positive rate", &roc, true).into_bytes());
        files.insert("pr.svg".into(), svg::lines("Precision-recall", "recall", "precision", &pr, false).into_bytes());
    }

    if !bundle.impacts.is_empty() {
        files.insert("impact.json".into(), json_bytes(&bundle.impacts, true)?);
        files.insert("tiw.csv".into(), tiw_csv(&bundle.impacts)?);
        let mut items = Vec::new();
        for (m, rep) in &bundle.impacts {
            items.push((format!("{m} TP"), rep.median_tiw_true_positive.unwrap_or(0.0), 0.0));
            items.push((format!("{m} FP"), rep.median_tiw_false_positive.unwrap_or(0.0), 0.0));
        }
        files.insert(
            "tiw.svg".into(),
            svg::bars("Median time in warning (days)", "days", &items).into_bytes(),
        );
    }

    files.insert("importance.csv".into(), importance_csv(bundle.importance.as_ref())?);
    let items: Vec<(String, f64, f64)> = bundle
        .importance
        .iter()
        .flat_map(|r| r.features.iter().map(|f| (f.feature.clone(), f.mean_decrease, f.sd)))
        .collect();
    files.insert(
        "importance.svg".into(),
        svg::bars("Permutation importance (C-index decrease)", "decrease", &items).into_bytes(),
    );

    let report = ReportJson {
        protocol: PROTOCOL_NOTE,
        comparison: &bundle.comparison,
        evaluations: &bundle.evaluations,
    };
    files.insert("report.json".into(), json_bytes(&report, true)?);

    let mut manifest = bundle.manifest.clone();
    manifest.files = files.keys().cloned().chain(["manifest.json".to_string()]).collect();
    manifest.files.sort();
    files.insert("manifest.json".into(), json_bytes(&manifest, false)?);

    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(&name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// What `compare` emits: the fold comparison, pooled out-of-fold
/// evaluation and alert burden per model, and an empty importance table.
pub fn compare_bundle(cohort: &LabeledCohort, feature_names: &[String], config: &RunConfig) -> Result<ReportBundle> {
    let cmp = run_comparison(cohort, feature_names, config)?;
    let manifest = Manifest::new("compare", config, cohort, feature_names, Some(cmp.plan.clone()))?;
    let mut bundle = ReportBundle::new(manifest);
    for (i, &m) in config.models.iter().enumerate() {
        let oof = cmp.out_of_fold(m);
        let seed = derive_seed(config.seed, 7000 + i as u64);
        bundle.evaluations.push(evaluate(m.name(), &oof, &config.evaluation_config(), seed)?);
        bundle.impacts.insert(m.name().to_string(), cmp.impact(m)?);
    }
    bundle.comparison = Some(cmp.report);
    Ok(bundle)
}

/// What `validate` emits for a fitted pipeline applied to another cohort.
pub fn validation_bundle(
    pipeline: &Pipeline,
    cohort: &LabeledCohort,
    feature_names: &[String],
    config: &RunConfig,
    allow_overlap: bool,
) -> Result<ReportBundle> {
    let ext = run_external(pipeline, cohort, feature_names, config, allow_overlap)?;
    let manifest = Manifest::new("validate", config, cohort, feature_names, None)?;
    let mut bundle = ReportBundle::new(manifest);
    bundle.impacts.insert(pipeline.model.kind.name().to_string(), ext.impact);
    bundle.evaluations.push(ext.evaluation);
    bundle.importance = Some(ext.importance);
    Ok(bundle)
}
