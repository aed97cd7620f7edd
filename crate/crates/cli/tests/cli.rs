use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_visit-risk"))
}

fn fast_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let json = r#"{
        "seed": 3,
        "models": ["logistic", "cox"],
        "n_boot": 30,
        "importance_repeats": 2,
        "imputer": {"epochs": 2},
        "rsf": {"n_trees": 5}
    }"#;
    std::fs::write(&path, json).unwrap();
    path
}

fn generate(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("cohort_{seed}.csv"));
    let status = bin()
        .args(["generate", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    out
}

#[test]
fn label_summary_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate(dir.path(), 50, 1);
    let out = bin().args(["label-summary", "--cohort"]).arg(&cohort).output().unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["patients"], 50);
    let v = |k: &str| summary[k].as_u64().unwrap();
    assert_eq!(v("positive") + v("negative") + v("censored"), v("visits"));
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate(dir.path(), 120, 2);
    let config = fast_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["compare", "--cohort"])
            .arg(&cohort)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["comparison.csv", "manifest.json", "roc_pr.csv", "impact.json", "report.json", "calibration_cox.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn fit_then_validate_external() {
    let dir = tempfile::tempdir().unwrap();
    let dev = generate(dir.path(), 100, 4);
    let ext = generate(dir.path(), 80, 5);
    let config = fast_config(dir.path());
    let artifact = dir.path().join("pipeline.json");
    let status = bin()
        .args(["fit", "--model", "logistic", "--cohort"])
        .arg(&dev)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&artifact)
        .status()
        .unwrap();
    assert!(status.success());

    // Synthetic ids repeat across seeds, so the external cohort overlaps.
    let validate = |extra: &[&str]| {
        bin()
            .arg("validate")
            .arg("--pipeline")
            .arg(&artifact)
            .arg("--cohort")
            .arg(&ext)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join("ext"))
            .args(extra)
            .output()
            .unwrap()
    };
    let refused = validate(&[]);
    assert_eq!(refused.status.code(), Some(3), "{}", String::from_utf8_lossy(&refused.stderr));
    let ok = validate(&["--allow-overlap"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let imp = std::fs::read_to_string(dir.path().join("ext/importance.csv")).unwrap();
    assert_eq!(imp.lines().count(), 9);
    assert!(dir.path().join("ext/calibration_logistic.svg").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"sensitivity_floor": 2.0}"#).unwrap();
    let cohort = generate(dir.path(), 20, 6);
    let out = bin()
        .args(["label-summary", "--cohort"])
        .arg(&cohort)
        .arg("--config")
        .arg(&bad_config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let broken = dir.path().join("broken.csv");
    let text = std::fs::read_to_string(&cohort).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "p0,notaday,,,,,,,,,,100";
    std::fs::write(&broken, lines.join("\n")).unwrap();
    let out = bin().args(["label-summary", "--cohort"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
