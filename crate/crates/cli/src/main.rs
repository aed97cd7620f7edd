use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use visit_risk::cohort::{generate_synthetic, load_cohort, write_cohort, SyntheticSpec};
use visit_risk::config::RunConfig;
use visit_risk::cv::{cv_importance, fit_pipeline, run_comparison, Pipeline};
use visit_risk::features::default_feature_names;
use visit_risk::labeling::{label_cohort, LabeledCohort};
use visit_risk::models::ModelKind;
use visit_risk::report::{compare_bundle, emit_bundle, validation_bundle, Manifest, ReportBundle};
use visit_risk::{Error, Result};

/// Visit-level mortality risk modelling for longitudinal cohorts.
#[derive(Debug, Parser)]
#[command(name = "visit-risk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV from a generator spec (JSON).
    Generate {
        /// Generator spec; when absent, `--n` and `--seed` are used with
        /// default settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print visit label counts as JSON.
    LabelSummary {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validated comparison of the configured models.
    Compare {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit preprocessing and one model on a whole cohort.
    Fit {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        /// Pipeline artifact (JSON) to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a fitted pipeline to an external cohort.
    Validate {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Score patients that were part of the development cohort.
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Alert burden of one model across cross-validation test folds.
    Impact {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated permutation importance of one model.
    Importance {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn labeled(path: &Path, config: &RunConfig) -> Result<LabeledCohort> {
    label_cohort(&load_cohort(path)?, config.horizon_days)
}

fn single_model(config: RunConfig, model: ModelKind) -> RunConfig {
    RunConfig {
        models: vec![model],
        ..config
    }
}

fn emit(bundle: &ReportBundle, out: &Path) -> Result<()> {
    for path in emit_bundle(bundle, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let names = default_feature_names();
    match cli.command {
        Command::Generate { spec, n, seed, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::new(n, seed),
            };
            let cohort = generate_synthetic(&spec)?;
            write_cohort(&out, &cohort)?;
            println!("{}", out.display());
        }
        Command::LabelSummary { cohort, config } => {
            let config = load_config(config.as_deref())?;
            let labeled = labeled(&cohort, &config)?;
            println!("{}", serde_json::to_string_pretty(&labeled.summary)?);
        }
        Command::Compare { cohort, config, out } => {
            let config = load_config(config.as_deref())?;
            let labeled = labeled(&cohort, &config)?;
            emit(&compare_bundle(&labeled, &names, &config)?, &out)?;
        }
        Command::Fit {
            cohort,
            config,
            model,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let labeled = labeled(&cohort, &config)?;
            fit_pipeline(&labeled, &names, model, &config)?.save(&out)?;
            println!("{}", out.display());
        }
        Command::Validate {
            pipeline,
            cohort,
            config,
            out,
            allow_overlap,
        } => {
            let config = load_config(config.as_deref())?;
            let pipeline = Pipeline::load(&pipeline)?;
            let labeled = labeled(&cohort, &config)?;
            emit(&validation_bundle(&pipeline, &labeled, &names, &config, allow_overlap)?, &out)?;
        }
        Command::Impact {
            cohort,
            config,
            model,
            out,
        } => {
            let config = single_model(load_config(config.as_deref())?, model);
            let labeled = labeled(&cohort, &config)?;
            let cmp = run_comparison(&labeled, &names, &config)?;
            let manifest = Manifest::new("impact", &config, &labeled, &names, Some(cmp.plan.clone()))?;
            let mut bundle = ReportBundle::new(manifest);
            bundle.impacts.insert(model.name().to_string(), cmp.impact(model)?);
            emit(&bundle, &out)?;
        }
        Command::Importance {
            cohort,
            config,
            model,
            out,
        } => {
            let config = single_model(load_config(config.as_deref())?, model);
            let labeled = labeled(&cohort, &config)?;
            let result = cv_importance(&labeled, &names, model, &config)?;
            let manifest = Manifest::new("importance", &config, &labeled, &names, None)?;
            let mut bundle = ReportBundle::new(manifest);
            bundle.importance = Some(result);
            emit(&bundle, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
