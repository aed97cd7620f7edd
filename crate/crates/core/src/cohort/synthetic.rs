//! Ground-truth cohort generator.
//!
//! Death times follow a Weibull proportional-hazards law whose log-hazard is
//! linear in standardized patient-level baseline covariates. On top of that,
//! a terminal trajectory (falling bmi and blood pressure, rising pulse and
//! ecog) ramps up over the last `window_days` before death, so that the
//! visit sequence carries temporal signal that a single visit does not.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Outcome, PatientTimeline, VisitRecord};
use crate::features::*;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullBaseline {
    pub shape: f64,
    pub scale_days: f64,
}

impl Default for WeibullBaseline {
    fn default() -> Self {
        WeibullBaseline {
            shape: 1.5,
            scale_days: 450.0,
        }
    }
}

/// Amplitudes of the pre-death trajectory, reached on the day of death.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySignal {
    pub window_days: f64,
    pub bmi_decline: f64,
    pub pulse_rise: f64,
    pub systolic_drop: f64,
    pub ecog_rise: f64,
}

impl Default for TrajectorySignal {
    fn default() -> Self {
        TrajectorySignal {
            window_days: 240.0,
            bmi_decline: 3.0,
            pulse_rise: 10.0,
            systolic_drop: 8.0,
            ecog_rise: 1.0,
        }
    }
}

impl TrajectorySignal {
    pub fn none() -> Self {
        TrajectorySignal {
            window_days: 240.0,
            bmi_decline: 0.0,
            pulse_rise: 0.0,
            systolic_drop: 0.0,
            ecog_rise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub visit_interval_mean_days: f64,
    #[serde(default = "default_followup")]
    pub max_followup_days: i64,
    /// Log-hazard weights per feature (in `FEATURE_NAMES` order), applied to
    /// the standardized patient-level baseline of that feature.
    #[serde(default = "default_coefficients")]
    pub hazard_coefficients: Vec<f64>,
    #[serde(default = "default_censoring")]
    pub censoring_rate: f64,
    #[serde(default = "default_missingness")]
    pub missingness_rate: f64,
    #[serde(default)]
    pub baseline: WeibullBaseline,
    #[serde(default)]
    pub trajectory: TrajectorySignal,
}

fn default_interval() -> f64 {
    42.0
}
fn default_followup() -> i64 {
    720
}
fn default_coefficients() -> Vec<f64> {
    vec![0.3, 0.0, 0.2, 0.4, 0.2, -0.3, -0.5, 0.3]
}
fn default_censoring() -> f64 {
    0.3
}
fn default_missingness() -> f64 {
    0.1
}

impl SyntheticSpec {
    pub fn new(n_patients: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_patients,
            seed,
            visit_interval_mean_days: default_interval(),
            max_followup_days: default_followup(),
            hazard_coefficients: default_coefficients(),
            censoring_rate: default_censoring(),
            missingness_rate: default_missingness(),
            baseline: WeibullBaseline::default(),
            trajectory: TrajectorySignal::default(),
        }
    }

    /// Cohort whose mortality is only visible through the bmi trend: baseline
    /// levels carry no hazard and only bmi moves before death.
    pub fn bmi_trend(n_patients: usize, seed: u64) -> Self {
        SyntheticSpec {
            hazard_coefficients: vec![0.0; N_FEATURES],
            trajectory: TrajectorySignal {
                window_days: 240.0,
                bmi_decline: 3.0,
                pulse_rise: 0.0,
                systolic_drop: 0.0,
                ecog_rise: 0.0,
            },
            ..SyntheticSpec::new(n_patients, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        for (name, rate) in [("censoring_rate", self.censoring_rate), ("missingness_rate", self.missingness_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        if self.hazard_coefficients.len() != N_FEATURES {
            return bad(format!(
                "hazard_coefficients needs {N_FEATURES} entries, got {}",
                self.hazard_coefficients.len()
            ));
        }
        if self.hazard_coefficients.iter().any(|c| !c.is_finite()) {
            return bad("hazard_coefficients must be finite".into());
        }
        if !(self.visit_interval_mean_days >= 1.0) {
            return bad("visit_interval_mean_days must be at least 1".into());
        }
        if self.max_followup_days < 1 {
            return bad("max_followup_days must be at least 1".into());
        }
        if !(self.baseline.shape > 0.0 && self.baseline.scale_days > 0.0) {
            return bad("Weibull shape and scale must be positive".into());
        }
        if !(self.trajectory.window_days > 0.0) {
            return bad("trajectory window must be positive".into());
        }
        Ok(())
    }
}

/// Population mean and standard deviation of each patient-level latent
/// baseline quantity, used to standardize it inside the log-hazard.
const LATENT_MOMENTS: [(f64, f64); N_FEATURES] = [
    (70.0, 8.0),     // age at enrollment
    (1.0, 0.1732),   // visit-interval multiplier
    (0.2, 0.4),      // dose reduced at enrollment
    (0.75, 0.6982),  // ecog at enrollment
    (0.1, 0.0577),   // per-visit adverse-event rate
    (130.0, 15.0),   // systolic bp
    (27.0, 4.0),     // bmi
    (78.0, 10.0),    // pulse
];

struct Baseline {
    latent: [f64; N_FEATURES],
}

fn draw_baseline(rng: &mut ChaCha8Rng) -> Baseline {
    let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64| {
        Normal::new(mean, sd).unwrap().sample(rng).clamp(lo, hi)
    };
    let ecog = {
        let u: f64 = rng.random();
        if u < 0.40 {
            0.0
        } else if u < 0.85 {
            1.0
        } else {
            2.0
        }
    };
    Baseline {
        latent: [
            normal(rng, 70.0, 8.0, 45.0, 95.0),
            rng.random_range(0.7..1.3),
            if rng.random_bool(0.2) { 1.0 } else { 0.0 },
            ecog,
            rng.random_range(0.0..0.2),
            normal(rng, 130.0, 15.0, 85.0, 200.0),
            normal(rng, 27.0, 4.0, 16.0, 45.0),
            normal(rng, 78.0, 10.0, 45.0, 130.0),
        ],
    }
}

fn round_to(v: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (v * f).round() / f
}

/// Generates a cohort. Identical specs give bit-identical cohorts.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PatientTimeline>> {
    spec.validate()?;
    let n = spec.n_patients;

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_censored = (spec.censoring_rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut master);
    let mut censored = vec![false; n];
    for &i in &order[..n_censored.min(n)] {
        censored[i] = true;
    }

    let width = n.to_string().len().max(4);
    let mut cohort = Vec::with_capacity(n);
    for (i, &is_censored) in censored.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let pid = format!("P{:0width$}", i + 1);
        cohort.push(generate_patient(spec, pid, is_censored, &mut rng));
    }
    Ok(cohort)
}

fn generate_patient(spec: &SyntheticSpec, pid: String, is_censored: bool, rng: &mut ChaCha8Rng) -> PatientTimeline {
    let base = draw_baseline(rng);
    let eta: f64 = (0..N_FEATURES)
        .map(|j| {
            let (mean, sd) = LATENT_MOMENTS[j];
            spec.hazard_coefficients[j] * (base.latent[j] - mean) / sd
        })
        .sum();

    // Weibull PH: S(t) = exp(-(t / scale)^shape * exp(eta)).
    let u: f64 = 1.0 - rng.random::<f64>();
    let t = spec.baseline.scale_days * ((-u.ln()) * (-eta).exp()).powf(1.0 / spec.baseline.shape);
    let death_day = (t.ceil() as i64).clamp(2, 1_000_000);

    let outcome = if is_censored {
        let hi = (death_day - 1).min(spec.max_followup_days).max(1);
        Outcome::alive(rng.random_range(1..=hi))
    } else {
        Outcome::died(death_day)
    };
    // Visits happen strictly before the outcome day and within follow-up.
    let visit_end = outcome.event_day.min(spec.max_followup_days + 1);

    let traj = &spec.trajectory;
    let interval_mult = base.latent[DAYS_SINCE_LAST_VISIT];
    let mut dose_reduced = base.latent[DOSE_REDUCED];
    let mut sae = 0.0;
    let mut visits = Vec::new();
    let mut day = 0i64;
    let mut prev_day: Option<i64> = None;
    loop {
        let ramp = (1.0 - (death_day - day) as f64 / traj.window_days).clamp(0.0, 1.0);
        if prev_day.is_some() && dose_reduced == 0.0 && rng.random_bool(0.03) {
            dose_reduced = 1.0;
        }
        if prev_day.is_some() && rng.random_bool(base.latent[SAE_COUNT]) {
            sae += 1.0;
        }
        let bp_noise = Normal::new(0.0, 5.0).unwrap().sample(rng);
        let bmi_noise = Normal::new(0.0, 0.3).unwrap().sample(rng);
        let pulse_noise = Normal::new(0.0, 3.0).unwrap().sample(rng);

        let mut features = [None; N_FEATURES];
        features[CURRENT_AGE] = Some(round_to(base.latent[CURRENT_AGE] + day as f64 / 365.25, 2));
        features[DAYS_SINCE_LAST_VISIT] = Some(prev_day.map_or(0.0, |p| (day - p) as f64));
        features[DOSE_REDUCED] = Some(dose_reduced);
        features[ECOG] = Some((base.latent[ECOG] + (traj.ecog_rise * ramp).round()).clamp(0.0, 4.0));
        features[SAE_COUNT] = Some(sae);
        features[SYSTOLIC_BP] = Some(
            (base.latent[SYSTOLIC_BP] - traj.systolic_drop * ramp + bp_noise)
                .round()
                .clamp(70.0, 220.0),
        );
        features[BMI] = Some(round_to(base.latent[BMI] - traj.bmi_decline * ramp + bmi_noise, 2).max(12.0));
        features[PULSE] = Some(
            (base.latent[PULSE] + traj.pulse_rise * ramp + pulse_noise)
                .round()
                .clamp(35.0, 180.0),
        );
        for slot in features.iter_mut() {
            if spec.missingness_rate > 0.0 && rng.random_bool(spec.missingness_rate) {
                *slot = None;
            }
        }
        visits.push(VisitRecord {
            patient_id: pid.clone(),
            visit_day: day,
            features,
        });

        prev_day = Some(day);
        let gap = (spec.visit_interval_mean_days * interval_mult * rng.random_range(0.75..1.25))
            .round()
            .max(1.0) as i64;
        day += gap;
        if day >= visit_end {
            break;
        }
    }

    PatientTimeline {
        patient_id: pid,
        visits,
        outcome,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{validate_cohort, Status};

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::new(100, 7);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec::new(100, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_censoring_means_everyone_died() {
        let spec = SyntheticSpec {
            censoring_rate: 0.0,
            ..SyntheticSpec::new(200, 3)
        };
        let cohort = generate_synthetic(&spec).unwrap();
        assert!(cohort.iter().all(|p| p.outcome.status == Status::Died));
    }

    #[test]
    fn generated_cohort_is_valid() {
        let spec = SyntheticSpec::new(300, 11);
        let cohort = generate_synthetic(&spec).unwrap();
        validate_cohort(&cohort).unwrap();
        let censored: Vec<_> = cohort.iter().filter(|p| !p.outcome.is_death()).collect();
        assert_eq!(censored.len(), 90);
        for p in censored {
            assert!(p.outcome.event_day >= 1 && p.outcome.event_day <= spec.max_followup_days);
        }
        for p in &cohort {
            assert!(p.outcome.event_day >= 1);
        }
    }

    #[test]
    fn missingness_rate_is_respected() {
        let spec = SyntheticSpec {
            missingness_rate: 0.25,
            ..SyntheticSpec::new(300, 5)
        };
        let cohort = generate_synthetic(&spec).unwrap();
        let (mut missing, mut total) = (0usize, 0usize);
        for v in cohort.iter().flat_map(|p| &p.visits) {
            total += N_FEATURES;
            missing += v.features.iter().filter(|f| f.is_none()).count();
        }
        let rate = missing as f64 / total as f64;
        assert!((rate - 0.25).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn rejects_bad_spec() {
        let mut spec = SyntheticSpec::new(10, 1);
        spec.censoring_rate = 1.5;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::new(0, 1);
        spec.censoring_rate = 0.0;
        assert!(generate_synthetic(&spec).is_err());
    }
}
