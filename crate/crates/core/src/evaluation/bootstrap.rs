//! Patient-clustered percentile bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Labeled visit scores of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    /// Replicates on which the statistic was defined.
    pub n_valid: usize,
}

/// Largest share of replicates allowed to leave the statistic undefined.
const MAX_UNDEFINED: f64 = 0.2;

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn resample<'a>(patients: &'a [PatientScores], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = patients.len();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let p: &'a PatientScores = &patients[rng.random_range(0..n)];
        scores.extend_from_slice(&p.scores);
        labels.extend_from_slice(&p.labels);
    }
    (scores, labels)
}

fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Runs `statistic` on `n_boot` patient resamples; replicate `b` uses
/// stream `b` of the seeded generator. Returns one entry per replicate,
/// `None` where the statistic was undefined.
pub fn bootstrap_replicates<T, F>(patients: &[PatientScores], n_boot: usize, seed: u64, statistic: F) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(&[f64], &[bool]) -> Result<T> + Sync,
{
    if patients.len() < 2 {
        return Err(Error::UndefinedMetric("bootstrap needs at least two patients".into()));
    }
    if n_boot == 0 {
        return Err(Error::Config("n_boot must be positive".into()));
    }
    let reps: Vec<Option<T>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let (s, l) = resample(patients, &mut rng);
            statistic(&s, &l).ok()
        })
        .collect();
    let undefined = reps.iter().filter(|r| r.is_none()).count();
    if undefined as f64 > MAX_UNDEFINED * n_boot as f64 {
        return Err(Error::UndefinedMetric(format!(
            "statistic undefined on {undefined} of {n_boot} bootstrap resamples"
        )));
    }
    Ok(reps)
}

/// Percentile 2.5 / 97.5 interval of a scalar statistic.
pub fn clustered_bootstrap_ci<F>(patients: &[PatientScores], n_boot: usize, seed: u64, statistic: F) -> Result<Interval>
where
    F: Fn(&[f64], &[bool]) -> Result<f64> + Sync,
{
    let reps = bootstrap_replicates(patients, n_boot, seed, statistic)?;
    let mut values: Vec<f64> = reps.into_iter().flatten().collect();
    values.sort_by(f64::total_cmp);
    Ok(Interval {
        low: quantile(&values, 0.025),
        high: quantile(&values, 0.975),
        n_valid: values.len(),
    })
}

/// Pointwise percentile band of a curve evaluated on a fixed grid.
pub fn clustered_bootstrap_band<F>(
    patients: &[PatientScores],
    grid_len: usize,
    n_boot: usize,
    seed: u64,
    curve: F,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&[f64], &[bool]) -> Result<Vec<f64>> + Sync,
{
    let reps: Vec<Vec<f64>> = bootstrap_replicates(patients, n_boot, seed, curve)?.into_iter().flatten().collect();
    Ok((0..grid_len)
        .map(|g| {
            let mut col: Vec<f64> = reps.iter().map(|r| r[g]).collect();
            col.sort_by(f64::total_cmp);
            (quantile(&col, 0.025), quantile(&col, 0.975))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::concordance_index;

    fn cohort(n: usize, visits: usize, seed: u64) -> Vec<PatientScores> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let labels: Vec<bool> = (0..visits).map(|_| rng.random_bool(0.3)).collect();
                let scores = labels.iter().map(|&l| 0.3 * l as u8 as f64 + 0.7 * rng.random::<f64>()).collect();
                PatientScores { scores, labels }
            })
            .collect()
    }

    fn mean(s: &[f64], _: &[bool]) -> Result<f64> {
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }

    #[test]
    fn contains_estimate_and_is_deterministic() {
        let pts = cohort(200, 3, 1);
        let all_s: Vec<f64> = pts.iter().flat_map(|p| p.scores.clone()).collect();
        let all_l: Vec<bool> = pts.iter().flat_map(|p| p.labels.clone()).collect();
        let c = concordance_index(&all_s, &all_l).unwrap();
        let ci = clustered_bootstrap_ci(&pts, 2000, 9, concordance_index).unwrap();
        assert!(ci.low <= c && c <= ci.high);
        assert_eq!(ci, clustered_bootstrap_ci(&pts, 2000, 9, concordance_index).unwrap());
    }

    #[test]
    fn single_visit_patients_match_plain_bootstrap() {
        // with one visit per patient, the clustered resample is the ordinary
        // bootstrap of visits; compare against an independent visit-level one
        let pts = cohort(400, 1, 2);
        let ci = clustered_bootstrap_ci(&pts, 2000, 3, mean).unwrap();
        let s: Vec<f64> = pts.iter().map(|p| p.scores[0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut reps: Vec<f64> = (0..2000)
            .map(|_| (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum::<f64>() / s.len() as f64)
            .collect();
        reps.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&reps, 0.025), quantile(&reps, 0.975));
        let width = hi - lo;
        assert!((ci.low - lo).abs() < 0.1 * width && (ci.high - hi).abs() < 0.1 * width);
    }

    #[test]
    fn mostly_undefined_is_error() {
        let pts = vec![
            PatientScores { scores: vec![0.4], labels: vec![true] },
            PatientScores { scores: vec![0.1; 50], labels: vec![false; 50] },
            PatientScores { scores: vec![0.2; 50], labels: vec![false; 50] },
            PatientScores { scores: vec![0.3; 50], labels: vec![false; 50] },
            PatientScores { scores: vec![0.5; 50], labels: vec![false; 50] },
        ];
        // a resample lacks the single positive patient about a third of the time
        assert!(matches!(clustered_bootstrap_ci(&pts, 500, 1, concordance_index), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }
}
