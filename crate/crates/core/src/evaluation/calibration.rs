//! Reliability bins and the least-squares calibration line.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub observed_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub bins: Vec<CalibrationBin>,
    /// `None` when the bins do not determine a line.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    /// Fewer bins than requested because of tied scores.
    pub merged: bool,
}

/// Equal-count bins over sorted scores. A bin boundary never splits a run
/// of tied scores; bins that would be left empty are dropped.
pub fn calibration_fit(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibrationFit> {
    let n = scores.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} scores but {} labels", labels.len())));
    }
    if n_bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    if n < n_bins {
        return Err(Error::UndefinedMetric(format!(
            "calibration with {n_bins} bins needs at least {n_bins} labeled visits, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for k in 1..=n_bins {
        let mut end = (k * n + n_bins / 2) / n_bins;
        end = end.max(start);
        while end > 0 && end < n && scores[order[end]] == scores[order[end - 1]] {
            end += 1;
        }
        if k == n_bins {
            end = n;
        }
        if end > start {
            let members = &order[start..end];
            let c = members.len() as f64;
            bins.push(CalibrationBin {
                lower: scores[members[0]],
                upper: scores[*members.last().unwrap()],
                mean_predicted: members.iter().map(|&i| scores[i]).sum::<f64>() / c,
                observed_rate: members.iter().filter(|&&i| labels[i]).count() as f64 / c,
                count: members.len(),
            });
            start = end;
        }
    }
    let merged = bins.len() < n_bins;
    if merged {
        log::warn!("tied scores merged calibration bins: {} of {} requested", bins.len(), n_bins);
    }

    let m = bins.len() as f64;
    let mx = bins.iter().map(|b| b.mean_predicted).sum::<f64>() / m;
    let my = bins.iter().map(|b| b.observed_rate).sum::<f64>() / m;
    let sxx: f64 = bins.iter().map(|b| (b.mean_predicted - mx).powi(2)).sum();
    let sxy: f64 = bins.iter().map(|b| (b.mean_predicted - mx) * (b.observed_rate - my)).sum();
    let syy: f64 = bins.iter().map(|b| (b.observed_rate - my).powi(2)).sum();
    let (slope, intercept, r2) = if bins.len() < 2 || sxx <= 0.0 {
        log::warn!("calibration line undefined: predicted risks do not vary across bins");
        (None, None, None)
    } else {
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let r2 = (syy > 0.0).then(|| {
            let ss_res: f64 = bins
                .iter()
                .map(|b| (b.observed_rate - intercept - slope * b.mean_predicted).powi(2))
                .sum();
            1.0 - ss_res / syy
        });
        (Some(slope), Some(intercept), r2)
    };
    Ok(CalibrationFit {
        bins,
        slope,
        intercept,
        r2,
        merged,
    })
}
