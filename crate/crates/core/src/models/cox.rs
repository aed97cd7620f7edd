//! Cox proportional hazards with Breslow ties and a Breslow baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxConfig {
    /// Ridge weight on the mean log partial likelihood.
    pub l2: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for CoxConfig {
    fn default() -> Self {
        CoxConfig {
            l2: 0.001,
            max_iter: 100,
            tolerance: 1e-6,
        }
    }
}

/// Breslow cumulative baseline hazard as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Starts at 0; then each distinct event time.
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl BaselineHazard {
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub baseline: BaselineHazard,
    pub horizon_days: f64,
    pub iterations: usize,
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    /// Probability of an event within the horizon.
    pub fn score(&self, x: &[f64]) -> f64 {
        let h = self.baseline.at(self.horizon_days) * self.linear_predictor(x).exp();
        (-(-h).exp_m1()).clamp(0.0, 1.0)
    }
}

struct Derivatives {
    value: f64,
    grad: DVector<f64>,
    /// Negative Hessian of the objective.
    info: DMatrix<f64>,
}

/// Rows sorted by decreasing time with tie groups marked.
struct RiskOrder {
    order: Vec<usize>,
}

impl RiskOrder {
    fn new(time: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        RiskOrder { order }
    }

    /// Calls `f(group)` for each tie group in decreasing time order.
    fn groups<'a>(&'a self, time: &'a [f64]) -> impl Iterator<Item = &'a [usize]> + 'a {
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= self.order.len() {
                return None;
            }
            let t = time[self.order[start]];
            let mut end = start;
            while end < self.order.len() && time[self.order[end]] == t {
                end += 1;
            }
            let g = &self.order[start..end];
            start = end;
            Some(g)
        })
    }
}

fn derivatives(x: &[Vec<f64>], time: &[f64], event: &[bool], ord: &RiskOrder, beta: &[f64], l2: f64) -> Result<Derivatives> {
    let n = x.len() as f64;
    let d = beta.len();
    let eta: Vec<f64> = x.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    if eta.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonConvergence("non-finite linear predictor in Cox fit".into()));
    }
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(d);
    let mut s2 = DMatrix::zeros(d, d);
    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    let mut info = DMatrix::zeros(d, d);
    for group in ord.groups(time) {
        for &i in group {
            let w = (eta[i] - shift).exp();
            let xi = DVector::from_column_slice(&x[i]);
            s0 += w;
            s1.axpy(w, &xi, 1.0);
            s2.ger(w, &xi, &xi, 1.0);
        }
        let deaths: Vec<usize> = group.iter().copied().filter(|&i| event[i]).collect();
        if deaths.is_empty() {
            continue;
        }
        let dk = deaths.len() as f64;
        let mean = &s1 / s0;
        for &i in &deaths {
            value += eta[i];
            grad += DVector::from_column_slice(&x[i]);
        }
        value -= dk * (s0.ln() + shift);
        grad.axpy(-dk, &mean, 1.0);
        let cov = &s2 / s0 - &mean * mean.transpose();
        info += cov * dk;
    }
    let b = DVector::from_column_slice(beta);
    let value = value / n - 0.5 * l2 * b.norm_squared();
    let grad = grad / n - l2 * &b;
    let info = info / n + DMatrix::identity(d, d) * l2;
    Ok(Derivatives { value, grad, info })
}

/// Fits on generic survival rows.
pub fn fit_cox_rows(x: &[Vec<f64>], time: &[f64], event: &[bool], horizon_days: f64, config: &CoxConfig) -> Result<CoxModel> {
    if x.len() != time.len() || x.len() != event.len() || x.is_empty() {
        return Err(Error::Shape("Cox rows, times and events differ in length".into()));
    }
    if !event.iter().any(|&e| e) {
        return Err(Error::UndefinedMetric("Cox model needs at least one event".into()));
    }
    let d = x[0].len();
    let ord = RiskOrder::new(time);
    let mut beta = vec![0.0; d];
    let mut cur = derivatives(x, time, event, &ord, &beta, config.l2)?;
    let mut iterations = 0;
    while cur.grad.norm() >= config.tolerance {
        if iterations == config.max_iter {
            return Err(Error::NonConvergence(format!(
                "Cox fit did not converge in {} iterations (gradient norm {:.3e})",
                config.max_iter,
                cur.grad.norm()
            )));
        }
        iterations += 1;
        let step = match cur.info.clone().cholesky() {
            Some(ch) => ch.solve(&cur.grad),
            None => {
                return Err(Error::NonConvergence(
                    "Cox information matrix is singular; use an l2 weight > 0".into(),
                ))
            }
        };
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            match derivatives(x, time, event, &ord, &cand, config.l2) {
                Ok(next) if next.value >= cur.value - 1e-15 * cur.value.abs() => {
                    beta = cand;
                    cur = next;
                    break;
                }
                _ => {}
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::NonConvergence(format!(
                    "Cox line search failed (gradient norm {:.3e})",
                    cur.grad.norm()
                )));
            }
        }
    }
    let baseline = breslow(x, time, event, &ord, &beta);
    Ok(CoxModel {
        beta,
        baseline,
        horizon_days,
        iterations,
    })
}

fn breslow(x: &[Vec<f64>], time: &[f64], event: &[bool], ord: &RiskOrder, beta: &[f64]) -> BaselineHazard {
    let risk: Vec<f64> = x
        .iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let mut s0 = 0.0;
    let mut increments = Vec::new();
    for group in ord.groups(time) {
        for &i in group {
            s0 += risk[i];
        }
        let deaths = group.iter().filter(|&&i| event[i]).count();
        if deaths > 0 {
            increments.push((time[group[0]], deaths as f64 / s0));
        }
    }
    increments.reverse();
    let mut times = vec![0.0];
    let mut cumulative = vec![0.0];
    let mut acc = 0.0;
    for (t, h) in increments {
        acc += h;
        if t == 0.0 {
            cumulative[0] = acc;
        } else {
            times.push(t);
            cumulative.push(acc);
        }
    }
    BaselineHazard { times, cumulative }
}
