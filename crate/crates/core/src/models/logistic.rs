//! Elastic-net logistic regression fitted by proximal Newton steps.
//!
//! Objective: mean negative log-likelihood + `l1 * |w|_1 + l2 / 2 * |w|^2`,
//! intercept unpenalized. Each outer step builds the quadratic model of the
//! likelihood at the current point, minimizes it plus the penalty by cyclic
//! coordinate descent, and backtracks on the true objective.

use serde::{Deserialize, Serialize};

use crate::nn::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l1: f64,
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence tolerance on the minimum-norm subgradient.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l1: 0.001,
            l2: 0.001,
            max_iter: 200,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    l1: f64,
    l2: f64,
}

impl Problem<'_> {
    fn objective(&self, b: f64, w: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let nll: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(row, &y)| {
                let z = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        nll + self.l1 * w.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of the mean NLL and its Hessian, over the augmented vector
    /// (intercept first).
    fn derivatives(&self, b: f64, w: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = w.len() + 1;
        let n = self.y.len() as f64;
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        let mut xa = vec![1.0; d];
        for (row, &y) in self.x.iter().zip(self.y) {
            xa[1..].copy_from_slice(row);
            let p = sigmoid(b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>());
            let r = (p - y) / n;
            let s = p * (1.0 - p) / n;
            for i in 0..d {
                g[i] += r * xa[i];
                for j in 0..=i {
                    h[i][j] += s * xa[i] * xa[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                h[j][i] = h[i][j];
            }
        }
        (g, h)
    }

    /// Norm of the minimum-norm subgradient of the full objective.
    fn subgradient_norm(&self, g: &[f64], w: &[f64]) -> f64 {
        let mut s = g[0] * g[0];
        for (j, &wj) in w.iter().enumerate() {
            let gj = g[j + 1] + self.l2 * wj;
            let v = if wj != 0.0 {
                gj + self.l1 * wj.signum()
            } else {
                (gj.abs() - self.l1).max(0.0)
            };
            s += v * v;
        }
        s.sqrt()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Fits on labeled rows; `y` holds 0/1 targets.
pub fn fit_logistic(x: &[Vec<f64>], y: &[f64], config: &LogisticConfig) -> Result<LogisticModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged design matrix".into()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1.0).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::UndefinedMetric(
            "logistic regression needs at least one positive and one negative label".into(),
        ));
    }
    if config.l1 < 0.0 || config.l2 < 0.0 {
        return Err(Error::Config("penalty weights must be non-negative".into()));
    }
    let problem = Problem {
        x,
        y,
        l1: config.l1,
        l2: config.l2,
    };
    let prevalence = n_pos as f64 / y.len() as f64;
    let mut b = (prevalence / (1.0 - prevalence)).ln();
    let mut w = vec![0.0; d];
    let mut f = problem.objective(b, &w);

    for iter in 0..config.max_iter {
        let (g, h) = problem.derivatives(b, &w);
        if problem.subgradient_norm(&g, &w) < config.tolerance {
            let model = LogisticModel {
                intercept: b,
                coefficients: w,
                iterations: iter,
            };
            return check_separation(model, x, y, config);
        }
        // Coordinate descent on the penalized quadratic model in v = (b, w).
        let base: Vec<f64> = std::iter::once(b).chain(w.iter().copied()).collect();
        let mut v = base.clone();
        for _ in 0..1000 {
            let mut max_change: f64 = 0.0;
            for j in 0..=d {
                let hjj = h[j][j].max(1e-12);
                let mut grad = g[j];
                for k in 0..=d {
                    grad += h[j][k] * (v[k] - base[k]);
                }
                let new = if j == 0 {
                    v[j] - grad / hjj
                } else {
                    soft_threshold(hjj * v[j] - grad, config.l1) / (hjj + config.l2)
                };
                max_change = max_change.max((new - v[j]).abs());
                v[j] = new;
            }
            if max_change < 1e-13 {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cb = b + step * (v[0] - b);
            let cw: Vec<f64> = w.iter().zip(&v[1..]).map(|(a, t)| a + step * (t - a)).collect();
            let cf = problem.objective(cb, &cw);
            if cf <= f {
                b = cb;
                w = cw;
                f = cf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || !f.is_finite() {
            break;
        }
    }
    let (g, _) = problem.derivatives(b, &w);
    let norm = problem.subgradient_norm(&g, &w);
    if norm < config.tolerance {
        let model = LogisticModel {
            intercept: b,
            coefficients: w,
            iterations: config.max_iter,
        };
        return check_separation(model, x, y, config);
    }
    if config.l1 == 0.0 && config.l2 == 0.0 && separates(&LogisticModel {
        intercept: b,
        coefficients: w.clone(),
        iterations: 0,
    }, x, y)
    {
        return Err(separation_error());
    }
    let advice = if config.l1 == 0.0 && config.l2 == 0.0 {
        "; the classes may be perfectly separated, use a penalty weight > 0"
    } else {
        ""
    };
    Err(Error::NonConvergence(format!(
        "logistic fit stopped with subgradient norm {norm:.3e} after {} iterations{advice}",
        config.max_iter
    )))
}

/// True when the linear predictor ranks every positive strictly above every
/// negative, in which case the unpenalized likelihood has no maximizer.
fn separates(model: &LogisticModel, x: &[Vec<f64>], y: &[f64]) -> bool {
    let mut min_pos = f64::INFINITY;
    let mut max_neg = f64::NEG_INFINITY;
    for (row, &t) in x.iter().zip(y) {
        let z = model.linear_predictor(row);
        if t == 1.0 {
            min_pos = min_pos.min(z);
        } else {
            max_neg = max_neg.max(z);
        }
    }
    min_pos > max_neg
}

fn separation_error() -> Error {
    Error::NonConvergence(
        "the classes are perfectly separated and the unpenalized likelihood has no maximum; use a penalty weight > 0"
            .into(),
    )
}

fn check_separation(model: LogisticModel, x: &[Vec<f64>], y: &[f64], config: &LogisticConfig) -> Result<LogisticModel> {
    if config.l1 == 0.0 && config.l2 == 0.0 && separates(&model, x, y) {
        Err(separation_error())
    } else {
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, slope: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let y = x.iter().map(|r| (rng.random::<f64>() < sigmoid(slope * r[0])) as u8 as f64).collect();
        (x, y)
    }

    #[test]
    fn recovers_slope() {
        let (x, y) = simulate(5000, 2.0, 0);
        let cfg = LogisticConfig {
            l1: 1e-6,
            l2: 1e-6,
            ..LogisticConfig::default()
        };
        let m = fit_logistic(&x, &y, &cfg).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 0.15, "{:?}", m);
    }

    #[test]
    fn large_l1_zeroes_coefficients() {
        let (x, y) = simulate(500, 2.0, 2);
        let cfg = LogisticConfig {
            l1: 10.0,
            ..LogisticConfig::default()
        };
        let m = fit_logistic(&x, &y, &cfg).unwrap();
        assert_eq!(m.coefficients, vec![0.0]);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m.score(&[1.3]) - mean).abs() < 1e-6);
    }

    #[test]
    fn zero_coefficients_score_intercept() {
        let m = LogisticModel {
            intercept: -0.4,
            coefficients: vec![0.0, 0.0],
            iterations: 0,
        };
        assert_eq!(m.score(&[3.0, -1.0]), sigmoid(-0.4));
    }

    #[test]
    fn separation_without_penalty_fails() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i >= 10) as u8 as f64).collect();
        let cfg = LogisticConfig {
            l1: 0.0,
            l2: 0.0,
            max_iter: 50,
            ..LogisticConfig::default()
        };
        match fit_logistic(&x, &y, &cfg) {
            Err(Error::NonConvergence(msg)) => assert!(msg.contains("penalty")),
            other => panic!("{other:?}"),
        }
        // any penalty makes it well posed
        assert!(fit_logistic(&x, &y, &LogisticConfig::default()).is_ok());
    }

    #[test]
    fn score_monotone_in_positive_coefficient() {
        let (x, y) = simulate(400, 1.0, 3);
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.coefficients[0] > 0.0);
        assert!(m.score(&[0.1]) < m.score(&[0.2]));
    }
}
