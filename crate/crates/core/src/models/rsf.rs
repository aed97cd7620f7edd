//! Random survival forest with exact log-rank splitting.
//!
//! Each tree is grown on a bootstrap sample of landmark rows. At every node
//! `mtry` candidate features are drawn, and for each one all cut points are
//! scanned in one sorted sweep: the two-sample log-rank numerator and
//! variance are updated incrementally as rows move to the left child, so a
//! full scan costs O(n log n) per feature. Leaves store the Nelson-Aalen
//! cumulative hazard of their rows.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsfConfig {
    pub n_trees: usize,
    pub mtry: usize,
    /// Minimum rows in each child of a split.
    pub min_node: usize,
    pub bootstrap: bool,
}

impl Default for RsfConfig {
    fn default() -> Self {
        RsfConfig {
            n_trees: 200,
            mtry: 3,
            min_node: 10,
            bootstrap: true,
        }
    }
}

/// Nelson-Aalen cumulative hazard, right-continuous, truncated after the
/// horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl HazardCurve {
    pub fn nelson_aalen(time: &[f64], event: &[bool], rows: &[usize], horizon: f64) -> Self {
        let mut sorted: Vec<usize> = rows.to_vec();
        sorted.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
        let mut at_risk = sorted.len();
        let mut times = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        let mut k = 0;
        while k < sorted.len() {
            let t = time[sorted[k]];
            let mut end = k;
            let mut deaths = 0;
            while end < sorted.len() && time[sorted[end]] == t {
                deaths += event[sorted[end]] as usize;
                end += 1;
            }
            if deaths > 0 && t <= horizon {
                acc += deaths as f64 / at_risk as f64;
                times.push(t);
                cumulative.push(acc);
            }
            at_risk -= end - k;
            k = end;
        }
        HazardCurve { times, cumulative }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(HazardCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<Node>,
}

impl SurvivalTree {
    pub fn leaf(&self, x: &[f64]) -> &HazardCurve {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(curve) => return curve,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsfModel {
    pub trees: Vec<SurvivalTree>,
    pub horizon_days: f64,
}

impl RsfModel {
    /// Ensemble cumulative hazard at `t`.
    pub fn cumulative_hazard(&self, x: &[f64], t: f64) -> f64 {
        self.trees.iter().map(|tree| tree.leaf(x).at(t)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        (-(-self.cumulative_hazard(x, self.horizon_days)).exp_m1()).clamp(0.0, 1.0)
    }
}

/// Fenwick tree over time ranks.
struct Fenwick {
    count: Vec<f64>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            count: vec![0.0; n + 1],
            sum: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, rank: usize, value: f64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            self.count[i] += 1.0;
            self.sum[i] += value;
            i += i & i.wrapping_neg();
        }
    }

    /// (count, sum) over ranks `< rank`.
    fn prefix(&self, rank: usize) -> (f64, f64) {
        let (mut c, mut s) = (0.0, 0.0);
        let mut i = rank;
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }
}

/// Per-row quantities of a node that do not depend on the split feature.
struct NodeStats {
    rank: Vec<usize>,
    n_ranks: usize,
    /// delta_i - Lambda(t_i)
    u: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn node_stats(rows: &[usize], time: &[f64], event: &[bool]) -> NodeStats {
    let mut times: Vec<f64> = rows.iter().map(|&r| time[r]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let n_ranks = times.len();
    let mut y = vec![0.0; n_ranks];
    let mut d = vec![0.0; n_ranks];
    let rank: Vec<usize> = rows
        .iter()
        .map(|&r| times.partition_point(|&t| t < time[r]))
        .collect();
    for (&r, &k) in rows.iter().zip(&rank) {
        if event[r] {
            d[k] += 1.0;
        }
        y[k] += 1.0;
    }
    // at-risk counts: rows with time >= t_k
    for k in (0..n_ranks.saturating_sub(1)).rev() {
        y[k] += y[k + 1];
    }
    let mut lambda = vec![0.0; n_ranks];
    let mut a = vec![0.0; n_ranks];
    let mut b = vec![0.0; n_ranks];
    let (mut cl, mut ca, mut cb) = (0.0, 0.0, 0.0);
    for k in 0..n_ranks {
        if d[k] > 0.0 {
            cl += d[k] / y[k];
            if y[k] > 1.0 {
                let w = d[k] * (y[k] - d[k]) / (y[k] - 1.0);
                ca += w / y[k];
                cb += w / (y[k] * y[k]);
            }
        }
        lambda[k] = cl;
        a[k] = ca;
        b[k] = cb;
    }
    NodeStats {
        u: rows
            .iter()
            .zip(&rank)
            .map(|(&r, &k)| event[r] as u8 as f64 - lambda[k])
            .collect(),
        a: rank.iter().map(|&k| a[k]).collect(),
        b: rank.iter().map(|&k| b[k]).collect(),
        rank,
        n_ranks,
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    statistic: f64,
}

/// Best log-rank cut on one feature, scanning every boundary between
/// distinct values with at least `min_node` rows on each side.
fn best_cut(rows: &[usize], x: &[Vec<f64>], feature: usize, stats: &NodeStats, min_node: usize) -> Option<(f64, f64)> {
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[rows[i]][feature].total_cmp(&x[rows[j]][feature]));
    let mut fen = Fenwick::new(stats.n_ranks);
    let (mut u, mut a, mut q) = (0.0, 0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for (pos, &i) in order.iter().enumerate().take(n - 1) {
        let (below_count, below_b) = fen.prefix(stats.rank[i]);
        let at_or_above = pos as f64 - below_count;
        q += stats.b[i] + 2.0 * (stats.b[i] * at_or_above + below_b);
        fen.add(stats.rank[i], stats.b[i]);
        u += stats.u[i];
        a += stats.a[i];
        let n_left = pos + 1;
        if n_left < min_node || n - n_left < min_node {
            continue;
        }
        let here = x[rows[i]][feature];
        let next = x[rows[order[pos + 1]]][feature];
        if here == next {
            continue;
        }
        let v = a - q;
        if v <= 1e-12 {
            continue;
        }
        let stat = u * u / v;
        if best.is_none_or(|(s, _)| stat > s) {
            best = Some((stat, here + 0.5 * (next - here)));
        }
    }
    best
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    time: &'a [f64],
    event: &'a [bool],
    config: &'a RsfConfig,
    horizon: f64,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> SurvivalTree {
        let mut nodes = Vec::new();
        self.grow_node(rows, rng, &mut nodes);
        SurvivalTree { nodes }
    }

    fn grow_node(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(HazardCurve {
            times: Vec::new(),
            cumulative: Vec::new(),
        }));
        let split = if rows.len() >= 2 * self.config.min_node && rows.iter().any(|&r| self.event[r]) {
            let d = self.x[0].len();
            let stats = node_stats(&rows, self.time, self.event);
            let mut best: Option<BestSplit> = None;
            for feature in sample(rng, d, self.config.mtry.min(d)).into_iter() {
                if let Some((statistic, threshold)) = best_cut(&rows, self.x, feature, &stats, self.config.min_node) {
                    if best.as_ref().is_none_or(|b| statistic > b.statistic) {
                        best = Some(BestSplit {
                            feature,
                            threshold,
                            statistic,
                        });
                    }
                }
            }
            best
        } else {
            None
        };
        match split {
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
                let left = self.grow_node(l, rng, nodes);
                let right = self.grow_node(r, rng, nodes);
                nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
            None => nodes[id] = Node::Leaf(HazardCurve::nelson_aalen(self.time, self.event, &rows, self.horizon)),
        }
        id
    }
}

/// Fits a forest on landmark rows. Tree `k` draws from stream `k` of the
/// seeded generator, so results do not depend on thread scheduling.
pub fn fit_rsf_rows(
    x: &[Vec<f64>],
    time: &[f64],
    event: &[bool],
    horizon_days: f64,
    config: &RsfConfig,
    seed: u64,
) -> Result<RsfModel> {
    let n = x.len();
    if n == 0 || time.len() != n || event.len() != n {
        return Err(Error::Shape("forest rows, times and events differ in length".into()));
    }
    if config.n_trees == 0 || config.mtry == 0 || config.min_node == 0 {
        return Err(Error::Config("n_trees, mtry and min_node must be positive".into()));
    }
    if config.min_node > n {
        return Err(Error::Config(format!(
            "min_node {} exceeds the {} available rows",
            config.min_node, n
        )));
    }
    if !event.iter().any(|&e| e) {
        return Err(Error::UndefinedMetric("survival forest needs at least one event".into()));
    }
    let grower = Grower {
        x,
        time,
        event,
        config,
        horizon: horizon_days,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(rows, &mut rng)
        })
        .collect();
    Ok(RsfModel { trees, horizon_days })
}
