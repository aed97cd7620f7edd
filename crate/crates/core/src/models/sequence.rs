//! GRU/LSTM per-visit scorers trained with balanced batches.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSet;
use crate::nn::recurrent::{CellKind, RecurrentNet};
use crate::nn::{clip_global_norm, Adam};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Weight of the squared-kernel penalty.
    pub l2: f64,
    /// Longest history fed to the network; older visits are dropped.
    pub max_len: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            hidden: vec![64, 32],
            dropout: vec![0.3, 0.2],
            epochs: 25,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            l2: 1e-3,
            max_len: 12,
        }
    }
}

/// Per-patient training sequences. Each sequence holds only its valid
/// steps (the most recent `max_len`); the network treats the missing
/// leading steps as pre-padding that leaves the state at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub patient_ids: Vec<String>,
    pub steps: Vec<Vec<Vec<f64>>>,
    /// `None` for censored steps, which never enter the loss.
    pub targets: Vec<Vec<Option<f64>>>,
    pub max_len: usize,
}

impl SequenceBatch {
    pub fn from_set(set: &PreparedSet, max_len: usize) -> Self {
        let mut truncated = 0;
        let mut steps = Vec::with_capacity(set.patients.len());
        let mut targets = Vec::with_capacity(set.patients.len());
        for p in &set.patients {
            let start = p.features.len().saturating_sub(max_len);
            truncated += (start > 0) as usize;
            steps.push(p.features[start..].to_vec());
            targets.push(p.labels[start..].iter().map(|l| l.target()).collect());
        }
        if truncated > 0 {
            log::warn!("{truncated} sequence(s) longer than {max_len} visits truncated to the most recent {max_len}");
        }
        SequenceBatch {
            patient_ids: set.patient_ids(),
            steps,
            targets,
            max_len,
        }
    }

    /// Dense pre-padded view: `(tensor, valid mask, label mask)` with shape
    /// patients x `max_len` (x features).
    pub fn padded(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<bool>>, Vec<Vec<bool>>) {
        let d = self.steps.iter().find_map(|s| s.first().map(|r| r.len())).unwrap_or(0);
        let mut tensor = Vec::with_capacity(self.steps.len());
        let mut valid = Vec::with_capacity(self.steps.len());
        let mut labeled = Vec::with_capacity(self.steps.len());
        for (s, t) in self.steps.iter().zip(&self.targets) {
            let pad = self.max_len - s.len();
            let mut rows = vec![vec![0.0; d]; pad];
            rows.extend(s.iter().cloned());
            tensor.push(rows);
            let mut v = vec![false; pad];
            v.extend(std::iter::repeat_n(true, s.len()));
            valid.push(v);
            let mut l = vec![false; pad];
            l.extend(t.iter().map(|y| y.is_some()));
            labeled.push(l);
        }
        (tensor, valid, labeled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub net: RecurrentNet,
    pub max_len: usize,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Share of positive steps among the loss-bearing steps, per epoch.
    pub positive_fraction: Vec<f64>,
}

impl SequenceModel {
    /// Score for every visit of a history. The score at visit `t` reads the
    /// most recent `max_len` visits up to and including `t`.
    pub fn score_history(&self, features: &[Vec<f64>]) -> Vec<f64> {
        let n = features.len();
        let head = n.min(self.max_len);
        let mut scores = self.net.predict(&features[..head]);
        for t in head..n {
            let window = &features[t + 1 - self.max_len..=t];
            scores.push(*self.net.predict(window).last().unwrap());
        }
        scores
    }
}

/// Trains a recurrent scorer.
///
/// Every epoch draws `ceil(n / batch_size)` batches. Half of each batch is
/// sampled with replacement from patients with a positive step and half from
/// the rest; within the batch the majority class's labeled steps are then
/// subsampled to the minority count, so each update sees equal numbers of
/// positive and negative steps.
pub fn fit_sequence(batch: &SequenceBatch, cell: CellKind, config: &SequenceConfig, seed: u64) -> Result<SequenceModel> {
    let d = batch
        .steps
        .iter()
        .find_map(|s| s.first().map(|r| r.len()))
        .ok_or_else(|| Error::Config("sequence model needs at least one visit".into()))?;
    if config.hidden.is_empty() || config.hidden.len() != config.dropout.len() {
        return Err(Error::Config("hidden and dropout lists must be non-empty and equally long".into()));
    }
    if config.batch_size < 2 {
        return Err(Error::Config("sequence batch size must be at least 2".into()));
    }
    let has_pos = |t: &Vec<Option<f64>>| t.contains(&Some(1.0));
    let pos_pool: Vec<usize> = (0..batch.steps.len()).filter(|&i| has_pos(&batch.targets[i])).collect();
    let neg_pool: Vec<usize> = (0..batch.steps.len()).filter(|&i| !has_pos(&batch.targets[i])).collect();
    let any_neg = batch.targets.iter().flatten().any(|t| *t == Some(0.0));
    if pos_pool.is_empty() || !any_neg {
        return Err(Error::UndefinedMetric(
            "sequence training needs both positive and negative labeled visits".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = RecurrentNet::new(cell, d, &config.hidden, &config.dropout, &mut rng);
    let mut opt = Adam::new(net.n_params(), config.learning_rate);
    let n_batches = batch.steps.len().div_ceil(config.batch_size);
    let half = config.batch_size / 2;
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut positive_fraction = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        let (mut pos_steps, mut used_steps) = (0usize, 0usize);
        for _ in 0..n_batches {
            let mut members: Vec<usize> = Vec::with_capacity(config.batch_size);
            for k in 0..config.batch_size {
                let pool = if neg_pool.is_empty() || k < half { &pos_pool } else { &neg_pool };
                members.push(pool[rng.random_range(0..pool.len())]);
            }
            let mut targets: Vec<Vec<Option<f64>>> = members.iter().map(|&i| batch.targets[i].clone()).collect();
            let mut pos_cells = Vec::new();
            let mut neg_cells = Vec::new();
            for (b, t) in targets.iter().enumerate() {
                for (s, y) in t.iter().enumerate() {
                    match y {
                        Some(v) if *v == 1.0 => pos_cells.push((b, s)),
                        Some(_) => neg_cells.push((b, s)),
                        None => {}
                    }
                }
            }
            if pos_cells.is_empty() || neg_cells.is_empty() {
                continue;
            }
            let majority = if pos_cells.len() > neg_cells.len() { &pos_cells } else { &neg_cells };
            let keep = pos_cells.len().min(neg_cells.len());
            let mut kept = vec![false; majority.len()];
            for k in sample(&mut rng, majority.len(), keep) {
                kept[k] = true;
            }
            for (k, &(b, s)) in majority.iter().enumerate() {
                if !kept[k] {
                    targets[b][s] = None;
                }
            }
            pos_steps += keep;
            used_steps += 2 * keep;

            let seqs: Vec<&[Vec<f64>]> = members.iter().map(|&i| batch.steps[i].as_slice()).collect();
            let tgts: Vec<&[Option<f64>]> = targets.iter().map(|t| t.as_slice()).collect();
            let n_steps: usize = seqs.iter().map(|s| s.len()).sum();
            let masks = net.sample_dropout_masks(n_steps, &mut rng);
            let mut lg = net.loss_and_grad(&seqs, &tgts, &masks, config.l2);
            if !lg.loss.is_finite() || lg.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: format!("{cell:?} loss became non-finite"),
                });
            }
            clip_global_norm(&mut lg.grads, config.clip_norm);
            opt.step(&mut net.params, &lg.grads);
            net.update_running_stats(&lg.batch_mean, &lg.batch_var, lg.n_steps);
            loss_sum += lg.loss;
            updates += 1;
        }
        loss_history.push(if updates > 0 { loss_sum / updates as f64 } else { f64::NAN });
        positive_fraction.push(if used_steps > 0 {
            pos_steps as f64 / used_steps as f64
        } else {
            f64::NAN
        });
    }
    Ok(SequenceModel {
        net,
        max_len: batch.max_len,
        loss_history,
        positive_fraction,
    })
}
