//! Autoencoder imputation of standardized visit features.
//!
//! Both variants look only at the current and earlier visits of a patient:
//! the temporal variant reads a window of the current and up to
//! `window - 1` previous visits, the denoising variant reads the current
//! visit's observed cells plus the last observation carried forward from
//! earlier visits. Each input cell comes with an observed/missing indicator.
//! Training randomly hides observed inputs and reconstructs them under a
//! masked squared-error loss, so the network learns to infer hidden cells
//! from the rest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FoldFingerprint;
use crate::nn::mlp::Mlp;
use crate::nn::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputerKind {
    TemporalAutoencoder,
    DenoisingAutoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputerConfig {
    /// Encoder/decoder widths.
    pub hidden: Vec<usize>,
    /// Visits read by the temporal variant, the current one included.
    pub window: usize,
    pub corruption_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        ImputerConfig {
            hidden: vec![64, 32, 32, 64],
            window: 4,
            corruption_rate: 0.2,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

/// One patient's standardized visits; missing cells hold 0 and are flagged
/// in `observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub patient_id: String,
    pub values: Vec<Vec<f64>>,
    pub observed: Vec<Vec<bool>>,
}

impl MaskedSequence {
    pub fn from_options(patient_id: impl Into<String>, rows: &[Vec<Option<f64>>]) -> Self {
        MaskedSequence {
            patient_id: patient_id.into(),
            values: rows.iter().map(|r| r.iter().map(|v| v.unwrap_or(0.0)).collect()).collect(),
            observed: rows.iter().map(|r| r.iter().map(|v| v.is_some()).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub kind: ImputerKind,
    pub n_features: usize,
    pub window: usize,
    pub net: Mlp,
    pub fit_fingerprint: FoldFingerprint,
    /// Masked reconstruction MSE before training and after each epoch.
    pub loss_history: Vec<f64>,
}

struct Sample {
    input: Vec<f64>,
    target: Vec<f64>,
    target_mask: Vec<bool>,
}

impl ImputationModel {
    /// Untrained model with all-zero weights.
    pub fn zeros(kind: ImputerKind, n_features: usize, config: &ImputerConfig, fit_fingerprint: FoldFingerprint) -> Self {
        let (n_in, n_out) = io_dims(kind, n_features, config.window);
        let mut sizes = vec![n_in];
        sizes.extend(&config.hidden);
        sizes.push(n_out);
        ImputationModel {
            kind,
            n_features,
            window: config.window,
            net: Mlp::zeros(&sizes),
            fit_fingerprint,
            loss_history: Vec::new(),
        }
    }

    fn build_sample(&self, seq: &MaskedSequence, t: usize, hide: Option<&mut dyn FnMut() -> bool>) -> Sample {
        let d = self.n_features;
        let mut hide = hide;
        let mut drop = |observed: bool| -> bool {
            match hide.as_mut() {
                Some(f) if observed => f(),
                _ => false,
            }
        };
        match self.kind {
            ImputerKind::TemporalAutoencoder => {
                let w = self.window;
                let mut values = vec![0.0; w * d];
                let mut mask = vec![0.0; w * d];
                let mut target = vec![0.0; w * d];
                let mut target_mask = vec![false; w * d];
                for slot in 0..w {
                    let back = w - 1 - slot;
                    if back > t {
                        continue;
                    }
                    let idx = t - back;
                    for j in 0..d {
                        let o = seq.observed[idx][j];
                        target[slot * d + j] = seq.values[idx][j];
                        target_mask[slot * d + j] = o;
                        if o && !drop(o) {
                            values[slot * d + j] = seq.values[idx][j];
                            mask[slot * d + j] = 1.0;
                        }
                    }
                }
                values.extend(mask);
                Sample {
                    input: values,
                    target,
                    target_mask,
                }
            }
            ImputerKind::DenoisingAutoencoder => {
                let mut cur = vec![0.0; d];
                let mut cur_mask = vec![0.0; d];
                let mut locf = vec![0.0; d];
                let mut locf_mask = vec![0.0; d];
                for j in 0..d {
                    let o = seq.observed[t][j];
                    if o && !drop(o) {
                        cur[j] = seq.values[t][j];
                        cur_mask[j] = 1.0;
                    }
                    if let Some(prev) = (0..t).rev().find(|&s| seq.observed[s][j]) {
                        locf[j] = seq.values[prev][j];
                        locf_mask[j] = 1.0;
                    }
                }
                let mut input = cur;
                input.extend(cur_mask);
                input.extend(locf);
                input.extend(locf_mask);
                Sample {
                    input,
                    target: seq.values[t].clone(),
                    target_mask: seq.observed[t].clone(),
                }
            }
        }
    }

    /// Output index holding the reconstruction of the current visit's
    /// feature `j`.
    fn current_slot(&self, j: usize) -> usize {
        match self.kind {
            ImputerKind::TemporalAutoencoder => (self.window - 1) * self.n_features + j,
            ImputerKind::DenoisingAutoencoder => j,
        }
    }

    fn check_shape(&self, seq: &MaskedSequence) -> Result<()> {
        for row in seq.values.iter().chain(std::iter::empty()) {
            if row.len() != self.n_features {
                return Err(Error::Shape(format!(
                    "patient {} has {} features per visit, imputer expects {}",
                    seq.patient_id,
                    row.len(),
                    self.n_features
                )));
            }
        }
        if seq.observed.len() != seq.values.len() || seq.observed.iter().any(|r| r.len() != self.n_features) {
            return Err(Error::Shape(format!("observation mask of {} does not match its values", seq.patient_id)));
        }
        Ok(())
    }

    /// Masked reconstruction MSE over observed cells, without corruption.
    pub fn masked_mse(&self, data: &[MaskedSequence]) -> f64 {
        let (mut sse, mut count) = (0.0, 0usize);
        for seq in data {
            for t in 0..seq.len() {
                let s = self.build_sample(seq, t, None);
                let out = self.net.forward(&s.input);
                for ((o, y), &m) in out.iter().zip(&s.target).zip(&s.target_mask) {
                    if m {
                        sse += (o - y).powi(2);
                        count += 1;
                    }
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sse / count as f64
        }
    }

    /// Fills missing cells; observed cells are returned unchanged.
    pub fn impute(&self, seq: &MaskedSequence) -> Result<Vec<Vec<f64>>> {
        self.check_shape(seq)?;
        let mut out = seq.values.clone();
        for t in 0..seq.len() {
            if seq.observed[t].iter().all(|&o| o) {
                continue;
            }
            let s = self.build_sample(seq, t, None);
            let recon = self.net.forward(&s.input);
            for j in 0..self.n_features {
                if !seq.observed[t][j] {
                    out[t][j] = recon[self.current_slot(j)];
                }
            }
        }
        Ok(out)
    }
}

fn io_dims(kind: ImputerKind, d: usize, window: usize) -> (usize, usize) {
    match kind {
        ImputerKind::TemporalAutoencoder => (2 * window * d, window * d),
        ImputerKind::DenoisingAutoencoder => (4 * d, d),
    }
}

/// Trains an imputer on standardized training-fold sequences.
pub fn fit_imputer(
    train: &[MaskedSequence],
    kind: ImputerKind,
    config: &ImputerConfig,
    seed: u64,
) -> Result<ImputationModel> {
    let d = train
        .iter()
        .find_map(|s| s.values.first().map(|r| r.len()))
        .ok_or_else(|| Error::Config("imputer needs at least one training visit".into()))?;
    if config.window == 0 || config.batch_size == 0 {
        return Err(Error::Config("imputer window and batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.corruption_rate) {
        return Err(Error::Config("corruption rate must lie in [0, 1)".into()));
    }
    let fingerprint = FoldFingerprint::from_ids(train.iter().map(|s| s.patient_id.as_str()));
    let mut model = ImputationModel::zeros(kind, d, config, fingerprint);
    for seq in train {
        model.check_shape(seq)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_out) = io_dims(kind, d, config.window);
    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden);
    sizes.push(n_out);
    model.net = Mlp::new(&sizes, &mut rng);

    let mut index: Vec<(usize, usize)> = Vec::new();
    for (i, seq) in train.iter().enumerate() {
        for t in 0..seq.len() {
            if seq.observed[t].iter().any(|&o| o) {
                index.push((i, t));
            }
        }
    }

    let initial = model.masked_mse(train);
    model.loss_history.push(initial);
    let mut opt = Adam::new(model.net.n_params(), config.learning_rate);
    let rate = config.corruption_rate;
    for epoch in 1..=config.epochs {
        index.shuffle(&mut rng);
        for batch in index.chunks(config.batch_size) {
            let mut grads = vec![0.0; model.net.n_params()];
            let mut samples = Vec::with_capacity(batch.len());
            for &(i, t) in batch {
                let mut hide = || rng.random::<f64>() < rate;
                samples.push(model.build_sample(&train[i], t, Some(&mut hide)));
            }
            let n_obs = samples
                .iter()
                .map(|s| s.target_mask.iter().filter(|&&m| m).count())
                .sum::<usize>()
                .max(1) as f64;
            for s in &samples {
                let acts = model.net.forward_cached(&s.input);
                let out = acts.last().unwrap();
                let dout: Vec<f64> = out
                    .iter()
                    .zip(&s.target)
                    .zip(&s.target_mask)
                    .map(|((o, y), &m)| if m { 2.0 * (o - y) / n_obs } else { 0.0 })
                    .collect();
                model.net.backward(&acts, &dout, &mut grads);
            }
            opt.step(&mut model.net.params, &grads);
        }
        let loss = model.masked_mse(train);
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "imputer reconstruction loss is not finite".into(),
            });
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Sequences with a persistent per-patient level plus small visit noise,
    /// standardized to roughly unit variance.
    fn correlated_data(n: usize, d: usize, seed: u64) -> Vec<MaskedSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let level: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
                let len = rng.random_range(2..8);
                let values: Vec<Vec<f64>> = (0..len)
                    .map(|_| level.iter().map(|l| 0.95 * l + 0.3 * normal.sample(&mut rng)).collect())
                    .collect();
                MaskedSequence {
                    patient_id: format!("p{i}"),
                    observed: vec![vec![true; d]; len],
                    values,
                }
            })
            .collect()
    }

    fn small_config() -> ImputerConfig {
        ImputerConfig {
            hidden: vec![16, 8, 8, 16],
            epochs: 15,
            learning_rate: 3e-3,
            ..ImputerConfig::default()
        }
    }

    #[test]
    fn fully_observed_sequence_is_unchanged() {
        let data = correlated_data(20, 3, 1);
        let model = fit_imputer(&data, ImputerKind::DenoisingAutoencoder, &small_config(), 3).unwrap();
        assert_eq!(model.impute(&data[0]).unwrap(), data[0].values);
    }

    #[test]
    fn zero_network_mse_is_standardized_variance() {
        let data = correlated_data(400, 4, 2);
        let model = ImputationModel::zeros(
            ImputerKind::DenoisingAutoencoder,
            4,
            &ImputerConfig::default(),
            FoldFingerprint::from_ids(["x"]),
        );
        let (mut ss, mut n) = (0.0, 0.0);
        for s in &data {
            for r in &s.values {
                for v in r {
                    ss += v * v;
                    n += 1.0;
                }
            }
        }
        let expected = ss / n;
        let mse = model.masked_mse(&data);
        assert!((mse - expected).abs() < 1e-12);
        assert!((mse - 1.0).abs() < 0.1, "mse {mse}");
    }

    #[test]
    fn training_reduces_loss_and_beats_mean_imputation() {
        for kind in [ImputerKind::DenoisingAutoencoder, ImputerKind::TemporalAutoencoder] {
            let train = correlated_data(200, 4, 5);
            let model = fit_imputer(&train, kind, &small_config(), 7).unwrap();
            assert!(model.loss_history.last().unwrap() < &model.loss_history[0]);

            // hide 20% of held-out cells completely at random
            let test = correlated_data(100, 4, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let (mut se_ae, mut se_mean, mut n) = (0.0, 0.0, 0.0);
            for seq in &test {
                let mut masked = seq.clone();
                for t in 0..seq.len() {
                    for j in 0..4 {
                        if rng.random::<f64>() < 0.2 {
                            masked.observed[t][j] = false;
                            masked.values[t][j] = 0.0;
                        }
                    }
                }
                let filled = model.impute(&masked).unwrap();
                for t in 0..seq.len() {
                    for j in 0..4 {
                        if !masked.observed[t][j] {
                            se_ae += (filled[t][j] - seq.values[t][j]).powi(2);
                            se_mean += seq.values[t][j].powi(2);
                            n += 1.0;
                        } else {
                            assert_eq!(filled[t][j], seq.values[t][j]);
                        }
                    }
                }
            }
            let (rmse_ae, rmse_mean) = ((se_ae / n).sqrt(), (se_mean / n).sqrt());
            assert!(rmse_ae < rmse_mean, "{kind:?}: {rmse_ae} vs {rmse_mean}");
        }
    }

    #[test]
    fn denoising_fill_ignores_later_visits() {
        let data = correlated_data(60, 3, 11);
        let model = fit_imputer(&data, ImputerKind::DenoisingAutoencoder, &small_config(), 1).unwrap();
        let mut seq = data[0].clone();
        while seq.len() < 3 {
            seq.values.push(vec![0.1, 0.2, 0.3]);
            seq.observed.push(vec![true; 3]);
        }
        seq.observed[1] = vec![false, true, false];
        let before = model.impute(&seq).unwrap();
        seq.values[2] = vec![7.0, -7.0, 3.0];
        seq.observed[2] = vec![true, false, true];
        let after = model.impute(&seq).unwrap();
        assert_eq!(before[..2], after[..2]);
    }

    #[test]
    fn all_missing_visit_gets_finite_fill() {
        let data = correlated_data(80, 3, 12);
        let model = fit_imputer(&data, ImputerKind::TemporalAutoencoder, &small_config(), 1).unwrap();
        let mut seq = data[1].clone();
        let last = seq.len() - 1;
        seq.observed[last] = vec![false; 3];
        seq.values[last] = vec![0.0; 3];
        let filled = model.impute(&seq).unwrap();
        assert!(filled[last].iter().all(|v| v.is_finite() && v.abs() < 10.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let data = correlated_data(10, 3, 1);
        let model = fit_imputer(&data, ImputerKind::DenoisingAutoencoder, &small_config(), 1).unwrap();
        let bad = MaskedSequence::from_options("z", &[vec![Some(1.0), None]]);
        assert!(matches!(model.impute(&bad), Err(Error::Shape(_))));
    }
}
