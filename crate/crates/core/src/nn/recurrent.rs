//! Stacked unidirectional GRU/LSTM with batch normalization, inverted
//! dropout and a per-step sigmoid head, trained by backpropagation through
//! time.
//!
//! Sequences are given as their valid steps only. Pre-padded steps leave the
//! recurrent state at zero, so running a sequence from its first valid step
//! is the same as running its padded row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemv, gemv_t, ger, glorot, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    n_in: usize,
    h: usize,
    w: usize,
    u: usize,
    b: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<LayerLayout>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub params: Vec<f64>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

/// Per-layer dropout multipliers, one row of `hidden[l]` values per step of
/// the flattened batch. Entries are 0 or `1 / (1 - rate)`.
pub type DropoutMasks = Vec<Vec<f64>>;

/// Result of a training-mode pass over one batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub batch_mean: Vec<Vec<f64>>,
    pub batch_var: Vec<Vec<f64>>,
    pub n_steps: usize,
}

struct LayerCache {
    input: Vec<f64>,
    /// Gate activations, `gates * h` per step.
    gates: Vec<f64>,
    /// GRU: r * h_prev. LSTM: cell state.
    aux: Vec<f64>,
    hidden: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl RecurrentNet {
    pub fn new(cell: CellKind, input_dim: usize, hidden: &[usize], dropout: &[f64], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(cell, input_dim, hidden, dropout);
        let layout = net.layout();
        let g = cell.gates();
        for l in &layout.layers {
            glorot(&mut net.params[l.w..l.w + g * l.h * l.n_in], l.n_in, g * l.h, rng);
            glorot(&mut net.params[l.u..l.u + g * l.h * l.h], l.h, g * l.h, rng);
            net.params[l.gamma..l.gamma + l.h].iter_mut().for_each(|v| *v = 1.0);
            if cell == CellKind::Lstm {
                net.params[l.b + l.h..l.b + 2 * l.h].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let last = *hidden.last().unwrap();
        glorot(&mut net.params[layout.head_w..layout.head_w + last], last, 1, rng);
        net
    }

    /// All parameters zero except batch-norm scales, which are one.
    pub fn zeros(cell: CellKind, input_dim: usize, hidden: &[usize], dropout: &[f64]) -> Self {
        assert!(!hidden.is_empty() && hidden.len() == dropout.len());
        let mut net = RecurrentNet {
            cell,
            input_dim,
            hidden: hidden.to_vec(),
            dropout: dropout.to_vec(),
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            params: Vec::new(),
            running_mean: hidden.iter().map(|&h| vec![0.0; h]).collect(),
            running_var: hidden.iter().map(|&h| vec![1.0; h]).collect(),
        };
        let layout = net.layout();
        net.params = vec![0.0; layout.total];
        for l in &layout.layers {
            net.params[l.gamma..l.gamma + l.h].iter_mut().for_each(|v| *v = 1.0);
        }
        net
    }

    fn layout(&self) -> Layout {
        let g = self.cell.gates();
        let mut off = 0;
        let mut n_in = self.input_dim;
        let mut layers = Vec::new();
        for &h in &self.hidden {
            let w = off;
            let u = w + g * h * n_in;
            let b = u + g * h * h;
            let gamma = b + g * h;
            let beta = gamma + h;
            off = beta + h;
            layers.push(LayerLayout {
                n_in,
                h,
                w,
                u,
                b,
                gamma,
                beta,
            });
            n_in = h;
        }
        let head_w = off;
        let head_b = head_w + n_in;
        Layout {
            layers,
            head_w,
            head_b,
            total: head_b + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Index of the output bias.
    pub fn head_bias_index(&self) -> usize {
        self.layout().head_b
    }

    /// Parameter ranges subject to L2 weight decay (input, recurrent and
    /// head kernels).
    pub fn kernel_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let layout = self.layout();
        let mut ranges: Vec<_> = layout.layers.iter().map(|l| l.w..l.b).collect();
        ranges.push(layout.head_w..layout.head_b);
        ranges
    }

    pub fn sample_dropout_masks(&self, n_steps: usize, rng: &mut impl Rng) -> DropoutMasks {
        self.hidden
            .iter()
            .zip(&self.dropout)
            .map(|(&h, &rate)| {
                let keep = 1.0 / (1.0 - rate);
                (0..n_steps * h)
                    .map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }

    pub fn no_dropout_masks(&self, n_steps: usize) -> DropoutMasks {
        self.hidden.iter().map(|&h| vec![1.0; n_steps * h]).collect()
    }

    /// Inference-mode per-step probabilities for one sequence.
    pub fn predict(&self, steps: &[Vec<f64>]) -> Vec<f64> {
        self.predict_logits(steps).into_iter().map(sigmoid).collect()
    }

    pub fn predict_logits(&self, steps: &[Vec<f64>]) -> Vec<f64> {
        let layout = self.layout();
        let n = steps.len();
        let mut input: Vec<f64> = steps.iter().flat_map(|s| s.iter().copied()).collect();
        for (li, l) in layout.layers.iter().enumerate() {
            let mut cache = self.cell_forward(l, &input, &[(0, n)]);
            let gamma = &self.params[l.gamma..l.gamma + l.h];
            let beta = &self.params[l.beta..l.beta + l.h];
            for k in 0..n {
                for j in 0..l.h {
                    let x = cache.hidden[k * l.h + j];
                    let xhat = (x - self.running_mean[li][j]) / (self.running_var[li][j] + self.bn_epsilon).sqrt();
                    cache.hidden[k * l.h + j] = gamma[j] * xhat + beta[j];
                }
            }
            input = cache.hidden;
        }
        self.head(&layout, &input, n)
    }

    fn head(&self, layout: &Layout, input: &[f64], n: usize) -> Vec<f64> {
        let h = *self.hidden.last().unwrap();
        let w = &self.params[layout.head_w..layout.head_w + h];
        let b = self.params[layout.head_b];
        (0..n)
            .map(|k| b + w.iter().zip(&input[k * h..(k + 1) * h]).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Runs one recurrent layer over every sequence. `spans` holds
    /// `(offset, len)` of each sequence in the flattened step axis.
    fn cell_forward(&self, l: &LayerLayout, input: &[f64], spans: &[(usize, usize)]) -> LayerCache {
        let n: usize = spans.iter().map(|s| s.1).sum();
        let h = l.h;
        let g = self.cell.gates();
        let p = &self.params;
        let w = &p[l.w..l.u];
        let u = &p[l.u..l.b];
        let b = &p[l.b..l.b + g * h];
        let mut gates = vec![0.0; n * g * h];
        let mut aux = vec![0.0; n * h];
        let mut hidden = vec![0.0; n * h];
        let zeros = vec![0.0; h];
        for &(off, len) in spans {
            for k in off..off + len {
                let x = &input[k * l.n_in..(k + 1) * l.n_in];
                let (h_prev, c_prev): (Vec<f64>, Vec<f64>) = if k == off {
                    (zeros.clone(), zeros.clone())
                } else {
                    (
                        hidden[(k - 1) * h..k * h].to_vec(),
                        aux[(k - 1) * h..k * h].to_vec(),
                    )
                };
                let mut a = b.to_vec();
                gemv(w, g * h, l.n_in, x, &mut a);
                let gk = &mut gates[k * g * h..(k + 1) * g * h];
                match self.cell {
                    CellKind::Gru => {
                        gemv(&u[..2 * h * h], 2 * h, h, &h_prev, &mut a[..2 * h]);
                        for j in 0..2 * h {
                            gk[j] = sigmoid(a[j]);
                        }
                        let rh: Vec<f64> = (0..h).map(|j| gk[h + j] * h_prev[j]).collect();
                        gemv(&u[2 * h * h..], h, h, &rh, &mut a[2 * h..]);
                        for j in 0..h {
                            let nj = a[2 * h + j].tanh();
                            gk[2 * h + j] = nj;
                            let z = gk[j];
                            hidden[k * h + j] = z * h_prev[j] + (1.0 - z) * nj;
                        }
                        aux[k * h..(k + 1) * h].copy_from_slice(&rh);
                    }
                    CellKind::Lstm => {
                        gemv(u, 4 * h, h, &h_prev, &mut a);
                        for j in 0..h {
                            let i = sigmoid(a[j]);
                            let f = sigmoid(a[h + j]);
                            let gg = a[2 * h + j].tanh();
                            let o = sigmoid(a[3 * h + j]);
                            gk[j] = i;
                            gk[h + j] = f;
                            gk[2 * h + j] = gg;
                            gk[3 * h + j] = o;
                            let c = f * c_prev[j] + i * gg;
                            aux[k * h + j] = c;
                            hidden[k * h + j] = o * c.tanh();
                        }
                    }
                }
            }
        }
        LayerCache {
            input: input.to_vec(),
            gates,
            aux,
            hidden,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            mean: Vec::new(),
            var: Vec::new(),
        }
    }

    /// Backpropagates `d_hidden` through one recurrent layer; accumulates
    /// parameter gradients and returns the gradient w.r.t. the layer input.
    fn cell_backward(
        &self,
        l: &LayerLayout,
        cache: &LayerCache,
        spans: &[(usize, usize)],
        d_hidden: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let h = l.h;
        let g = self.cell.gates();
        let p = &self.params;
        let w = &p[l.w..l.u];
        let u = &p[l.u..l.b];
        let n = d_hidden.len() / h;
        let mut d_input = vec![0.0; n * l.n_in];
        let zeros = vec![0.0; h];
        let (gw_start, gu_start, gb_start) = (l.w, l.u, l.b);

        for &(off, len) in spans {
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for k in (off..off + len).rev() {
                let h_prev: &[f64] = if k == off { &zeros } else { &cache.hidden[(k - 1) * h..k * h] };
                let gk = &cache.gates[k * g * h..(k + 1) * g * h];
                let dh: Vec<f64> = (0..h).map(|j| d_hidden[k * h + j] + dh_next[j]).collect();
                let mut da = vec![0.0; g * h];
                let mut dh_prev = vec![0.0; h];
                match self.cell {
                    CellKind::Gru => {
                        let rh = &cache.aux[k * h..(k + 1) * h];
                        let mut dan = vec![0.0; h];
                        for j in 0..h {
                            let (z, nj) = (gk[j], gk[2 * h + j]);
                            let dz = dh[j] * (h_prev[j] - nj);
                            dan[j] = dh[j] * (1.0 - z) * (1.0 - nj * nj);
                            dh_prev[j] = dh[j] * z;
                            da[j] = dz * z * (1.0 - z);
                            da[2 * h + j] = dan[j];
                        }
                        let mut drh = vec![0.0; h];
                        gemv_t(&u[2 * h * h..], h, h, &dan, &mut drh);
                        ger(&mut grads[gu_start + 2 * h * h..gu_start + 3 * h * h], h, h, &dan, rh);
                        for j in 0..h {
                            let r = gk[h + j];
                            dh_prev[j] += drh[j] * r;
                            da[h + j] = drh[j] * h_prev[j] * r * (1.0 - r);
                        }
                        ger(&mut grads[gu_start..gu_start + 2 * h * h], 2 * h, h, &da[..2 * h], h_prev);
                        gemv_t(&u[..2 * h * h], 2 * h, h, &da[..2 * h], &mut dh_prev);
                    }
                    CellKind::Lstm => {
                        let c_prev: &[f64] = if k == off { &zeros } else { &cache.aux[(k - 1) * h..k * h] };
                        for j in 0..h {
                            let (i, f, gg, o) = (gk[j], gk[h + j], gk[2 * h + j], gk[3 * h + j]);
                            let tc = cache.aux[k * h + j].tanh();
                            let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                            da[j] = dc * gg * i * (1.0 - i);
                            da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                            da[2 * h + j] = dc * i * (1.0 - gg * gg);
                            da[3 * h + j] = dh[j] * tc * o * (1.0 - o);
                            dc_next[j] = dc * f;
                        }
                        ger(&mut grads[gu_start..gu_start + 4 * h * h], 4 * h, h, &da, h_prev);
                        gemv_t(u, 4 * h, h, &da, &mut dh_prev);
                    }
                }
                let x = &cache.input[k * l.n_in..(k + 1) * l.n_in];
                ger(&mut grads[gw_start..gw_start + g * h * l.n_in], g * h, l.n_in, &da, x);
                for (gb, d) in grads[gb_start..gb_start + g * h].iter_mut().zip(&da) {
                    *gb += d;
                }
                gemv_t(w, g * h, l.n_in, &da, &mut d_input[k * l.n_in..(k + 1) * l.n_in]);
                dh_next = dh_prev;
            }
        }
        d_input
    }

    /// Training-mode forward pass returning per-step logits and caches.
    fn train_forward(
        &self,
        layout: &Layout,
        sequences: &[&[Vec<f64>]],
        masks: &DropoutMasks,
    ) -> (Vec<f64>, Vec<LayerCache>, Vec<f64>, Vec<(usize, usize)>) {
        let mut spans = Vec::with_capacity(sequences.len());
        let mut off = 0;
        for s in sequences {
            spans.push((off, s.len()));
            off += s.len();
        }
        let n = off;
        let mut input: Vec<f64> = sequences.iter().flat_map(|s| s.iter().flat_map(|x| x.iter().copied())).collect();
        debug_assert_eq!(input.len(), n * self.input_dim);
        let mut caches = Vec::with_capacity(layout.layers.len());
        for (li, l) in layout.layers.iter().enumerate() {
            let mut cache = self.cell_forward(l, &input, &spans);
            let h = l.h;
            let mut mean = vec![0.0; h];
            let mut var = vec![0.0; h];
            for k in 0..n {
                for j in 0..h {
                    mean[j] += cache.hidden[k * h + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            for k in 0..n {
                for j in 0..h {
                    var[j] += (cache.hidden[k * h + j] - mean[j]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn_epsilon).sqrt()).collect();
            let gamma = &self.params[l.gamma..l.gamma + h];
            let beta = &self.params[l.beta..l.beta + h];
            let mut xhat = vec![0.0; n * h];
            let mut out = vec![0.0; n * h];
            for k in 0..n {
                for j in 0..h {
                    let idx = k * h + j;
                    xhat[idx] = (cache.hidden[idx] - mean[j]) * inv_std[j];
                    out[idx] = (gamma[j] * xhat[idx] + beta[j]) * masks[li][idx];
                }
            }
            cache.xhat = xhat;
            cache.inv_std = inv_std;
            cache.mean = mean;
            cache.var = var;
            caches.push(cache);
            input = out;
        }
        let logits = self.head(layout, &input, n);
        (logits, caches, input, spans)
    }

    /// Masked binary cross-entropy (mean over labeled steps) plus
    /// `l2 * sum(kernel^2)`, with its gradient. `targets` mirrors
    /// `sequences`; `None` steps are excluded from the loss.
    pub fn loss_and_grad(
        &self,
        sequences: &[&[Vec<f64>]],
        targets: &[&[Option<f64>]],
        masks: &DropoutMasks,
        l2: f64,
    ) -> LossGrad {
        let layout = self.layout();
        let (logits, caches, top, spans) = self.train_forward(&layout, sequences, masks);
        let n = logits.len();
        let flat_targets: Vec<Option<f64>> = targets.iter().flat_map(|t| t.iter().copied()).collect();
        debug_assert_eq!(flat_targets.len(), n);
        let m = flat_targets.iter().filter(|t| t.is_some()).count().max(1) as f64;

        let mut loss = 0.0;
        let mut dlogit = vec![0.0; n];
        for k in 0..n {
            if let Some(y) = flat_targets[k] {
                let z = logits[k];
                // log(1 + e^z) - y z, evaluated stably
                loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
                dlogit[k] = (sigmoid(z) - y) / m;
            }
        }
        loss /= m;

        let mut grads = vec![0.0; layout.total];
        for range in self.kernel_ranges() {
            for i in range {
                loss += l2 * self.params[i] * self.params[i];
                grads[i] += 2.0 * l2 * self.params[i];
            }
        }

        let h_last = *self.hidden.last().unwrap();
        let head_w = &self.params[layout.head_w..layout.head_w + h_last];
        let mut d_out = vec![0.0; n * h_last];
        for k in 0..n {
            if dlogit[k] == 0.0 {
                continue;
            }
            grads[layout.head_b] += dlogit[k];
            for j in 0..h_last {
                grads[layout.head_w + j] += dlogit[k] * top[k * h_last + j];
                d_out[k * h_last + j] = dlogit[k] * head_w[j];
            }
        }

        for (li, l) in layout.layers.iter().enumerate().rev() {
            let cache = &caches[li];
            let h = l.h;
            let gamma = &self.params[l.gamma..l.gamma + h];
            // dropout, then batch norm
            let mut dxhat = vec![0.0; n * h];
            let mut sum_d = vec![0.0; h];
            let mut sum_dx = vec![0.0; h];
            for k in 0..n {
                for j in 0..h {
                    let idx = k * h + j;
                    let dy = d_out[idx] * masks[li][idx];
                    grads[l.gamma + j] += dy * cache.xhat[idx];
                    grads[l.beta + j] += dy;
                    dxhat[idx] = dy * gamma[j];
                    sum_d[j] += dxhat[idx];
                    sum_dx[j] += dxhat[idx] * cache.xhat[idx];
                }
            }
            let nf = n as f64;
            let mut d_hidden = vec![0.0; n * h];
            for k in 0..n {
                for j in 0..h {
                    let idx = k * h + j;
                    d_hidden[idx] = cache.inv_std[j] / nf * (nf * dxhat[idx] - sum_d[j] - cache.xhat[idx] * sum_dx[j]);
                }
            }
            d_out = self.cell_backward(l, cache, &spans, &d_hidden, &mut grads);
        }

        LossGrad {
            loss,
            grads,
            batch_mean: caches.iter().map(|c| c.mean.clone()).collect(),
            batch_var: caches.iter().map(|c| c.var.clone()).collect(),
            n_steps: n,
        }
    }

    /// Folds batch statistics into the running averages used at inference.
    pub fn update_running_stats(&mut self, batch_mean: &[Vec<f64>], batch_var: &[Vec<f64>], n_steps: usize) {
        let mom = self.bn_momentum;
        let correction = if n_steps > 1 {
            n_steps as f64 / (n_steps as f64 - 1.0)
        } else {
            1.0
        };
        for l in 0..self.hidden.len() {
            for j in 0..self.hidden[l] {
                self.running_mean[l][j] = mom * self.running_mean[l][j] + (1.0 - mom) * batch_mean[l][j];
                self.running_var[l][j] = mom * self.running_var[l][j] + (1.0 - mom) * batch_var[l][j] * correction;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_batch() -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Option<f64>>>) {
        let seqs = vec![
            vec![vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.3, 0.8]],
            vec![vec![-1.2, 0.4], vec![0.1, -0.6], vec![0.9, 1.1]],
        ];
        let targets = vec![
            vec![Some(0.0), None, Some(1.0)],
            vec![Some(1.0), Some(0.0), Some(1.0)],
        ];
        (seqs, targets)
    }

    fn check_gradients(cell: CellKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut net = RecurrentNet::new(cell, 2, &[4, 3], &[0.3, 0.2], &mut rng);
        // perturb BN affine params away from the identity
        for i in 0..net.n_params() {
            net.params[i] += rng.random_range(-0.1..0.1);
        }
        let (seqs, targets) = micro_batch();
        let seq_refs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
        let tgt_refs: Vec<&[Option<f64>]> = targets.iter().map(|t| t.as_slice()).collect();
        let masks = net.sample_dropout_masks(6, &mut rng);
        let l2 = 0.001;
        let analytic = net.loss_and_grad(&seq_refs, &tgt_refs, &masks, l2).grads;
        let h = 1e-5;
        for i in 0..net.n_params() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.loss_and_grad(&seq_refs, &tgt_refs, &masks, l2).loss;
            net.params[i] = orig - h;
            let down = net.loss_and_grad(&seq_refs, &tgt_refs, &masks, l2).loss;
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic[i] - numeric).abs() / denom < 1e-4,
                "{cell:?} param {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gru_gradients() {
        check_gradients(CellKind::Gru);
    }

    #[test]
    fn lstm_gradients() {
        check_gradients(CellKind::Lstm);
    }

    #[test]
    fn zero_network_scores_sigmoid_of_bias() {
        let mut net = RecurrentNet::zeros(CellKind::Gru, 3, &[5, 4], &[0.3, 0.2]);
        let b = net.head_bias_index();
        net.params[b] = 0.7;
        let p = net.predict(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]);
        for v in p {
            assert!((v - sigmoid(0.7)).abs() < 1e-15);
        }
    }

    #[test]
    fn causal_prediction() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let net = RecurrentNet::new(cell, 2, &[6, 3], &[0.3, 0.2], &mut rng);
            let mut seq = vec![vec![0.1, 0.2], vec![0.3, -0.4], vec![1.0, 1.0], vec![-0.5, 0.5]];
            let before = net.predict(&seq);
            seq[2] = vec![5.0, -5.0];
            seq[3] = vec![9.0, 9.0];
            let after = net.predict(&seq);
            assert_eq!(before[..2], after[..2]);
            assert_ne!(before[2], after[2]);
        }
    }
}
