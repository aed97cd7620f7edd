//! Feed-forward network with tanh hidden layers and a linear output layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemv, gemv_t, ger, glorot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first, output last.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        }
    }

    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            glorot(&mut mlp.params[off..off + fan_in * fan_out], fan_in, fan_out, rng);
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Returns activations of every layer, input included.
    pub fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out = b.to_vec();
            gemv(w, n_out, n_in, &acts[l], &mut out);
            if l + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).pop().unwrap()
    }

    /// Accumulates parameter gradients for output gradient `dout`.
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grads: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for l in 0..self.n_layers() {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 < self.n_layers() {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            ger(&mut grads[off..off + n_in * n_out], n_out, n_in, &delta, &acts[l]);
            for (g, d) in grads[off + n_in * n_out..off + n_in * n_out + n_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                gemv_t(&self.params[off..off + n_in * n_out], n_out, n_in, &delta, &mut prev);
                delta = prev;
            }
        }
    }
}
