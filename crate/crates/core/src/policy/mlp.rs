//! Fully connected tanh network with a linear output layer, stored as one
//! flat parameter vector so optimizers and gradient checks can treat it as a
//! plain slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass, reused across calls.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. The output layer's weights are
    /// multiplied by `out_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(Self::count(sizes));
        let layers = sizes.len() - 1;
        for (l, pair) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let scale = if l + 1 == layers { out_scale } else { 1.0 };
            for _ in 0..n_in * n_out {
                params.push(scale * rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable view of the output layer's biases.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.output_dim();
        let len = self.params.len();
        &mut self.params[len - n..]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache).to_vec()
    }

    pub fn forward_cached<'c>(&self, x: &[f64], cache: &'c mut Cache) -> &'c [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        cache.acts.resize_with(self.sizes.len(), Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            for (row, &bias) in w.chunks_exact(n_in).zip(b) {
                let z = bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l + 1 < layers { z.tanh() } else { z });
            }
            offset += n_in * n_out + n_out;
        }
        &cache.acts[layers]
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`
    /// for the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut delta = dout.to_vec();
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let input = &cache.acts[l];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (j, &d) in delta.iter().enumerate() {
                gb[j] += d;
                for (g, &a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let w = &self.params[offset..offset + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (j, &d) in delta.iter().enumerate() {
                    for (p, &wij) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += d * wij;
                    }
                }
                // tanh' = 1 - tanh^2 on the hidden activation feeding this layer.
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}
