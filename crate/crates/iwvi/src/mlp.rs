//! Two-layer perceptrons with hand-written forward and backward passes.
//!
//! Layout: `Linear(in -> hidden) -> ReLU -> Linear(hidden -> out)`.
//! Weights are row-major `(out_dim, in_dim)`. The backward pass consumes the
//! activations cached by [`Mlp::forward_cached`].

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Cached activations from one forward evaluation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub pre1: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Gradient buffer with the same shape as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn glorot<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(in_dim, hidden, out_dim);
        let lim1 = (6.0 / (in_dim + hidden) as f64).sqrt();
        for w in &mut mlp.w1 {
            *w = rng.gen_range(-lim1..lim1);
        }
        let lim2 = (6.0 / (hidden + out_dim) as f64).sqrt();
        for w in &mut mlp.w2 {
            *w = rng.gen_range(-lim2..lim2);
        }
        mlp
    }

    /// Multiply the output layer in place; used to control the scale of the
    /// scores a randomly initialized map produces.
    pub fn scale_output(&mut self, factor: f64) {
        for w in &mut self.w2 {
            *w *= factor;
        }
        for b in &mut self.b2 {
            *b *= factor;
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim {
            return Err(Error::ShapeMismatch {
                context: "mlp input",
                expected: self.in_dim,
                got: x.len(),
            });
        }
        let mut pre1 = self.b1.clone();
        for h in 0..self.hidden {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            pre1[h] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let hidden: Vec<f64> = pre1.iter().map(|&p| p.max(0.0)).collect();
        let mut out = self.b2.clone();
        for o in 0..self.out_dim {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            out[o] += row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok((
            out,
            MlpCache {
                input: x.to_vec(),
                pre1,
                hidden,
            },
        ))
    }

    /// Accumulate parameter gradients for `d loss / d output = dout` into
    /// `grads`. Returns nothing extra; input gradients are not needed
    /// anywhere in the crate (features are data, not parameters).
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grads: &mut MlpGrads) {
        debug_assert_eq!(dout.len(), self.out_dim);
        let mut dhidden = vec![0.0; self.hidden];
        for o in 0..self.out_dim {
            let g = dout[o];
            if g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let row = &mut grads.w2[o * self.hidden..(o + 1) * self.hidden];
            let wrow = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                row[h] += g * cache.hidden[h];
                dhidden[h] += g * wrow[h];
            }
        }
        for h in 0..self.hidden {
            if cache.pre1[h] <= 0.0 {
                continue; // ReLU gate
            }
            let g = dhidden[h];
            if g == 0.0 {
                continue;
            }
            grads.b1[h] += g;
            let row = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for (i, gi) in row.iter_mut().enumerate() {
                *gi += g * cache.input[i];
            }
        }
    }

    /// Parameters flattened in the fixed order `w1, b1, w2, b2`.
    pub fn flatten_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
    }

    /// Inverse of [`Mlp::flatten_params`]; consumes exactly
    /// `self.num_params()` values from the slice and returns the rest.
    pub fn unflatten_params<'a>(&mut self, data: &'a [f64]) -> Result<&'a [f64]> {
        if data.len() < self.num_params() {
            return Err(Error::ShapeMismatch {
                context: "mlp parameter blob",
                expected: self.num_params(),
                got: data.len(),
            });
        }
        let (w1, rest) = data.split_at(self.w1.len());
        self.w1.copy_from_slice(w1);
        let (b1, rest) = rest.split_at(self.b1.len());
        self.b1.copy_from_slice(b1);
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w2.copy_from_slice(w2);
        let (b2, rest) = rest.split_at(self.b2.len());
        self.b2.copy_from_slice(b2);
        Ok(rest)
    }

    /// `theta -= alpha * grads`, the plain SGD step.
    pub fn sgd_step(&mut self, grads: &MlpGrads, alpha: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grads.w1) {
            *w -= alpha * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&grads.b1) {
            *w -= alpha * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grads.w2) {
            *w -= alpha * g;
        }
        for (w, g) in self.b2.iter_mut().zip(&grads.b2) {
            *w -= alpha * g;
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            w1: vec![0.0; mlp.w1.len()],
            b1: vec![0.0; mlp.b1.len()],
            w2: vec![0.0; mlp.w2.len()],
            b2: vec![0.0; mlp.b2.len()],
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *g *= factor;
        }
    }

    pub fn flatten(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
    }
}
