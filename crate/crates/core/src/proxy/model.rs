use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LogitVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    /// `Wx + b`.
    LinearSoftmax,
    /// `W₂ tanh(W₁x + b₁) + b₂`.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyRole {
    FrozenMinus,
    TrainablePlus,
}

/// Parameters of a small differentiable classifier, flattened into one buffer.
///
/// Linear layout: `W (V×d) | b (V)`. MLP layout: `W₁ (h×d) | b₁ (h) | W₂ (V×h) | b₂ (V)`.
/// All matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub role: ProxyRole,
    weights: Vec<f64>,
}

impl ProxyParams {
    pub fn param_count(architecture: Architecture, input_dim: usize, num_classes: usize) -> usize {
        match architecture {
            Architecture::LinearSoftmax => num_classes * input_dim + num_classes,
            Architecture::Mlp { hidden } => hidden * input_dim + hidden + num_classes * hidden + num_classes,
        }
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture,
            input_dim,
            num_classes,
            role: ProxyRole::FrozenMinus,
            weights: vec![0.0; Self::param_count(architecture, input_dim, num_classes)],
        }
    }

    /// Gaussian init scaled by `1/√fan_in`; biases start at zero.
    pub fn random(architecture: Architecture, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut p = Self::zeros(architecture, input_dim, num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("valid std");
            slice.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        };
        let d = input_dim;
        let v = num_classes;
        match architecture {
            Architecture::LinearSoftmax => fill(&mut p.weights[..v * d], d),
            Architecture::Mlp { hidden: h } => {
                fill(&mut p.weights[..h * d], d);
                let w2 = h * d + h;
                fill(&mut p.weights[w2..w2 + v * h], h);
            }
        }
        p
    }

    pub fn from_weights(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::param_count(architecture, input_dim, num_classes);
        if weights.len() != expected {
            return Err(Error::dims(expected, weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("proxy weights"));
        }
        Ok(Self {
            architecture,
            input_dim,
            num_classes,
            role: ProxyRole::FrozenMinus,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// A trainable copy of these parameters.
    pub fn to_trainable(&self) -> Self {
        Self {
            role: ProxyRole::TrainablePlus,
            ..self.clone()
        }
    }

    /// Marks the parameters as the frozen reference copy.
    pub fn seal(mut self) -> Self {
        self.role = ProxyRole::FrozenMinus;
        self
    }

    /// SHA-256 of architecture, shape and weight bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.architecture).unwrap_or_default());
        h.update((self.input_dim as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for w in &self.weights {
            h.update(w.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dims(self.input_dim, x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        self.check_input(x)?;
        let (logits, _) = self.forward_inner(&self.weights, x);
        Ok(LogitVector(logits))
    }

    /// Forward pass with an explicit weight buffer; returns logits and, for the
    /// MLP, the hidden activations.
    fn forward_inner(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim;
        let v = self.num_classes;
        match self.architecture {
            Architecture::LinearSoftmax => (affine(&w[..v * d], &w[v * d..v * d + v], x), Vec::new()),
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = w.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(v * h);
                let mut hid = affine(w1, b1, x);
                hid.iter_mut().for_each(|a| *a = a.tanh());
                (affine(w2, b2, &hid), hid)
            }
        }
    }

    /// Adds `∂(dlogitsᵀ · logits)/∂θ` at `x` into `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        if dlogits.len() != self.num_classes {
            return Err(Error::dims(self.num_classes, dlogits.len()));
        }
        if grad.len() != self.weights.len() {
            return Err(Error::dims(self.weights.len(), grad.len()));
        }
        let d = self.input_dim;
        let v = self.num_classes;
        match self.architecture {
            Architecture::LinearSoftmax => {
                let (gw, gb) = grad.split_at_mut(v * d);
                outer_add(gw, dlogits, x);
                gb.iter_mut().zip(dlogits).for_each(|(g, dl)| *g += dl);
            }
            Architecture::Mlp { hidden: h } => {
                let (_, hid) = self.forward_inner(&self.weights, x);
                let w2 = &self.weights[h * d + h..h * d + h + v * h];
                let mut dhid = vec![0.0; h];
                for (k, dl) in dlogits.iter().enumerate() {
                    for (j, dh) in dhid.iter_mut().enumerate() {
                        *dh += dl * w2[k * h + j];
                    }
                }
                for (dh, a) in dhid.iter_mut().zip(&hid) {
                    *dh *= 1.0 - a * a;
                }
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(v * h);
                outer_add(gw1, &dhid, x);
                gb1.iter_mut().zip(&dhid).for_each(|(g, dh)| *g += dh);
                outer_add(gw2, dlogits, &hid);
                gb2.iter_mut().zip(dlogits).for_each(|(g, dl)| *g += dl);
            }
        }
        Ok(())
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            bi + w[i * x.len()..(i + 1) * x.len()]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

fn outer_add(g: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            g[i * n + j] += r * c;
        }
    }
}
