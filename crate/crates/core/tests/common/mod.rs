//! Helpers shared by the integration tests: random GP problems and a
//! reference GP computed by explicit matrix inversion.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use logitgate::data::{Embedding, LogitMapPair, LogitMapSet, LogitVector};
use logitgate::gp::{KernelParams, NoiseParams};

pub struct GpProblem {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub kernel: KernelParams,
    /// Noise variance per output dimension.
    pub noise: Vec<f64>,
    pub queries: Vec<Vec<f64>>,
}

impl GpProblem {
    pub fn pairs(&self) -> LogitMapSet {
        LogitMapSet::new(
            self.inputs
                .iter()
                .zip(&self.targets)
                .enumerate()
                .map(|(i, (x, y))| LogitMapPair {
                    example_id: format!("p{i}"),
                    embedding: Embedding(x.clone()),
                    oracle_logits: LogitVector(y.clone()),
                })
                .collect(),
        )
        .unwrap()
    }

    pub fn noise_params(&self) -> NoiseParams {
        if self.noise.iter().all(|n| *n == self.noise[0]) {
            NoiseParams::shared(self.noise[0])
        } else {
            NoiseParams::per_dimension(self.noise.clone())
        }
    }
}

/// M ≤ 50 points in d ≤ 8 with V ≤ 5 outputs; a third of the instances use
/// per-dimension noise.
pub fn random_problem(seed: u64) -> GpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=50);
    let d = rng.random_range(1..=8);
    let v = rng.random_range(1..=5);
    let point = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let inputs: Vec<Vec<f64>> = (0..m).map(|_| point(&mut rng)).collect();
    let targets = (0..m)
        .map(|_| (0..v).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let kernel = KernelParams::new(rng.random_range(0.3..3.0), rng.random_range(0.3..2.0));
    let base = rng.random_range(1e-2..1e-1);
    let noise = if seed.is_multiple_of(3) {
        (0..v).map(|_| rng.random_range(1e-2..1e-1)).collect()
    } else {
        vec![base; v]
    };
    let queries = (0..5).map(|_| point(&mut rng)).collect();
    GpProblem {
        inputs,
        targets,
        kernel,
        noise,
        queries,
    }
}

fn k(a: &[f64], b: &[f64], sf2: f64, ls: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    sf2 * (-0.5 * r2 / (ls * ls)).exp()
}

/// Posterior mean and variance per output dimension by forming
/// `(K + σ²I)⁻¹` explicitly.
pub fn naive_predict(p: &GpProblem, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = p.inputs.len();
    let (sf2, ls) = (p.kernel.signal_variance, p.kernel.lengthscale);
    let kx = DVector::from_iterator(m, p.inputs.iter().map(|xi| k(x, xi, sf2, ls)));
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for (v, noise) in p.noise.iter().enumerate() {
        let kmat = DMatrix::from_fn(m, m, |i, j| {
            k(&p.inputs[i], &p.inputs[j], sf2, ls) + if i == j { *noise } else { 0.0 }
        });
        let inv = kmat.try_inverse().expect("reference inversion");
        let y = DVector::from_iterator(m, p.targets.iter().map(|t| t[v]));
        let weights = &inv * y;
        means.push(kx.dot(&weights));
        vars.push(sf2 - kx.dot(&(&inv * &kx)));
    }
    (means, vars)
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}
