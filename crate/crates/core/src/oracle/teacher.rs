use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Oracle, OracleResponse};
use crate::data::{Dataset, Example, LogitVector};
use crate::error::{Error, Result};
use crate::proxy::{train_proxy, Architecture, Objective, ProxyParams, Supervision, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSpec {
    /// Hidden width of the teacher MLP.
    pub capacity: usize,
    /// Fraction of training labels replaced by a different random class.
    pub label_noise: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            capacity: 32,
            label_noise: 0.0,
            epochs: 10,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// A classifier trained inside the harness and then exposed only through the
/// [`Oracle`] interface.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    params: ProxyParams,
    accuracy: f64,
    name: String,
}

/// Trains an MLP teacher on `dataset` with `spec.label_noise` of the labels
/// corrupted, and seals it.
pub fn make_synthetic_teacher(dataset: &Dataset, spec: &TeacherSpec) -> Result<SyntheticTeacher> {
    dataset.require_nonempty()?;
    if !(0.0..=1.0).contains(&spec.label_noise) || spec.capacity == 0 {
        return Err(Error::InvalidSpec(format!(
            "teacher capacity {} / label noise {}",
            spec.capacity, spec.label_noise
        )));
    }
    let v = dataset.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e4c_4e11);
    let mut examples: Vec<Example> = dataset.examples().to_vec();
    if v > 1 {
        let corrupt = (spec.label_noise * examples.len() as f64).round() as usize;
        let mut idx: Vec<usize> = (0..examples.len()).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(corrupt) {
            let offset = rng.random_range(1..v);
            examples[i].label = (examples[i].label + offset) % v;
        }
    }
    let noisy = Dataset::new(examples, v, dataset.dim())?;

    let arch = Architecture::Mlp { hidden: spec.capacity };
    let init = ProxyParams::random(arch, dataset.dim(), v, spec.seed);
    let config = TrainConfig {
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        learning_rate: spec.learning_rate,
        momentum: spec.momentum,
        seed: spec.seed,
        objective: Objective::PlainFt,
        ..TrainConfig::default()
    };
    let trained = train_proxy(&config, &noisy, &init, Supervision::default())?
        .params
        .seal();

    let mut correct = 0;
    for ex in dataset {
        correct += usize::from(trained.forward(&ex.embedding)?.argmax() == ex.label);
    }
    Ok(SyntheticTeacher {
        accuracy: correct as f64 / dataset.len() as f64,
        name: format!("synthetic-mlp{}-seed{}", spec.capacity, spec.seed),
        params: trained,
    })
}

impl SyntheticTeacher {
    /// Accuracy against the clean labels of the training set.
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    /// Accuracy on an arbitrary split, without going through the ledger.
    pub fn accuracy_on(&self, dataset: &Dataset) -> Result<f64> {
        let mut correct = 0;
        for ex in dataset {
            correct += usize::from(self.evaluate_direct(&ex.embedding)?.argmax() == ex.label);
        }
        Ok(correct as f64 / dataset.len().max(1) as f64)
    }

    /// Un-ledgered forward pass, for verification only.
    pub fn evaluate_direct(&self, x: &[f64]) -> Result<LogitVector> {
        self.params.forward(x)
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }
}

impl Oracle for SyntheticTeacher {
    fn vocab_size(&self) -> usize {
        self.params.num_classes
    }

    fn evaluate(&self, example: &Example) -> Result<OracleResponse> {
        Ok(self.params.forward(&example.embedding)?.into())
    }

    fn model_id(&self) -> &str {
        &self.name
    }
}
