use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{shifted_loss, supervision_shift};
use super::{gated_signal, Architecture, EnsembleWeights, GatedSignal, ProxyParams, SignalSource};
use crate::data::{ApiLedger, Dataset, LedgerSnapshot};
use crate::error::{Error, Result};
use crate::gp::{GateConfig, GpPosterior};
use crate::oracle::CachedOracle;

pub const CHECKPOINT_FORMAT: &str = "logitgate-proxy/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    PlainFt,
    Cpt,
    GpGated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub objective: Objective,
    pub alpha: EnsembleWeights,
    /// Drop dimensions the oracle did not return from the supervision shift
    /// instead of using the floored value.
    pub mask_unobserved: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.0,
            seed: 0,
            objective: Objective::PlainFt,
            alpha: EnsembleWeights::default(),
            mask_unobserved: false,
        }
    }
}

impl TrainConfig {
    /// Default learning rate for an architecture: 0.1 linear, 0.05 MLP.
    pub fn default_learning_rate(arch: Architecture) -> f64 {
        match arch {
            Architecture::LinearSoftmax => 0.1,
            Architecture::Mlp { .. } => 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidSpec(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidSpec(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).unwrap_or_default());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Where the supervision signal comes from. Which fields are needed depends
/// on the objective.
#[derive(Clone, Copy, Default)]
pub struct Supervision<'a> {
    pub oracle: Option<&'a CachedOracle>,
    pub ledger: Option<&'a ApiLedger>,
    pub gp: Option<&'a GpPosterior>,
    pub gate: GateConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub ledger_unique: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ProxyParams,
    pub metrics: Vec<EpochMetrics>,
    pub ledger: Option<LedgerSnapshot>,
    /// Number of distinct examples whose signal came from the oracle because
    /// the GP was too uncertain.
    pub fallbacks: usize,
}

impl TrainOutcome {
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn signals_for(
    objective: Objective,
    dataset: &Dataset,
    supervision: &Supervision<'_>,
) -> Result<Option<Vec<GatedSignal>>> {
    let need = |what: &'static str| Error::InvalidSpec(format!("objective {objective:?} requires {what}"));
    match objective {
        Objective::PlainFt => Ok(None),
        Objective::Cpt => {
            let oracle = supervision.oracle.ok_or_else(|| need("an oracle"))?;
            let ledger = supervision.ledger.ok_or_else(|| need("a ledger"))?;
            dataset
                .iter()
                .map(|ex| {
                    oracle.query_response(ex, ledger).map(|r| GatedSignal {
                        logits: r.logits,
                        source: SignalSource::Oracle,
                        uncertainty: f64::NAN,
                        observed: r.observed,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
        Objective::GpGated => {
            let oracle = supervision.oracle.ok_or_else(|| need("an oracle"))?;
            let ledger = supervision.ledger.ok_or_else(|| need("a ledger"))?;
            let gp = supervision.gp.ok_or_else(|| need("a fitted GP"))?;
            dataset
                .iter()
                .map(|ex| gated_signal(ex, gp, &supervision.gate, oracle, ledger))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
    }
}

/// Mini-batch gradient descent on `θ₊`, initialized from `minus`.
///
/// Supervision signals are resolved once per example, in dataset order,
/// before the first step, and reused for every epoch. Batch order comes from
/// a generator seeded with `config.seed`.
pub fn train_proxy(
    config: &TrainConfig,
    dataset: &Dataset,
    minus: &ProxyParams,
    supervision: Supervision<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.require_nonempty()?;
    if minus.input_dim != dataset.dim() || minus.num_classes != dataset.num_classes() {
        return Err(Error::dims(minus.input_dim, dataset.dim()));
    }

    let signals = signals_for(config.objective, dataset, &supervision)?;
    let fallbacks = signals
        .as_ref()
        .filter(|_| config.objective == Objective::GpGated)
        .map_or(0, |s| s.iter().filter(|g| g.source == SignalSource::Oracle).count());
    let shifts: Option<Vec<Vec<f64>>> = signals
        .as_ref()
        .map(|signals| {
            dataset
                .iter()
                .zip(signals)
                .map(|(ex, s)| {
                    let mask = s.observed.as_deref().filter(|_| config.mask_unobserved);
                    supervision_shift(minus, &s.logits, config.alpha.alpha_train, &ex.embedding, mask)
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let mut plus = minus.to_trainable();
    let n_params = plus.weights().len();
    let mut velocity = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let examples = dataset.examples();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; n_params];
            for &i in batch {
                let ex = &examples[i];
                let shift = shifts.as_ref().map(|s| s[i].as_slice());
                let eval = shifted_loss(&plus, &ex.embedding, shift, ex.label)?;
                if !eval.loss.is_finite() {
                    return Err(Error::TrainingDiverged(format!("loss {} at epoch {epoch}", eval.loss)));
                }
                grad.iter_mut().zip(&eval.grad).for_each(|(g, e)| *g += e);
            }
            let scale = config.learning_rate / batch.len() as f64;
            for ((w, v), g) in plus.weights_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v + g * scale;
                *w -= *v;
            }
        }
        if plus.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite weights after epoch {epoch}"
            )));
        }

        let mut total = 0.0;
        let mut correct = 0usize;
        for (i, ex) in examples.iter().enumerate() {
            let shift = shifts.as_ref().map(|s| s[i].as_slice());
            let eval = shifted_loss(&plus, &ex.embedding, shift, ex.label)?;
            total += eval.loss;
            correct += usize::from(eval.correct);
        }
        let loss = total / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("loss {loss} at epoch {epoch}")));
        }
        metrics.push(EpochMetrics {
            epoch,
            loss,
            train_acc: correct as f64 / dataset.len() as f64,
            ledger_unique: supervision.ledger.map_or(0, ApiLedger::unique_count),
        });
    }

    Ok(TrainOutcome {
        params: plus,
        metrics,
        ledger: supervision.ledger.map(ApiLedger::snapshot),
        fallbacks,
    })
}

/// On-disk form of trained proxy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: ProxyParams,
    pub seed: u64,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(params: ProxyParams, config: &TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            params,
            seed: config.seed,
            config_hash: config.hash(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::UnsupportedFormat(ck.format));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn blobs(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -2.0 } else { 2.0 };
                let jitter = ((i * 7919) % 97) as f64 / 97.0 - 0.5;
                Example::new(format!("e{i}"), vec![c + 0.3 * jitter, -c + 0.2 * jitter], label)
            })
            .collect();
        Dataset::new(examples, 2, 2).unwrap()
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blobs(200);
        let minus = ProxyParams::zeros(Architecture::LinearSoftmax, 2, 2);
        let out = train_proxy(&TrainConfig::default(), &data, &minus, Supervision::default()).unwrap();
        assert_eq!(out.metrics.len(), 2);
        assert!(out.metrics[1].train_acc >= 0.99);
    }

    #[test]
    fn same_seed_same_params() {
        let data = blobs(64);
        let minus = ProxyParams::random(Architecture::Mlp { hidden: 4 }, 2, 2, 3);
        let cfg = TrainConfig {
            seed: 42,
            momentum: 0.5,
            ..TrainConfig::default()
        };
        let a = train_proxy(&cfg, &data, &minus, Supervision::default()).unwrap();
        let b = train_proxy(&cfg, &data, &minus, Supervision::default()).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
    }

    #[test]
    fn missing_supervision_is_config_error() {
        let data = blobs(4);
        let minus = ProxyParams::zeros(Architecture::LinearSoftmax, 2, 2);
        let cfg = TrainConfig {
            objective: Objective::Cpt,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_proxy(&cfg, &data, &minus, Supervision::default()),
            Err(Error::InvalidSpec(_))
        ));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_proxy(&bad, &data, &minus, Supervision::default()).is_err());
    }

    #[test]
    fn diverging_run_is_reported() {
        let data = blobs(16);
        let minus = ProxyParams::zeros(Architecture::LinearSoftmax, 2, 2);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_proxy(&cfg, &data, &minus, Supervision::default()),
            Err(Error::TrainingDiverged(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let params = ProxyParams::random(Architecture::Mlp { hidden: 3 }, 2, 4, 8);
        let ck = Checkpoint::new(params, &TrainConfig::default());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
