//! The white-box proxy pair, its training objectives and the gated
//! supervision signal.
//!
//! All objectives share one shape: cross-entropy of
//! `s₊(x) + α·(signal(x) − s₋(x))`, where the signal is absent (plain
//! fine-tuning), the oracle's logits (consistent proxy tuning) or the gated
//! GP/oracle mixture. The shift term does not depend on `θ₊`, so every
//! gradient is the usual softmax cross-entropy gradient at the shifted logits.

mod gradcheck;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{cpt_loss, gated_loss, plain_ft_loss, softmax_cross_entropy, supervision_shift, LossEval};
pub use model::{Architecture, ProxyParams, ProxyRole};
pub use train::{
    train_proxy, Checkpoint, EpochMetrics, Objective, Supervision, TrainConfig, TrainOutcome, CHECKPOINT_FORMAT,
};

use crate::data::{ApiLedger, Example, LogitVector};
use crate::error::Result;
use crate::gp::{GateConfig, GpPosterior};
use crate::oracle::CachedOracle;

/// Weights on the logit-difference term at training and test time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub alpha_train: f64,
    pub alpha_test: f64,
}

impl EnsembleWeights {
    pub const RECOMMENDED_RANGE: (f64, f64) = (0.6, 1.4);

    pub fn tied(alpha: f64) -> Self {
        Self {
            alpha_train: alpha,
            alpha_test: alpha,
        }
    }

    pub fn in_recommended_range(&self) -> bool {
        let (lo, hi) = Self::RECOMMENDED_RANGE;
        [self.alpha_train, self.alpha_test]
            .iter()
            .all(|a| (lo..=hi).contains(a))
    }
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        Self::tied(0.8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSource {
    Gp,
    Oracle,
}

/// Supervision logits for one example and where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedSignal {
    pub logits: LogitVector,
    pub source: SignalSource,
    /// Scalar GP uncertainty τ² at the example.
    pub uncertainty: f64,
    /// Dimensions the oracle actually returned, for top-k backends.
    pub observed: Option<Vec<bool>>,
}

/// GP mean when `τ² ≤ θ`, otherwise a (ledgered) oracle query.
pub fn gated_signal(
    example: &Example,
    gp: &GpPosterior,
    gate: &GateConfig,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
) -> Result<GatedSignal> {
    let uncertainty = gp.predict_uncertainty(&example.embedding)?.scalar;
    if uncertainty <= gate.threshold {
        Ok(GatedSignal {
            logits: gp.predict_mean(&example.embedding)?,
            source: SignalSource::Gp,
            uncertainty,
            observed: None,
        })
    } else {
        let response = oracle.query_response(example, ledger)?;
        Ok(GatedSignal {
            logits: response.logits,
            source: SignalSource::Oracle,
            uncertainty,
            observed: response.observed,
        })
    }
}
