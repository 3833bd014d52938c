//! GP-surrogate guided proxy tuning for black-box models under a query budget.
//!
//! A small white-box proxy is fine-tuned against the combined logits
//! `s₊ + α·(signal − s₋)`, where the signal comes from an exact Gaussian
//! Process fitted on a diversity-filtered handful of oracle answers, and falls
//! back to the oracle only where the GP is too uncertain. Every oracle call
//! goes through a cache and an [`ApiLedger`](data::ApiLedger).

pub mod data;
pub mod ensemble;
pub mod error;
pub mod gp;
pub mod harness;
pub mod oracle;
pub mod proxy;
pub mod selection;

pub use data::{ApiLedger, Dataset, Embedding, Example, LogitMapPair, LogitMapSet, LogitVector};
pub use error::{Error, Result};
pub use gp::{fit_gp, GateConfig, GpPosterior, KernelParams, NoiseParams};
pub use harness::{run_experiment, ExperimentConfig, Method, MethodReport};
pub use oracle::{CachedOracle, Oracle};
pub use proxy::{Architecture, EnsembleWeights, ProxyParams, TrainConfig};
pub use selection::{CandidateSet, SelectionThresholds};
