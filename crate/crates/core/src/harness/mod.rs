//! Reproducible experiment orchestration: data synthesis, the six-method
//! comparison, α sweeps, budget sweeps and diagnostic exports.

mod diagnostics;
mod experiment;
mod replay;
mod sweep;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use diagnostics::{export_diagnostics, gp_logit_mae, DiagnosticsSummary, RunArtifacts};
pub use experiment::{
    build_gp_filter, build_gp_random, prepare, run_experiment, ExperimentRun, GpStage, Method, MethodReport, Prepared,
};
pub use replay::ReplayOracle;
pub use sweep::{budget_sweep, sweep_alpha, AlphaCell, AlphaSweep, BudgetPoint};
pub use synth::{generate_synthetic, SyntheticSpec};

use crate::data::DatasetFormat;
use crate::error::{Error, Result};
use crate::gp::{KernelParams, MeanFunction, NoiseParams, UncertaintyAggregation};
use crate::oracle::TeacherSpec;
use crate::proxy::{Architecture, EnsembleWeights, TrainConfig};
use crate::selection::{CalibrationMode, DistanceMetric, DEFAULT_MAX_PAIRS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files {
        train: PathBuf,
        test: PathBuf,
        /// Optional small split used to pre-train the frozen proxy.
        #[serde(default)]
        pretrain: Option<PathBuf>,
        #[serde(default)]
        format: Option<DatasetFormat>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleSource {
    /// An MLP trained on the (noisy) training split inside the harness.
    Synthetic(TeacherSpec),
    /// A remote server speaking the `/v1/logits` protocol.
    Http { url: String, top_k: usize },
    /// Answers replayed from a cache file; unknown ids fail.
    Replay { path: PathBuf },
}

impl Default for OracleSource {
    fn default() -> Self {
        Self::Synthetic(TeacherSpec {
            label_noise: 0.1,
            ..TeacherSpec::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyInit {
    Random,
    /// Plain fine-tuning on the pre-training split.
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxySpec {
    pub architecture: Architecture,
    pub init: ProxyInit,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

impl Default for ProxySpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::LinearSoftmax,
            init: ProxyInit::Pretrained,
            pretrain_epochs: 2,
            pretrain_learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSpec {
    pub calibration_percentile: f64,
    pub metric: DistanceMetric,
    pub calibration_mode: CalibrationMode,
    /// Fixed thresholds; skips calibration when set.
    pub thresholds: Option<(f64, f64)>,
    pub max_pairs: usize,
    /// Share of the training split sampled by GP-random.
    pub random_fraction: f64,
    /// Whether GP-random also falls back to the oracle above the gate.
    pub gate_random: bool,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            calibration_percentile: 0.06,
            metric: DistanceMetric::Euclidean,
            calibration_mode: CalibrationMode::PermissiveRun,
            thresholds: None,
            max_pairs: DEFAULT_MAX_PAIRS,
            random_fraction: 0.05,
            gate_random: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpSpec {
    pub noise: NoiseParams,
    /// Fixed kernel; the data-driven defaults are used when absent.
    pub kernel: Option<KernelParams>,
    pub mean: MeanFunction,
    /// Multipliers tried around the default lengthscale and signal variance,
    /// picked by marginal likelihood. Both empty: no search.
    pub lengthscale_grid: Vec<f64>,
    pub variance_grid: Vec<f64>,
    pub aggregation: UncertaintyAggregation,
}

impl Default for GpSpec {
    fn default() -> Self {
        Self {
            noise: NoiseParams::default(),
            kernel: None,
            mean: MeanFunction::Zero,
            lengthscale_grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            variance_grid: vec![0.5, 1.0, 2.0, 4.0],
            aggregation: UncertaintyAggregation::Max,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub oracle: OracleSource,
    pub proxy: ProxySpec,
    pub selection: SelectionSpec,
    pub gp: GpSpec,
    /// Target share of training examples routed to the oracle by the gate.
    pub gate_percentile: f64,
    pub alpha: EnsembleWeights,
    pub train: TrainConfig,
    /// Hard cap on unique training queries for the GP methods.
    pub budget_cap: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataSource::default(),
            oracle: OracleSource::default(),
            proxy: ProxySpec::default(),
            selection: SelectionSpec::default(),
            gp: GpSpec::default(),
            gate_percentile: 0.01,
            alpha: EnsembleWeights::default(),
            train: TrainConfig::default(),
            budget_cap: None,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML or JSON, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(serde_json::from_str(&text)?),
            Some("toml") => Self::from_toml(&text),
            other => Err(Error::UnsupportedFormat(format!("config extension {other:?}"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: serde_json::Value = toml_to_json(text).map_err(|e| Error::parse("config", e))?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        frac("gate_percentile", self.gate_percentile)?;
        frac(
            "selection.calibration_percentile",
            self.selection.calibration_percentile,
        )?;
        if !(self.selection.random_fraction > 0.0 && self.selection.random_fraction <= 1.0) {
            return Err(Error::InvalidSpec(
                "selection.random_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.selection.max_pairs == 0 {
            return Err(Error::InvalidSpec("selection.max_pairs must be positive".into()));
        }
        if !self.alpha.in_recommended_range() {
            log::warn!(
                "α = ({}, {}) lies outside the recommended range {:?}",
                self.alpha.alpha_train,
                self.alpha.alpha_test,
                EnsembleWeights::RECOMMENDED_RANGE
            );
        }
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// The training config used for every proxy run, with α and seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

fn toml_to_json(text: &str) -> std::result::Result<serde_json::Value, String> {
    let value: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
    serde_json::to_value(value).map_err(|e| e.to_string())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json_and_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);

        let toml = r#"
            seed = 3
            gate_percentile = 0.02
            [alpha]
            alpha_train = 1.0
            alpha_test = 1.0
            [data]
            kind = "synthetic"
            train_size = 300
            test_size = 100
        "#;
        let parsed = ExperimentConfig::from_toml(toml).unwrap();
        assert_eq!(parsed.seed, 3);
        assert_eq!(parsed.gate_percentile, 0.02);
        assert_eq!(parsed.alpha, EnsembleWeights::tied(1.0));
        match parsed.data {
            DataSource::Synthetic(s) => assert_eq!((s.train_size, s.test_size), (300, 100)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_percentile_rejected() {
        let cfg = ExperimentConfig {
            gate_percentile: 1.5,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidSpec(_))));
    }
}
