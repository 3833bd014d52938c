use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::diagnostics::{export_diagnostics, RunArtifacts};
use super::replay::ReplayOracle;
use super::synth::generate_splits;
use super::{write_json, DataSource, ExperimentConfig, OracleSource, ProxyInit};
use crate::data::{load_dataset, save_dataset, ApiLedger, Dataset, DatasetFormat, LogitMapSet};
use crate::ensemble::{evaluate, write_predictions_csv, EnsemblePredictor, EvalReport, ProxyPredictor};
use crate::error::{Error, Result};
use crate::gp::{calibrate_gate_threshold, fit_gp, select_kernel, GateConfig, GpPosterior, KernelParams};
use crate::oracle::{make_synthetic_teacher, CachedOracle, HttpOracle, Oracle};
use crate::proxy::{train_proxy, Checkpoint, Objective, ProxyParams, Supervision, TrainConfig, TrainOutcome};
use crate::selection::{
    build_logitmap, calibrate_thresholds, filter_select, random_select, CandidateSet, SelectionThresholds,
};

/// Independent seed for one consumer of the master seed.
pub(crate) fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SALT_DATA: u64 = 1;
const SALT_TEACHER: u64 = 2;
const SALT_PROXY: u64 = 3;
const SALT_RANDOM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pretrain,
    FullFt,
    ProxyTune,
    Cpt,
    GpRandom,
    GpFilter,
}

impl Method {
    /// Canonical report order.
    pub const ALL: [Method; 6] = [
        Method::Pretrain,
        Method::FullFt,
        Method::ProxyTune,
        Method::Cpt,
        Method::GpRandom,
        Method::GpFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pretrain => "pretrain",
            Method::FullFt => "full_ft",
            Method::ProxyTune => "proxy_tune",
            Method::Cpt => "cpt",
            Method::GpRandom => "gp_random",
            Method::GpFilter => "gp_filter",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// `None` when the method failed; see `error`.
    pub accuracy: Option<f64>,
    pub train_fraction: f64,
    pub inference_fraction: f64,
    pub train_queries: usize,
    pub fallbacks: usize,
    /// Informational only; excluded from the metric CSVs.
    pub wall_clock_seconds: f64,
    pub error: Option<String>,
}

impl MethodReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    fn failed(method: Method, err: &Error, seconds: f64) -> Self {
        Self {
            method,
            accuracy: None,
            train_fraction: 0.0,
            inference_fraction: 0.0,
            train_queries: 0,
            fallbacks: 0,
            wall_clock_seconds: seconds,
            error: Some(err.to_string()),
        }
    }
}

/// Data, oracle and frozen proxy shared by every method of a run.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub oracle: Arc<dyn Oracle>,
    /// Teacher accuracy on the test split, when the oracle is synthetic.
    pub teacher_accuracy: Option<f64>,
    pub minus: ProxyParams,
}

fn load_split(path: &Path, format: Option<DatasetFormat>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => DatasetFormat::from_path(path)?,
    };
    load_dataset(path, format)
}

/// Loads or synthesizes the data, seals the oracle and prepares `θ⁻`.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (train, test, pretrain) = match &config.data {
        DataSource::Synthetic(spec) => {
            let s = generate_splits(spec, derive_seed(config.seed, SALT_DATA))?;
            (s.train, s.test, s.pretrain)
        }
        DataSource::Files {
            train,
            test,
            pretrain,
            format,
        } => (
            load_split(train, *format)?,
            load_split(test, *format)?,
            pretrain.as_deref().map(|p| load_split(p, *format)).transpose()?,
        ),
    };
    train.require_nonempty()?;
    if test.is_empty() {
        return Err(Error::EmptySplit);
    }
    if test.dim() != train.dim() || test.num_classes() != train.num_classes() {
        return Err(Error::dims(train.dim(), test.dim()));
    }

    let (oracle, teacher_accuracy): (Arc<dyn Oracle>, Option<f64>) = match &config.oracle {
        OracleSource::Synthetic(spec) => {
            let spec = super::TeacherSpec {
                seed: derive_seed(config.seed, SALT_TEACHER),
                ..spec.clone()
            };
            let teacher = make_synthetic_teacher(&train, &spec)?;
            let acc = teacher.accuracy_on(&test)?;
            (Arc::new(teacher), Some(acc))
        }
        OracleSource::Http { url, top_k } => (Arc::new(HttpOracle::new(url, train.num_classes(), *top_k)?), None),
        OracleSource::Replay { path } => (Arc::new(ReplayOracle::open(path)?), None),
    };
    if oracle.vocab_size() != train.num_classes() {
        return Err(Error::dims(train.num_classes(), oracle.vocab_size()));
    }

    let arch = config.proxy.architecture;
    let init = ProxyParams::random(
        arch,
        train.dim(),
        train.num_classes(),
        derive_seed(config.seed, SALT_PROXY),
    );
    let minus = match (config.proxy.init, pretrain) {
        (ProxyInit::Random, _) => init.seal(),
        (ProxyInit::Pretrained, Some(generic)) => {
            let cfg = TrainConfig {
                epochs: config.proxy.pretrain_epochs.max(1),
                learning_rate: config.proxy.pretrain_learning_rate,
                seed: derive_seed(config.seed, SALT_PROXY),
                objective: Objective::PlainFt,
                ..TrainConfig::default()
            };
            train_proxy(&cfg, &generic, &init, Supervision::default())?
                .params
                .seal()
        }
        (ProxyInit::Pretrained, None) => {
            return Err(Error::InvalidSpec(
                "a pretrained proxy needs a pre-training split".into(),
            ));
        }
    };

    Ok(Prepared {
        train,
        test,
        oracle,
        teacher_accuracy,
        minus,
    })
}

/// Everything the GP methods build before training the proxy.
#[derive(Debug, Clone)]
pub struct GpStage {
    pub thresholds: Option<SelectionThresholds>,
    pub candidates: CandidateSet,
    pub pairs: LogitMapSet,
    pub posterior: GpPosterior,
    pub gate: GateConfig,
}

fn fit_stage(
    config: &ExperimentConfig,
    prepared: &Prepared,
    candidates: CandidateSet,
    thresholds: Option<SelectionThresholds>,
    max_pairs: usize,
    calibrate_gate: bool,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
) -> Result<GpStage> {
    let pairs = build_logitmap(&candidates, &prepared.train, oracle, ledger, max_pairs)?;
    let spec = &config.gp;
    let kernel = match &spec.kernel {
        Some(k) => *k,
        None if !spec.lengthscale_grid.is_empty() || !spec.variance_grid.is_empty() => {
            let ls = if spec.lengthscale_grid.is_empty() {
                vec![1.0]
            } else {
                spec.lengthscale_grid.clone()
            };
            let var = if spec.variance_grid.is_empty() {
                vec![1.0]
            } else {
                spec.variance_grid.clone()
            };
            select_kernel(&pairs, &spec.noise, &ls, &var)?.0.with_mean(spec.mean)
        }
        None => KernelParams::from_data(&pairs).with_mean(spec.mean),
    };
    let posterior = fit_gp(&pairs, &kernel, &spec.noise)?.with_aggregation(spec.aggregation);
    let gate = if calibrate_gate {
        let inputs: Vec<&[f64]> = prepared.train.iter().map(|e| e.embedding.as_slice()).collect();
        calibrate_gate_threshold(&posterior, &inputs, config.gate_percentile)?
    } else {
        GateConfig::never()
    };
    Ok(GpStage {
        thresholds,
        candidates,
        pairs,
        posterior,
        gate,
    })
}

/// Room left for `D′` once the expected gate fallbacks are reserved.
fn pair_budget(config: &ExperimentConfig, n: usize, gated: bool) -> usize {
    let mut budget = config.selection.max_pairs;
    if let Some(cap) = config.budget_cap {
        let reserve = if gated {
            (config.gate_percentile * n as f64).ceil() as usize
        } else {
            0
        };
        budget = budget.min(cap.saturating_sub(reserve).max(1));
    }
    budget
}

/// Calibrate → diversity filter → oracle labelling of `D′` → GP fit → gate.
pub fn build_gp_filter(
    config: &ExperimentConfig,
    prepared: &Prepared,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
) -> Result<GpStage> {
    let sel = &config.selection;
    let thresholds = match sel.thresholds {
        Some((tau_in, tau_out)) => SelectionThresholds {
            tau_in,
            tau_out,
            metric: sel.metric,
        },
        None => calibrate_thresholds(
            &prepared.train,
            &prepared.minus,
            sel.calibration_percentile,
            sel.metric,
            sel.calibration_mode,
        )?,
    };
    let candidates = filter_select(&prepared.train, &prepared.minus, &thresholds)?;
    log::info!(
        "diversity filter kept {} of {} examples (τ_in = {:.4}, τ_out = {:.4})",
        candidates.len(),
        prepared.train.len(),
        thresholds.tau_in,
        thresholds.tau_out
    );
    let budget = pair_budget(config, prepared.train.len(), true);
    fit_stage(
        config,
        prepared,
        candidates,
        Some(thresholds),
        budget,
        true,
        oracle,
        ledger,
    )
}

/// Uniform sample of `random_fraction·|D|` examples → GP fit, with the gate
/// only when `selection.gate_random` is set.
pub fn build_gp_random(
    config: &ExperimentConfig,
    prepared: &Prepared,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
) -> Result<GpStage> {
    let n = prepared.train.len();
    let count = ((config.selection.random_fraction * n as f64).round() as usize).clamp(1, n);
    let candidates = random_select(&prepared.train, count, derive_seed(config.seed, SALT_RANDOM))?;
    let gated = config.selection.gate_random;
    let budget = pair_budget(config, n, gated);
    fit_stage(config, prepared, candidates, None, budget, gated, oracle, ledger)
}

fn training_ledger(config: &ExperimentConfig, n: usize, capped: bool) -> ApiLedger {
    let ledger = ApiLedger::new(n);
    match config.budget_cap {
        Some(cap) if capped => ledger.with_cap(cap),
        _ => ledger,
    }
}

struct MethodOutcome {
    eval: EvalReport,
    train: Option<TrainOutcome>,
    train_ledger: Option<ApiLedger>,
    inference_ledger: Option<ApiLedger>,
    stage: Option<GpStage>,
    inference_oracle: Option<CachedOracle>,
}

impl MethodOutcome {
    fn report(&self, method: Method, seconds: f64) -> Result<MethodReport> {
        let frac = |l: &Option<ApiLedger>| l.as_ref().map_or(Ok(0.0), |l| l.usage_fraction());
        Ok(MethodReport {
            method,
            accuracy: Some(self.eval.accuracy),
            train_fraction: frac(&self.train_ledger)?,
            inference_fraction: frac(&self.inference_ledger)?,
            train_queries: self.train_ledger.as_ref().map_or(0, ApiLedger::unique_count),
            fallbacks: self.train.as_ref().map_or(0, |t| t.fallbacks),
            wall_clock_seconds: seconds,
            error: None,
        })
    }
}

fn ensemble_eval(
    prepared: &Prepared,
    plus: &ProxyParams,
    alpha_test: f64,
) -> Result<(EvalReport, ApiLedger, CachedOracle)> {
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = ApiLedger::new(prepared.test.len());
    let predictor = EnsemblePredictor {
        plus,
        minus: &prepared.minus,
        oracle: &oracle,
        ledger: &ledger,
        alpha: alpha_test,
    };
    let eval = evaluate(&predictor, &prepared.test, Some(&ledger))?;
    Ok((eval, ledger, oracle))
}

fn run_gp_method(
    config: &ExperimentConfig,
    prepared: &Prepared,
    build: fn(&ExperimentConfig, &Prepared, &CachedOracle, &ApiLedger) -> Result<GpStage>,
) -> Result<MethodOutcome> {
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = training_ledger(config, prepared.train.len(), true);
    let stage = build(config, prepared, &oracle, &ledger)?;
    let cfg = TrainConfig {
        objective: Objective::GpGated,
        ..config.train_config()
    };
    let supervision = Supervision {
        oracle: Some(&oracle),
        ledger: Some(&ledger),
        gp: Some(&stage.posterior),
        gate: stage.gate,
    };
    let trained = train_proxy(&cfg, &prepared.train, &prepared.minus, supervision)?;
    let (eval, inf_ledger, inf_oracle) = ensemble_eval(prepared, &trained.params, config.alpha.alpha_test)?;
    Ok(MethodOutcome {
        eval,
        train: Some(trained),
        train_ledger: Some(ledger),
        inference_ledger: Some(inf_ledger),
        stage: Some(stage),
        inference_oracle: Some(inf_oracle),
    })
}

/// Result of [`run_experiment`].
pub struct ExperimentRun {
    /// Exactly one row per [`Method::ALL`] entry, in that order.
    pub reports: Vec<MethodReport>,
    pub teacher_accuracy: Option<f64>,
    /// GP-filter artifacts, present when that method succeeded.
    pub artifacts: Option<RunArtifacts>,
}

impl ExperimentRun {
    pub fn report(&self, method: Method) -> &MethodReport {
        &self.reports[Method::ALL.iter().position(|m| *m == method).unwrap_or(0)]
    }

    pub fn accuracy(&self, method: Method) -> Option<f64> {
        self.report(method).accuracy
    }
}

fn write_reports_csv(path: &Path, reports: &[MethodReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "status",
        "accuracy",
        "train_fraction",
        "inference_fraction",
        "train_queries",
        "fallbacks",
    ])?;
    for r in reports {
        w.write_record([
            r.method.name().to_string(),
            if r.succeeded() { "ok".into() } else { "failed".into() },
            r.accuracy.map_or_else(|| "NA".into(), |a| a.to_string()),
            r.train_fraction.to_string(),
            r.inference_fraction.to_string(),
            r.train_queries.to_string(),
            r.fallbacks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    teacher_accuracy: Option<f64>,
    reports: &'a [MethodReport],
}

/// Runs the six-method comparison. A method that fails is reported as failed
/// and the others still run. Artifacts go to `config.out_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let prepared = prepare(config)?;
    let out = config.out_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("config.json"), config)?;
        save_dataset(&prepared.train, &dir.join("train.jsonl"), DatasetFormat::Jsonl)?;
        save_dataset(&prepared.test, &dir.join("test.jsonl"), DatasetFormat::Jsonl)?;
        Checkpoint::new(prepared.minus.clone(), &config.train_config()).save(&dir.join("proxy_minus.json"))?;
    }
    let n = prepared.train.len();
    let train_cfg = config.train_config();

    let mut reports = Vec::with_capacity(Method::ALL.len());
    let mut evals: Vec<(Method, EvalReport)> = Vec::new();
    let mut artifacts = None;

    // Full-FT and Proxy-Tune share the plainly fine-tuned θ⁺.
    let mut plain: Option<std::result::Result<TrainOutcome, Error>> = None;

    for method in Method::ALL {
        let start = Instant::now();
        let outcome: Result<MethodOutcome> = match method {
            Method::Pretrain => {
                evaluate(&ProxyPredictor(&prepared.minus), &prepared.test, None).map(|eval| MethodOutcome {
                    eval,
                    train: None,
                    train_ledger: None,
                    inference_ledger: None,
                    stage: None,
                    inference_oracle: None,
                })
            }
            Method::FullFt | Method::ProxyTune => {
                let trained = plain.get_or_insert_with(|| {
                    let cfg = TrainConfig {
                        objective: Objective::PlainFt,
                        ..train_cfg.clone()
                    };
                    train_proxy(&cfg, &prepared.train, &prepared.minus, Supervision::default())
                });
                match trained {
                    Err(e) => Err(Error::TrainingDiverged(e.to_string())),
                    Ok(t) if method == Method::FullFt => evaluate(&ProxyPredictor(&t.params), &prepared.test, None)
                        .map(|eval| MethodOutcome {
                            eval,
                            train: Some(t.clone()),
                            train_ledger: None,
                            inference_ledger: None,
                            stage: None,
                            inference_oracle: None,
                        }),
                    Ok(t) => {
                        ensemble_eval(&prepared, &t.params, config.alpha.alpha_test).map(|(eval, l, o)| MethodOutcome {
                            eval,
                            train: None,
                            train_ledger: None,
                            inference_ledger: Some(l),
                            stage: None,
                            inference_oracle: Some(o),
                        })
                    }
                }
            }
            Method::Cpt => (|| {
                let oracle = CachedOracle::new(prepared.oracle.clone());
                let ledger = training_ledger(config, n, false);
                let cfg = TrainConfig {
                    objective: Objective::Cpt,
                    ..train_cfg.clone()
                };
                let supervision = Supervision {
                    oracle: Some(&oracle),
                    ledger: Some(&ledger),
                    ..Supervision::default()
                };
                let trained = train_proxy(&cfg, &prepared.train, &prepared.minus, supervision)?;
                let (eval, l, o) = ensemble_eval(&prepared, &trained.params, config.alpha.alpha_test)?;
                Ok(MethodOutcome {
                    eval,
                    train: Some(trained),
                    train_ledger: Some(ledger),
                    inference_ledger: Some(l),
                    stage: None,
                    inference_oracle: Some(o),
                })
            })(),
            Method::GpRandom => run_gp_method(config, &prepared, build_gp_random),
            Method::GpFilter => run_gp_method(config, &prepared, build_gp_filter),
        };
        let seconds = start.elapsed().as_secs_f64();
        match outcome.and_then(|o| o.report(method, seconds).map(|r| (o, r))) {
            Ok((o, report)) => {
                log::info!(
                    "{method}: accuracy {:.4}, train fraction {:.4}",
                    o.eval.accuracy,
                    report.train_fraction
                );
                if let Some(dir) = out {
                    write_method_artifacts(dir, method, &o, &train_cfg)?;
                }
                if method == Method::GpFilter {
                    if let (Some(stage), Some(ledger), Some(inf)) = (&o.stage, &o.train_ledger, &o.inference_oracle) {
                        artifacts = Some(RunArtifacts {
                            train: prepared.train.clone(),
                            test: prepared.test.clone(),
                            posterior: stage.posterior.clone(),
                            gate: stage.gate,
                            ledger_timeline: ledger.timeline(),
                            test_oracle_logits: inf.cache().rows(),
                        });
                    }
                }
                evals.push((method, o.eval));
                reports.push(report);
            }
            Err(e) => {
                log::error!("{method} failed: {e}");
                reports.push(MethodReport::failed(method, &e, seconds));
            }
        }
    }

    if let Some(dir) = out {
        write_reports_csv(&dir.join("reports.csv"), &reports)?;
        write_json(
            &dir.join("summary.json"),
            &Summary {
                teacher_accuracy: prepared.teacher_accuracy,
                reports: &reports,
            },
        )?;
        write_predictions_csv(&dir.join("predictions.csv"), evals.iter().map(|(m, e)| (m.name(), e)))?;
        if let Some(a) = &artifacts {
            a.save(dir)?;
            export_diagnostics(a, &dir.join("diagnostics"))?;
        }
    }

    Ok(ExperimentRun {
        reports,
        teacher_accuracy: prepared.teacher_accuracy,
        artifacts,
    })
}

fn write_method_artifacts(dir: &Path, method: Method, o: &MethodOutcome, cfg: &TrainConfig) -> Result<()> {
    let name = method.name();
    if let Some(t) = &o.train {
        t.write_metrics_csv(&dir.join(format!("metrics_{name}.csv")))?;
        Checkpoint::new(t.params.clone(), cfg).save(&dir.join(format!("proxy_{name}.json")))?;
    }
    if let Some(l) = &o.train_ledger {
        l.write_json(&dir.join(format!("ledger_train_{name}.json")))?;
    }
    if let Some(l) = &o.inference_ledger {
        l.write_json(&dir.join(format!("ledger_inference_{name}.json")))?;
    }
    if let Some(stage) = &o.stage {
        if let Some(t) = &stage.thresholds {
            write_json(&dir.join(format!("{name}_thresholds.json")), t)?;
        }
        stage
            .candidates
            .write_jsonl(&dir.join(format!("{name}_candidates.jsonl")))?;
        stage.pairs.write_jsonl(&dir.join(format!("{name}_logitmap.jsonl")))?;
        write_json(&dir.join(format!("{name}_gate.json")), &stage.gate)?;
        stage.posterior.save_json(&dir.join(format!("{name}_posterior.json")))?;
    }
    Ok(())
}
