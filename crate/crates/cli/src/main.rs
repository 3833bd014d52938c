use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use logitgate::data::{save_dataset, DatasetFormat};
use logitgate::ensemble::{evaluate, write_predictions_csv, EnsemblePredictor, Predictor, ProxyPredictor};
use logitgate::harness::{
    budget_sweep, build_gp_filter, build_gp_random, export_diagnostics, prepare, run_experiment, sweep_alpha,
    ExperimentConfig, GpStage, Prepared, RunArtifacts,
};
use logitgate::proxy::{train_proxy, Checkpoint, Objective, Supervision, TrainConfig};
use logitgate::selection::{calibrate_thresholds, filter_select, SelectionThresholds};
use logitgate::{ApiLedger, CachedOracle, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "logitgate",
    version,
    about = "GP-gated proxy tuning under an oracle query budget"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (.toml or .json). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Hard cap on unique training queries for the GP methods.
    #[arg(long, global = true)]
    budget_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/test splits and the frozen proxy.
    GenData,
    /// Calibrate the diversity-filter thresholds on the training split.
    CalibrateThresholds,
    /// Run the diversity filter and write the selected candidates.
    Select {
        /// Thresholds file from `calibrate-thresholds`; otherwise the config
        /// thresholds or a fresh calibration are used.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Query the oracle on the selected set, fit the GP and calibrate the gate.
    FitGp {
        /// Use a uniform sample instead of the diversity filter.
        #[arg(long)]
        random: bool,
    },
    /// Train the tunable proxy with one objective.
    Train {
        #[arg(long, value_enum, default_value_t = TrainMethod::GpFilter)]
        method: TrainMethod,
    },
    /// Evaluate a saved proxy checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        proxy: PathBuf,
        /// Score the proxy alone instead of the oracle ensemble.
        #[arg(long)]
        standalone: bool,
        /// Test-time α; defaults to the config value.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run all six methods and write the comparison.
    RunAll,
    /// Grid over (α_train, α_test) for GP-filter.
    SweepAlpha {
        /// Comma-separated α values; the grid is their Cartesian square.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.4, 0.8, 1.2, 1.6])]
        alphas: Vec<f64>,
    },
    /// Export uncertainty, GP-vs-oracle and ledger diagnostics.
    ExportDiag {
        /// Directory of a previous `run-all`; the run is redone when omitted.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Also sweep GP-filter over these `D′` sizes.
        #[arg(long, value_delimiter = ',')]
        budget_sizes: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMethod {
    PlainFt,
    Cpt,
    GpRandom,
    GpFilter,
}

impl TrainMethod {
    fn name(self) -> &'static str {
        match self {
            TrainMethod::PlainFt => "plain_ft",
            TrainMethod::Cpt => "cpt",
            TrainMethod::GpRandom => "gp_random",
            TrainMethod::GpFilter => "gp_filter",
        }
    }
}

enum Failure {
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_) | Error::Parse { .. } | Error::UnsupportedFormat(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(global: &Global) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut config = match &global.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(cap) = global.budget_cap {
        config.budget_cap = Some(cap);
    }
    if let Some(dir) = &global.out_dir {
        config.out_dir = Some(dir.clone());
    }
    let out = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    config.out_dir = Some(out.clone());
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    fs::create_dir_all(&out).map_err(|e| Failure::Run(e.into()))?;
    Ok((config, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn thresholds_for(config: &ExperimentConfig, prepared: &Prepared) -> CliResult<SelectionThresholds> {
    let sel = &config.selection;
    Ok(match sel.thresholds {
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
    })
}

fn save_stage(out: &Path, name: &str, stage: &GpStage) -> CliResult {
    if let Some(t) = &stage.thresholds {
        write_json(&out.join(format!("{name}_thresholds.json")), t)?;
    }
    stage
        .candidates
        .write_jsonl(&out.join(format!("{name}_candidates.jsonl")))?;
    stage.pairs.write_jsonl(&out.join(format!("{name}_logitmap.jsonl")))?;
    stage.posterior.save_json(&out.join(format!("{name}_posterior.json")))?;
    write_json(&out.join(format!("{name}_gate.json")), &stage.gate)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    method: &'a str,
    train_queries: usize,
    train_fraction: f64,
    fallbacks: usize,
    final_loss: Option<f64>,
}

fn train(config: &ExperimentConfig, out: &Path, method: TrainMethod) -> CliResult {
    let prepared = prepare(config)?;
    let n = prepared.train.len();
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = match (config.budget_cap, method) {
        (Some(cap), TrainMethod::GpFilter | TrainMethod::GpRandom) => ApiLedger::new(n).with_cap(cap),
        _ => ApiLedger::new(n),
    };
    let stage = match method {
        TrainMethod::GpFilter => Some(build_gp_filter(config, &prepared, &oracle, &ledger)?),
        TrainMethod::GpRandom => Some(build_gp_random(config, &prepared, &oracle, &ledger)?),
        _ => None,
    };
    let objective = match method {
        TrainMethod::PlainFt => Objective::PlainFt,
        TrainMethod::Cpt => Objective::Cpt,
        TrainMethod::GpRandom | TrainMethod::GpFilter => Objective::GpGated,
    };
    let cfg = TrainConfig {
        objective,
        ..config.train_config()
    };
    let supervision = match (&stage, method) {
        (_, TrainMethod::PlainFt) => Supervision::default(),
        (Some(stage), _) => Supervision {
            oracle: Some(&oracle),
            ledger: Some(&ledger),
            gp: Some(&stage.posterior),
            gate: stage.gate,
        },
        (None, _) => Supervision {
            oracle: Some(&oracle),
            ledger: Some(&ledger),
            ..Supervision::default()
        },
    };
    let trained = train_proxy(&cfg, &prepared.train, &prepared.minus, supervision)?;
    let name = method.name();
    Checkpoint::new(trained.params.clone(), &cfg).save(&out.join(format!("proxy_{name}.json")))?;
    trained.write_metrics_csv(&out.join(format!("metrics_{name}.csv")))?;
    ledger.write_json(&out.join(format!("ledger_train_{name}.json")))?;
    if let Some(stage) = &stage {
        save_stage(out, name, stage)?;
    }
    let summary = TrainSummary {
        method: name,
        train_queries: ledger.unique_count(),
        train_fraction: ledger.usage_fraction()?,
        fallbacks: trained.fallbacks,
        final_loss: trained.metrics.last().map(|m| m.loss),
    };
    write_json(&out.join(format!("train_{name}.json")), &summary)?;
    println!(
        "{name}: {} training queries ({:.4} of |D|), {} fallbacks",
        summary.train_queries, summary.train_fraction, summary.fallbacks
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationSummary {
    accuracy: f64,
    inference_queries: usize,
    inference_fraction: f64,
}

fn evaluate_checkpoint(
    config: &ExperimentConfig,
    out: &Path,
    proxy: &Path,
    standalone: bool,
    alpha: Option<f64>,
) -> CliResult {
    let prepared = prepare(config)?;
    let plus = Checkpoint::load(proxy)?.params;
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = ApiLedger::new(prepared.test.len());
    let ensemble;
    let single;
    let predictor: &dyn Predictor = if standalone {
        single = ProxyPredictor(&plus);
        &single
    } else {
        ensemble = EnsemblePredictor {
            plus: &plus,
            minus: &prepared.minus,
            oracle: &oracle,
            ledger: &ledger,
            alpha: alpha.unwrap_or(config.alpha.alpha_test),
        };
        &ensemble
    };
    let report = evaluate(predictor, &prepared.test, Some(&ledger))?;
    write_predictions_csv(&out.join("evaluation_predictions.csv"), [("evaluated", &report)])?;
    let summary = EvaluationSummary {
        accuracy: report.accuracy,
        inference_queries: ledger.unique_count(),
        inference_fraction: ledger.usage_fraction()?,
    };
    write_json(&out.join("evaluation.json"), &summary)?;
    println!(
        "accuracy {:.4}, inference fraction {:.4}",
        summary.accuracy, summary.inference_fraction
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let (config, out) = load_config(&cli.global)?;
    match cli.command {
        Command::GenData => {
            let prepared = prepare(&config)?;
            save_dataset(&prepared.train, &out.join("train.jsonl"), DatasetFormat::Jsonl)?;
            save_dataset(&prepared.test, &out.join("test.jsonl"), DatasetFormat::Jsonl)?;
            Checkpoint::new(prepared.minus.clone(), &config.train_config()).save(&out.join("proxy_minus.json"))?;
            write_json(&out.join("config.json"), &config)?;
            println!(
                "{} train / {} test examples in {}",
                prepared.train.len(),
                prepared.test.len(),
                out.display()
            );
        }
        Command::CalibrateThresholds => {
            let prepared = prepare(&config)?;
            let t = calibrate_thresholds(
                &prepared.train,
                &prepared.minus,
                config.selection.calibration_percentile,
                config.selection.metric,
                config.selection.calibration_mode,
            )?;
            write_json(&out.join("thresholds.json"), &t)?;
            println!("tau_in {} tau_out {}", t.tau_in, t.tau_out);
        }
        Command::Select { thresholds } => {
            let prepared = prepare(&config)?;
            let t = match thresholds {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(Error::from)?;
                    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                None => thresholds_for(&config, &prepared)?,
            };
            let selected = filter_select(&prepared.train, &prepared.minus, &t)?;
            selected.write_jsonl(&out.join("candidates.jsonl"))?;
            println!("selected {} of {} examples", selected.len(), prepared.train.len());
        }
        Command::FitGp { random } => {
            let prepared = prepare(&config)?;
            let oracle = CachedOracle::new(prepared.oracle.clone());
            let mut ledger = ApiLedger::new(prepared.train.len());
            if let Some(cap) = config.budget_cap {
                ledger = ledger.with_cap(cap);
            }
            let (name, stage) = if random {
                ("gp_random", build_gp_random(&config, &prepared, &oracle, &ledger)?)
            } else {
                ("gp_filter", build_gp_filter(&config, &prepared, &oracle, &ledger)?)
            };
            save_stage(&out, name, &stage)?;
            ledger.write_json(&out.join(format!("ledger_fit_{name}.json")))?;
            println!(
                "{name}: {} pairs, gate θ = {}, {} oracle queries",
                stage.pairs.len(),
                stage.gate.threshold,
                ledger.unique_count()
            );
        }
        Command::Train { method } => train(&config, &out, method)?,
        Command::Evaluate {
            proxy,
            standalone,
            alpha,
        } => evaluate_checkpoint(&config, &out, &proxy, standalone, alpha)?,
        Command::RunAll => {
            let run = run_experiment(&config)?;
            for r in &run.reports {
                match (r.accuracy, &r.error) {
                    (Some(acc), _) => println!(
                        "{:<11} accuracy {acc:.4}  train {:.4}  inference {:.4}",
                        r.method.name(),
                        r.train_fraction,
                        r.inference_fraction
                    ),
                    (None, err) => println!("{:<11} failed: {}", r.method.name(), err.as_deref().unwrap_or("")),
                }
            }
            if let Some(err) = run
                .reports
                .iter()
                .filter_map(|r| r.error.as_deref())
                .find(|e| is_oracle_message(e))
            {
                return Err(Failure::Run(Error::OracleUnavailable(err.to_string())));
            }
        }
        Command::SweepAlpha { alphas } => {
            let grid: Vec<(f64, f64)> = alphas
                .iter()
                .flat_map(|a| alphas.iter().map(move |b| (*a, *b)))
                .collect();
            let sweep = sweep_alpha(&config, &grid)?;
            let (diag, off) = sweep.diagonal_means();
            println!(
                "{} cells; diagonal mean {diag:.4}, off-diagonal mean {off:.4}",
                sweep.cells.len()
            );
        }
        Command::ExportDiag { from, budget_sizes } => {
            let artifacts = match from {
                Some(dir) => RunArtifacts::load(&dir)?,
                None => run_experiment(&config)?
                    .artifacts
                    .ok_or_else(|| Error::MissingArtifacts("gp_filter did not complete".into()))?,
            };
            let summary = export_diagnostics(&artifacts, &out.join("diagnostics"))?;
            println!(
                "{} uncertainty rows ({} above θ), GP-vs-oracle MAE {:.4}",
                summary.uncertainty_rows, summary.above_threshold, summary.logit_mae
            );
            if !budget_sizes.is_empty() {
                for p in budget_sweep(&config, &budget_sizes)? {
                    println!(
                        "|D′| {:>5}: MAE {:.4}, accuracy {:.4}",
                        p.pairs, p.logit_mae, p.accuracy
                    );
                }
            }
        }
    }
    Ok(())
}

/// Failed rows only keep the error text, so oracle failures are recognized by
/// the messages of the two oracle error variants.
fn is_oracle_message(msg: &str) -> bool {
    let probes = [
        Error::OracleUnavailable(String::new()),
        Error::BudgetExceeded(String::new()),
    ];
    probes.iter().any(|p| msg.starts_with(p.to_string().as_str()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) if e.is_oracle_failure() => {
            eprintln!("oracle failure: {e}");
            ExitCode::from(EXIT_ORACLE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
