use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_json;
use crate::data::{load_dataset, read_jsonl, save_dataset, write_jsonl, Dataset, DatasetFormat, LogitVector};
use crate::error::{Error, Result};
use crate::gp::{GateConfig, GpPosterior};
use crate::oracle::CacheRow;

const POSTERIOR_FILE: &str = "gp_filter_posterior.json";
const GATE_FILE: &str = "gp_filter_gate.json";
const TIMELINE_FILE: &str = "gp_filter_ledger_timeline.jsonl";
const TEST_ORACLE_FILE: &str = "oracle_test_logits.jsonl";
const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";

/// What a completed GP run leaves behind for the diagnostic exports.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub train: Dataset,
    pub test: Dataset,
    pub posterior: GpPosterior,
    pub gate: GateConfig,
    /// Ids in the order they first reached the training oracle.
    pub ledger_timeline: Vec<String>,
    /// Oracle answers for the test split, gathered during evaluation.
    pub test_oracle_logits: Vec<CacheRow>,
}

#[derive(Serialize, Deserialize)]
struct TimelineRow {
    step: usize,
    id: String,
}

impl RunArtifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_dataset(&self.train, &dir.join(TRAIN_FILE), DatasetFormat::Jsonl)?;
        save_dataset(&self.test, &dir.join(TEST_FILE), DatasetFormat::Jsonl)?;
        self.posterior.save_json(&dir.join(POSTERIOR_FILE))?;
        write_json(&dir.join(GATE_FILE), &self.gate)?;
        let rows: Vec<TimelineRow> = self
            .ledger_timeline
            .iter()
            .enumerate()
            .map(|(i, id)| TimelineRow {
                step: i + 1,
                id: id.clone(),
            })
            .collect();
        write_jsonl(&dir.join(TIMELINE_FILE), rows.iter())?;
        write_jsonl(&dir.join(TEST_ORACLE_FILE), self.test_oracle_logits.iter())
    }

    /// Reads back what [`save`](Self::save) wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingArtifacts(format!("{} is missing", p.display())))
            }
        };
        let gate: GateConfig = serde_json::from_str(&fs::read_to_string(need(GATE_FILE)?)?)?;
        Ok(Self {
            train: load_dataset(&need(TRAIN_FILE)?, DatasetFormat::Jsonl)?,
            test: load_dataset(&need(TEST_FILE)?, DatasetFormat::Jsonl)?,
            posterior: GpPosterior::load_json(&need(POSTERIOR_FILE)?)?,
            gate,
            ledger_timeline: read_jsonl::<TimelineRow>(&need(TIMELINE_FILE)?)?
                .into_iter()
                .map(|r| r.id)
                .collect(),
            test_oracle_logits: read_jsonl(&need(TEST_ORACLE_FILE)?)?,
        })
    }
}

/// Counts reported by [`export_diagnostics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub uncertainty_rows: usize,
    pub above_threshold: usize,
    pub logit_pairs: usize,
    pub logit_mae: f64,
}

/// Mean absolute difference between GP means and oracle logits over `split`.
pub fn gp_logit_mae(
    posterior: &GpPosterior,
    split: &Dataset,
    oracle: impl Fn(&str) -> Option<LogitVector>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in split {
        let truth = oracle(&ex.id).ok_or_else(|| Error::MissingArtifacts(format!("oracle logits for {:?}", ex.id)))?;
        let mean = posterior.predict_mean(&ex.embedding)?;
        if truth.len() != mean.len() {
            return Err(Error::dims(mean.len(), truth.len()));
        }
        total += mean.iter().zip(truth.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += mean.len();
    }
    if count == 0 {
        return Err(Error::EmptySplit);
    }
    Ok(total / count as f64)
}

/// Writes `uncertainty_curve.csv`, `gp_vs_oracle_logits.csv` and
/// `ledger_timeline.csv` into `out_dir`.
pub fn export_diagnostics(artifacts: &RunArtifacts, out_dir: &Path) -> Result<DiagnosticsSummary> {
    if artifacts.train.is_empty() {
        return Err(Error::MissingArtifacts("training split is empty".into()));
    }
    if artifacts.test_oracle_logits.is_empty() {
        return Err(Error::MissingArtifacts("no oracle logits for the test split".into()));
    }
    fs::create_dir_all(out_dir)?;
    let theta = artifacts.gate.threshold;

    let mut curve = artifacts
        .train
        .iter()
        .map(|ex| {
            artifacts
                .posterior
                .predict_uncertainty(&ex.embedding)
                .map(|u| (ex.id.as_str(), u.scalar))
        })
        .collect::<Result<Vec<_>>>()?;
    curve.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut above = 0usize;
    let mut w = csv::Writer::from_path(out_dir.join("uncertainty_curve.csv"))?;
    w.write_record(["rank", "id", "uncertainty", "threshold", "above_threshold"])?;
    for (rank, (id, u)) in curve.iter().enumerate() {
        let is_above = *u > theta;
        above += usize::from(is_above);
        w.write_record([
            (rank + 1).to_string(),
            id.to_string(),
            u.to_string(),
            theta.to_string(),
            u8::from(is_above).to_string(),
        ])?;
    }
    w.flush()?;

    let lookup: HashMap<&str, &LogitVector> = artifacts
        .test_oracle_logits
        .iter()
        .map(|r| (r.id.as_str(), &r.logits))
        .collect();
    let mut w = csv::Writer::from_path(out_dir.join("gp_vs_oracle_logits.csv"))?;
    w.write_record(["id", "dim", "gp_logit", "oracle_logit"])?;
    let mut pairs = 0usize;
    for ex in &artifacts.test {
        let truth = lookup
            .get(ex.id.as_str())
            .ok_or_else(|| Error::MissingArtifacts(format!("oracle logits for {:?}", ex.id)))?;
        let mean = artifacts.posterior.predict_mean(&ex.embedding)?;
        for (v, (g, o)) in mean.iter().zip(truth.iter()).enumerate() {
            w.write_record([ex.id.clone(), v.to_string(), g.to_string(), o.to_string()])?;
            pairs += 1;
        }
    }
    w.flush()?;
    let logit_mae = gp_logit_mae(&artifacts.posterior, &artifacts.test, |id| {
        lookup.get(id).map(|l| (*l).clone())
    })?;

    let mut w = csv::Writer::from_path(out_dir.join("ledger_timeline.csv"))?;
    w.write_record(["step", "id"])?;
    for (i, id) in artifacts.ledger_timeline.iter().enumerate() {
        w.write_record([(i + 1).to_string(), id.clone()])?;
    }
    w.flush()?;

    Ok(DiagnosticsSummary {
        uncertainty_rows: curve.len(),
        above_threshold: above,
        logit_pairs: pairs,
        logit_mae,
    })
}
