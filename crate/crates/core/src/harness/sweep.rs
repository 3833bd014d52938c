use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::diagnostics::gp_logit_mae;
use super::experiment::{build_gp_filter, prepare, Prepared};
use super::ExperimentConfig;
use crate::data::ApiLedger;
use crate::ensemble::{evaluate, EnsemblePredictor};
use crate::error::{Error, Result};
use crate::oracle::CachedOracle;
use crate::proxy::{train_proxy, EnsembleWeights, Objective, ProxyParams, Supervision, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCell {
    pub alpha_train: f64,
    pub alpha_test: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    /// One cell per grid entry, in grid order.
    pub cells: Vec<AlphaCell>,
    pub pairs: usize,
    pub train_fraction: f64,
}

impl AlphaSweep {
    pub fn accuracy(&self, alpha_train: f64, alpha_test: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.alpha_train == alpha_train && c.alpha_test == alpha_test)
            .map(|c| c.accuracy)
    }

    /// Mean accuracy of cells with `α_train = α_test` and of the rest.
    pub fn diagonal_means(&self) -> (f64, f64) {
        let mean = |it: Vec<f64>| {
            if it.is_empty() {
                f64::NAN
            } else {
                it.iter().sum::<f64>() / it.len() as f64
            }
        };
        let (diag, off): (Vec<&AlphaCell>, Vec<&AlphaCell>) =
            self.cells.iter().partition(|c| c.alpha_train == c.alpha_test);
        (
            mean(diag.iter().map(|c| c.accuracy).collect()),
            mean(off.iter().map(|c| c.accuracy).collect()),
        )
    }

    /// Long-form `alpha_train,alpha_test,accuracy` table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Heatmap with one row per `α_train` and one column per `α_test`.
    pub fn write_heatmap_csv(&self, path: &Path) -> Result<()> {
        let mut tests: Vec<f64> = self.cells.iter().map(|c| c.alpha_test).collect();
        tests.sort_by(f64::total_cmp);
        tests.dedup();
        let mut rows: BTreeMap<u64, (f64, BTreeMap<u64, f64>)> = BTreeMap::new();
        for c in &self.cells {
            rows.entry(sort_key(c.alpha_train))
                .or_insert_with(|| (c.alpha_train, BTreeMap::new()))
                .1
                .insert(sort_key(c.alpha_test), c.accuracy);
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["alpha_train".to_string()];
        header.extend(tests.iter().map(|t| format!("alpha_test={t}")));
        w.write_record(&header)?;
        for (alpha_train, cols) in rows.values() {
            let mut record = vec![alpha_train.to_string()];
            record.extend(tests.iter().map(|t| {
                cols.get(&sort_key(*t))
                    .map_or_else(|| "NA".to_string(), |a| a.to_string())
            }));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Order-preserving integer key for finite floats.
fn sort_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// One GP-filter run per `(α_train, α_test)` cell. Selection, `D′`, the GP and
/// the gate are built once and shared; only the proxy is retrained, once per
/// distinct `α_train`.
pub fn sweep_alpha(config: &ExperimentConfig, grid: &[(f64, f64)]) -> Result<AlphaSweep> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("alpha grid"));
    }
    if grid.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFiniteInput("alpha grid"));
    }
    let prepared = prepare(config)?;
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = ApiLedger::new(prepared.train.len());
    let stage = build_gp_filter(config, &prepared, &oracle, &ledger)?;

    let inference = CachedOracle::new(prepared.oracle.clone());
    let inference_ledger = ApiLedger::new(prepared.test.len());
    let mut trained: BTreeMap<u64, ProxyParams> = BTreeMap::new();
    let mut cells = Vec::with_capacity(grid.len());
    for &(alpha_train, alpha_test) in grid {
        let key = sort_key(alpha_train);
        if let std::collections::btree_map::Entry::Vacant(e) = trained.entry(key) {
            let cfg = TrainConfig {
                objective: Objective::GpGated,
                alpha: EnsembleWeights {
                    alpha_train,
                    alpha_test,
                },
                ..config.train_config()
            };
            let supervision = Supervision {
                oracle: Some(&oracle),
                ledger: Some(&ledger),
                gp: Some(&stage.posterior),
                gate: stage.gate,
            };
            let plus = train_proxy(&cfg, &prepared.train, &prepared.minus, supervision)?.params;
            e.insert(plus);
        }
        let predictor = EnsemblePredictor {
            plus: &trained[&key],
            minus: &prepared.minus,
            oracle: &inference,
            ledger: &inference_ledger,
            alpha: alpha_test,
        };
        let accuracy = evaluate(&predictor, &prepared.test, Some(&inference_ledger))?.accuracy;
        cells.push(AlphaCell {
            alpha_train,
            alpha_test,
            accuracy,
        });
    }
    let sweep = AlphaSweep {
        cells,
        pairs: stage.pairs.len(),
        train_fraction: ledger.usage_fraction()?,
    };
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        sweep.write_csv(&dir.join("alpha_sweep.csv"))?;
        sweep.write_heatmap_csv(&dir.join("alpha_heatmap.csv"))?;
    }
    Ok(sweep)
}

/// GP-filter outcome at one `D′` size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub requested: usize,
    /// Actual `|D′|`; smaller than requested when the filter kept fewer.
    pub pairs: usize,
    /// GP mean vs oracle logits on the test split.
    pub logit_mae: f64,
    pub accuracy: f64,
    pub train_fraction: f64,
    pub fallbacks: usize,
}

/// Reruns GP-filter with `D′` capped at each of `sizes` (the first entries of
/// the filter's selection order).
pub fn budget_sweep(config: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<BudgetPoint>> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("budget sizes"));
    }
    let prepared = prepare(config)?;
    let test_oracle = CachedOracle::new(prepared.oracle.clone());
    let test_ledger = ApiLedger::new(prepared.test.len());
    for ex in &prepared.test {
        test_oracle.query(ex, &test_ledger)?;
    }

    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 {
            return Err(Error::CountOutOfRange {
                count: 0,
                max: prepared.train.len(),
            });
        }
        let cfg = ExperimentConfig {
            selection: super::SelectionSpec {
                max_pairs: size,
                ..config.selection.clone()
            },
            budget_cap: None,
            ..config.clone()
        };
        points.push(budget_point(&cfg, &prepared, size, &test_oracle, &test_ledger)?);
    }
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("budget_sweep.csv"))?;
        for p in &points {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    Ok(points)
}

fn budget_point(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    size: usize,
    test_oracle: &CachedOracle,
    test_ledger: &ApiLedger,
) -> Result<BudgetPoint> {
    let oracle = CachedOracle::new(prepared.oracle.clone());
    let ledger = ApiLedger::new(prepared.train.len());
    let stage = build_gp_filter(cfg, prepared, &oracle, &ledger)?;
    if stage.pairs.len() < size {
        log::warn!(
            "filter kept {} examples, fewer than the requested {size}",
            stage.pairs.len()
        );
    }
    let logit_mae = gp_logit_mae(&stage.posterior, &prepared.test, |id| {
        test_oracle.cache().get(id).map(|r| r.logits)
    })?;
    let train_cfg = TrainConfig {
        objective: Objective::GpGated,
        ..cfg.train_config()
    };
    let supervision = Supervision {
        oracle: Some(&oracle),
        ledger: Some(&ledger),
        gp: Some(&stage.posterior),
        gate: stage.gate,
    };
    let trained = train_proxy(&train_cfg, &prepared.train, &prepared.minus, supervision)?;
    let predictor = EnsemblePredictor {
        plus: &trained.params,
        minus: &prepared.minus,
        oracle: test_oracle,
        ledger: test_ledger,
        alpha: cfg.alpha.alpha_test,
    };
    let accuracy = evaluate(&predictor, &prepared.test, Some(test_ledger))?.accuracy;
    Ok(BudgetPoint {
        requested: size,
        pairs: stage.pairs.len(),
        logit_mae,
        accuracy,
        train_fraction: ledger.usage_fraction()?,
        fallbacks: trained.fallbacks,
    })
}
