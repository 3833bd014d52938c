//! Logit arithmetic at inference time and accuracy evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ApiLedger, Dataset, Example, LogitVector};
use crate::error::{Error, Result};
use crate::oracle::CachedOracle;
use crate::proxy::ProxyParams;

/// `s₊ + α·(s_large − s₋)`, elementwise. With `α = 1` this is plain proxy-tuning.
pub fn combine_logits(s_plus: &[f64], s_minus: &[f64], s_large: &[f64], alpha: f64) -> Result<LogitVector> {
    if s_minus.len() != s_plus.len() {
        return Err(Error::dims(s_plus.len(), s_minus.len()));
    }
    if s_large.len() != s_plus.len() {
        return Err(Error::dims(s_plus.len(), s_large.len()));
    }
    Ok(LogitVector(
        s_plus
            .iter()
            .zip(s_minus)
            .zip(s_large)
            .map(|((p, m), l)| p + alpha * (l - m))
            .collect(),
    ))
}

/// Proxy-tuning combination `s_large + (s₊ − s₋)`.
pub fn proxy_tune_logits(s_plus: &[f64], s_minus: &[f64], s_large: &[f64]) -> Result<LogitVector> {
    if s_minus.len() != s_plus.len() || s_large.len() != s_plus.len() {
        return Err(Error::dims(s_plus.len(), s_minus.len().min(s_large.len())));
    }
    Ok(LogitVector(
        s_large
            .iter()
            .zip(s_plus)
            .zip(s_minus)
            .map(|((l, p), m)| l + (p - m))
            .collect(),
    ))
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / z).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub combined_logits: LogitVector,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl EnsemblePrediction {
    pub fn from_logits(combined_logits: LogitVector) -> Result<Self> {
        let probabilities = softmax(&combined_logits)?;
        Ok(Self {
            predicted_class: combined_logits.argmax(),
            probabilities,
            combined_logits,
        })
    }
}

/// Anything that maps an example to class scores.
pub trait Predictor {
    fn predict(&self, example: &Example) -> Result<LogitVector>;
}

impl<F> Predictor for F
where
    F: Fn(&Example) -> Result<LogitVector>,
{
    fn predict(&self, example: &Example) -> Result<LogitVector> {
        self(example)
    }
}

/// A proxy used on its own.
pub struct ProxyPredictor<'a>(pub &'a ProxyParams);

impl Predictor for ProxyPredictor<'_> {
    fn predict(&self, example: &Example) -> Result<LogitVector> {
        self.0.forward(&example.embedding)
    }
}

/// `s₊ + α·(s_large − s₋)` with the large model queried through the oracle.
pub struct EnsemblePredictor<'a> {
    pub plus: &'a ProxyParams,
    pub minus: &'a ProxyParams,
    pub oracle: &'a CachedOracle,
    pub ledger: &'a ApiLedger,
    pub alpha: f64,
}

impl Predictor for EnsemblePredictor<'_> {
    fn predict(&self, example: &Example) -> Result<LogitVector> {
        let large = self.oracle.query(example, self.ledger)?;
        combine_logits(
            &self.plus.forward(&example.embedding)?,
            &self.minus.forward(&example.embedding)?,
            &large,
            self.alpha,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub true_label: usize,
    pub pred_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub predictions: Vec<PredictionRow>,
    /// New unique oracle ids incurred while evaluating.
    pub ledger_delta: usize,
}

/// Accuracy of `predictor` on `split`. `ledger`, when given, is the one the
/// predictor queries through; its growth is reported as `ledger_delta`.
pub fn evaluate(predictor: &dyn Predictor, split: &Dataset, ledger: Option<&ApiLedger>) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let before = ledger.map_or(0, ApiLedger::unique_count);
    let mut predictions = Vec::with_capacity(split.len());
    let mut correct = 0usize;
    for ex in split {
        let logits = predictor.predict(ex)?;
        if !logits.is_finite() {
            return Err(Error::NonFiniteInput("prediction logits"));
        }
        let pred = logits.argmax();
        correct += usize::from(pred == ex.label);
        predictions.push(PredictionRow {
            id: ex.id.clone(),
            true_label: ex.label,
            pred_label: pred,
        });
    }
    Ok(EvalReport {
        accuracy: correct as f64 / split.len() as f64,
        predictions,
        ledger_delta: ledger.map_or(0, ApiLedger::unique_count) - before,
    })
}

/// Appends `id,true_label,pred_label,method` rows for several methods.
pub fn write_predictions_csv<'a>(
    path: &Path,
    reports: impl IntoIterator<Item = (&'a str, &'a EvalReport)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "true_label", "pred_label", "method"])?;
    for (method, report) in reports {
        for row in &report.predictions {
            w.write_record([
                row.id.as_str(),
                &row.true_label.to_string(),
                &row.pred_label.to_string(),
                method,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_examples() {
        let out = combine_logits(&[1.0, 2.0], &[2.0, 2.0], &[3.0, 1.0], 0.8).unwrap();
        assert!((out[0] - 1.8).abs() < 1e-15 && (out[1] - 1.2).abs() < 1e-15);
        assert_eq!(
            combine_logits(&[1.0, 2.0], &[7.0, 0.0], &[3.0, 1.0], 0.0).unwrap().0,
            vec![1.0, 2.0]
        );
        assert_eq!(
            combine_logits(&[1.0, 2.0], &[3.0, 1.0], &[3.0, 1.0], 1.7).unwrap().0,
            vec![1.0, 2.0]
        );
        assert!(matches!(
            combine_logits(&[1.0], &[1.0, 2.0], &[1.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.3; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let a = softmax(&[0.1, -2.0, 3.0]).unwrap();
        let b = softmax(&[100.1, 98.0, 103.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(matches!(softmax(&[f64::NAN]), Err(Error::NonFiniteInput(_))));
    }

    fn split() -> Dataset {
        Dataset::new(
            vec![
                Example::new("a", vec![0.0], 0),
                Example::new("b", vec![1.0], 1),
                Example::new("c", vec![2.0], 2),
            ],
            3,
            1,
        )
        .unwrap()
    }

    fn one_hot(k: usize) -> LogitVector {
        let mut v = vec![0.0; 3];
        v[k] = 1.0;
        LogitVector(v)
    }

    #[test]
    fn evaluate_examples() {
        let data = split();
        let perfect = |e: &Example| Ok(one_hot(e.label));
        assert_eq!(evaluate(&perfect, &data, None).unwrap().accuracy, 1.0);
        let wrong = |e: &Example| Ok(one_hot((e.label + 1) % 3));
        assert_eq!(evaluate(&wrong, &data, None).unwrap().accuracy, 0.0);
        let one_miss = |e: &Example| Ok(one_hot(if e.id == "c" { 0 } else { e.label }));
        assert!((evaluate(&one_miss, &data, None).unwrap().accuracy - 2.0 / 3.0).abs() < 1e-9);
        let empty = Dataset::new(vec![], 3, 1).unwrap();
        assert!(matches!(evaluate(&perfect, &empty, None), Err(Error::EmptySplit)));
    }
}
