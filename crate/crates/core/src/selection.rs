//! Construction of the GP training set: distance metrics, the greedy
//! diversity filter, percentile calibration of its thresholds, and the
//! random-sampling baseline.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_jsonl, ApiLedger, Dataset, LogitMapPair, LogitMapSet, LogitVector};
use crate::error::{Error, Result};
use crate::oracle::CachedOracle;
use crate::proxy::ProxyParams;

/// Upper bound on LogitMap pairs handed to the GP.
pub const DEFAULT_MAX_PAIRS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
    CosineDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub tau_in: f64,
    pub tau_out: f64,
    #[serde(default)]
    pub metric: DistanceMetric,
}

impl SelectionThresholds {
    pub fn new(tau_in: f64, tau_out: f64) -> Self {
        Self {
            tau_in,
            tau_out,
            metric: DistanceMetric::Euclidean,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |t: f64| t.is_finite() && t >= 0.0;
        if !ok(self.tau_in) || !ok(self.tau_out) {
            return Err(Error::InvalidSpec(format!(
                "thresholds must be finite and nonnegative, got {} / {}",
                self.tau_in, self.tau_out
            )));
        }
        Ok(())
    }
}

/// A selected example and, for filter selection, the frozen proxy's logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_logits: Option<LogitVector>,
    #[serde(skip)]
    pub index: usize,
}

/// Selected examples in selection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Dataset positions of the selected examples.
    pub fn indices(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.index).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }

    /// Keeps the first `max` candidates.
    pub fn truncate(&mut self, max: usize) {
        self.candidates.truncate(max);
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.candidates.iter())
    }
}

fn check_finite(d: f64) -> Result<f64> {
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NonFiniteInput("distance"))
    }
}

pub fn input_distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let d = match metric {
        DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        DistanceMetric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        DistanceMetric::CosineDistance => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    };
    check_finite(d)
}

/// Euclidean distance between two logit vectors.
pub fn output_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    input_distance(a, b, DistanceMetric::Euclidean)
}

/// Greedy diversity filter over parallel input/output vectors.
///
/// The first point seeds the selection. Each later point is rejected as soon
/// as some selected point has `d_in ≤ τ_in` or `d_out ≤ τ_out`; otherwise it
/// is appended. `observe` sees every `(d_in, d_out)` evaluated.
pub fn greedy_filter<I, O>(
    inputs: &[I],
    outputs: &[O],
    thresholds: &SelectionThresholds,
    mut observe: impl FnMut(f64, f64),
) -> Result<Vec<usize>>
where
    I: AsRef<[f64]>,
    O: AsRef<[f64]>,
{
    thresholds.validate()?;
    if inputs.len() != outputs.len() {
        return Err(Error::dims(inputs.len(), outputs.len()));
    }
    let mut selected: Vec<usize> = Vec::new();
    for i in 0..inputs.len() {
        let mut diverse = true;
        for &k in &selected {
            let d_in = input_distance(inputs[i].as_ref(), inputs[k].as_ref(), thresholds.metric)?;
            let d_out = output_distance(outputs[i].as_ref(), outputs[k].as_ref())?;
            observe(d_in, d_out);
            if d_in <= thresholds.tau_in || d_out <= thresholds.tau_out {
                diverse = false;
                break;
            }
        }
        if diverse {
            selected.push(i);
        }
    }
    Ok(selected)
}

fn proxy_logits(dataset: &Dataset, proxy: &ProxyParams) -> Result<Vec<LogitVector>> {
    dataset.iter().map(|ex| proxy.forward(&ex.embedding)).collect()
}

/// Runs the diversity filter with the frozen proxy's logits as outputs. Makes
/// no oracle queries.
pub fn filter_select(dataset: &Dataset, proxy: &ProxyParams, thresholds: &SelectionThresholds) -> Result<CandidateSet> {
    dataset.require_nonempty()?;
    let outputs = proxy_logits(dataset, proxy)?;
    let inputs: Vec<&[f64]> = dataset.iter().map(|e| e.embedding.as_slice()).collect();
    let chosen = greedy_filter(&inputs, &outputs, thresholds, |_, _| {})?;
    let mut outputs: Vec<Option<LogitVector>> = outputs.into_iter().map(Some).collect();
    Ok(CandidateSet {
        candidates: chosen
            .into_iter()
            .map(|i| Candidate {
                id: dataset.examples()[i].id.clone(),
                proxy_logits: outputs[i].take(),
                index: i,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Distances seen by a filter pass with zero thresholds.
    #[default]
    PermissiveRun,
    /// Every unordered pair; quadratic, meant for small datasets.
    AllPairs,
}

/// The value at rank `ceil(p·N)` (1-based) of the ascending sort.
pub fn lower_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile values"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidSpec(format!("percentile {p} outside (0,1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Sets `τ_in` and `τ_out` to the `p`-quantiles of the input and output
/// distances collected according to `mode`.
pub fn calibrate_thresholds(
    dataset: &Dataset,
    proxy: &ProxyParams,
    p: f64,
    metric: DistanceMetric,
    mode: CalibrationMode,
) -> Result<SelectionThresholds> {
    if dataset.len() < 2 {
        return Err(Error::EmptyInput("calibration needs at least two examples"));
    }
    let outputs = proxy_logits(dataset, proxy)?;
    let inputs: Vec<&[f64]> = dataset.iter().map(|e| e.embedding.as_slice()).collect();
    let (mut d_in, mut d_out) = (Vec::new(), Vec::new());
    match mode {
        CalibrationMode::PermissiveRun => {
            let permissive = SelectionThresholds {
                tau_in: 0.0,
                tau_out: 0.0,
                metric,
            };
            greedy_filter(&inputs, &outputs, &permissive, |a, b| {
                d_in.push(a);
                d_out.push(b);
            })?;
        }
        CalibrationMode::AllPairs => {
            for i in 0..inputs.len() {
                for j in i + 1..inputs.len() {
                    d_in.push(input_distance(inputs[i], inputs[j], metric)?);
                    d_out.push(output_distance(&outputs[i], &outputs[j])?);
                }
            }
        }
    }
    Ok(SelectionThresholds {
        tau_in: lower_quantile(&d_in, p)?,
        tau_out: lower_quantile(&d_out, p)?,
        metric,
    })
}

/// Uniform sample of `count` examples without replacement.
pub fn random_select(dataset: &Dataset, count: usize, seed: u64) -> Result<CandidateSet> {
    if count == 0 || count > dataset.len() {
        return Err(Error::CountOutOfRange {
            count,
            max: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, dataset.len(), count);
    Ok(CandidateSet {
        candidates: picks
            .into_iter()
            .map(|i| Candidate {
                id: dataset.examples()[i].id.clone(),
                proxy_logits: None,
                index: i,
            })
            .collect(),
    })
}

/// Queries the oracle once per candidate (at most `max_pairs` of them, in
/// selection order) and pairs each embedding with the oracle's logits.
pub fn build_logitmap(
    candidates: &CandidateSet,
    dataset: &Dataset,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
    max_pairs: usize,
) -> Result<LogitMapSet> {
    if candidates.len() > max_pairs {
        log::warn!(
            "{} candidates exceed the cap of {max_pairs}; keeping the first {max_pairs}",
            candidates.len()
        );
    }
    let pairs = candidates
        .candidates()
        .iter()
        .take(max_pairs)
        .map(|c| {
            let ex = dataset
                .examples()
                .get(c.index)
                .filter(|e| e.id == c.id)
                .or_else(|| dataset.get(&c.id))
                .ok_or_else(|| Error::MissingArtifacts(format!("candidate {:?} not in dataset", c.id)))?;
            Ok(LogitMapPair {
                example_id: ex.id.clone(),
                embedding: ex.embedding.clone(),
                oracle_logits: oracle.query(ex, ledger)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LogitMapSet::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(
            input_distance(&[0.0, 0.0], &[3.0, 4.0], DistanceMetric::Euclidean).unwrap(),
            5.0
        );
        assert_eq!(
            input_distance(&[0.0, 0.0], &[3.0, 4.0], DistanceMetric::Manhattan).unwrap(),
            7.0
        );
        assert_eq!(
            input_distance(&[1.0, 2.0], &[1.0, 2.0], DistanceMetric::Euclidean).unwrap(),
            0.0
        );
        assert!(
            input_distance(&[1.0, 0.0], &[2.0, 0.0], DistanceMetric::CosineDistance)
                .unwrap()
                .abs()
                < 1e-15
        );
        assert!(
            (input_distance(&[1.0, 0.0], &[0.0, 1.0], DistanceMetric::CosineDistance).unwrap() - 1.0).abs() < 1e-15
        );
        assert!(matches!(
            input_distance(&[0.0, 0.0], &[1.0, 1.0], DistanceMetric::CosineDistance),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            input_distance(&[0.0], &[1.0, 1.0], DistanceMetric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!((output_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            output_distance(&[f64::INFINITY], &[0.0]),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn hand_traced_filter() {
        let inputs = [vec![0.0, 0.0], vec![0.5, 0.0], vec![3.0, 0.0]];
        let outputs = [vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 5.0]];
        let chosen = greedy_filter(&inputs, &outputs, &SelectionThresholds::new(1.0, 0.5), |_, _| {}).unwrap();
        assert_eq!(chosen, vec![0, 2]);
    }

    #[test]
    fn zero_thresholds_keep_distinct_points_and_drop_duplicates() {
        let inputs = [vec![0.0], vec![1.0], vec![2.0], vec![1.0]];
        let outputs = [vec![0.0], vec![1.0], vec![2.0], vec![1.0]];
        let chosen = greedy_filter(&inputs, &outputs, &SelectionThresholds::new(0.0, 0.0), |_, _| {}).unwrap();
        assert_eq!(chosen, vec![0, 1, 2]);
    }

    #[test]
    fn larger_thresholds_can_select_more() {
        // B blocks both C and D at τ = 1, but is itself blocked by P at τ = 1.6,
        // which lets C and D in.
        let inputs = [vec![0.0, 0.0], vec![1.5, 0.0], vec![1.5, 0.99], vec![1.5, -0.99]];
        let outputs = inputs.clone();
        let small = greedy_filter(&inputs, &outputs, &SelectionThresholds::new(1.0, 0.0), |_, _| {}).unwrap();
        let big = greedy_filter(&inputs, &outputs, &SelectionThresholds::new(1.6, 0.0), |_, _| {}).unwrap();
        assert_eq!(small, vec![0, 1]);
        assert_eq!(big, vec![0, 2, 3]);
    }

    #[test]
    fn quantile_examples() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(lower_quantile(&values, 0.01).unwrap(), 1.0);
        assert_eq!(lower_quantile(&values, 0.5).unwrap(), 50.0);
        assert_eq!(lower_quantile(&[2.5; 7], 0.01).unwrap(), 2.5);
        assert!(lower_quantile(&[], 0.01).is_err());
    }
}
