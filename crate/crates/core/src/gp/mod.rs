//! Exact multi-output Gaussian Process regression over LogitMap pairs.
//!
//! Each of the `V` logit dimensions is an independent GP sharing one
//! squared-exponential kernel. When all dimensions share a noise level the
//! covariance `K + σ²I` is factored once and reused for every dimension.
//!
//! ```text
//! mean_v(x)     = k(x, X)ᵀ (K + σ²_v I)⁻¹ s_v + m_v
//! variance_v(x) = k(x, x) − k(x, X)ᵀ (K + σ²_v I)⁻¹ k(x, X)
//! ```

mod cholesky;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cholesky::Cholesky;

use crate::data::{Embedding, LogitMapSet, LogitVector};
use crate::error::{Error, Result};

/// Tag written into serialized posteriors.
pub const POSTERIOR_FORMAT: &str = "logitgate-gp-posterior/1";

/// Variances more negative than this are reported instead of clamped.
pub const VARIANCE_ROUNDOFF: f64 = 1e-12;

const JITTER_START: f64 = 1e-8;
const JITTER_STEPS: i32 = 7; // 1e-8 ..= 1e-2

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MeanFunction {
    Zero,
    Constant(f64),
    /// Per-dimension mean of the training targets.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub mean: MeanFunction,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            lengthscale: 1.0,
            mean: MeanFunction::Zero,
        }
    }
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Self {
        Self {
            signal_variance,
            lengthscale,
            mean: MeanFunction::Zero,
        }
    }

    pub fn with_mean(mut self, mean: MeanFunction) -> Self {
        self.mean = mean;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.lengthscale) {
            return Err(Error::InvalidSpec(format!(
                "kernel needs positive finite σ_f² and ℓ, got {} and {}",
                self.signal_variance, self.lengthscale
            )));
        }
        if let MeanFunction::Constant(c) = self.mean {
            if !c.is_finite() {
                return Err(Error::NonFiniteInput("mean function"));
            }
        }
        Ok(())
    }

    /// Median pairwise input distance as lengthscale and the mean per-dimension
    /// target variance as signal variance. Degenerate sets fall back to 1.
    pub fn from_data(pairs: &LogitMapSet) -> Self {
        let inputs: Vec<&[f64]> = pairs.pairs().iter().map(|p| p.embedding.as_slice()).collect();
        let mut dists = Vec::with_capacity(inputs.len() * inputs.len().saturating_sub(1) / 2);
        for i in 0..inputs.len() {
            for j in i + 1..inputs.len() {
                dists.push(squared_distance(inputs[i], inputs[j]).sqrt());
            }
        }
        let lengthscale = median(&mut dists).filter(|m| *m > 0.0 && m.is_finite()).unwrap_or(1.0);

        let m = pairs.len();
        let width = pairs.pairs().first().map_or(0, |p| p.oracle_logits.len());
        let mut total = 0.0;
        for v in 0..width {
            let col: Vec<f64> = pairs.pairs().iter().map(|p| p.oracle_logits[v]).collect();
            let mean = col.iter().sum::<f64>() / m as f64;
            total += col.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m as f64;
        }
        let signal_variance = if width > 0 { total / width as f64 } else { 0.0 };
        let signal_variance = if signal_variance > 0.0 && signal_variance.is_finite() {
            signal_variance
        } else {
            1.0
        };
        Self::new(signal_variance, lengthscale)
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if values.len() % 2 == 1 {
        Some(hi)
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub variance: f64,
    /// Optional per-logit-dimension override of `variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_dim: Option<Vec<f64>>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::shared(1e-2)
    }
}

impl NoiseParams {
    pub fn shared(variance: f64) -> Self {
        Self {
            variance,
            per_dim: None,
        }
    }

    pub fn per_dimension(values: Vec<f64>) -> Self {
        Self {
            variance: values.first().copied().unwrap_or(0.0),
            per_dim: Some(values),
        }
    }

    fn for_dim(&self, v: usize) -> f64 {
        self.per_dim.as_ref().map_or(self.variance, |p| p[v])
    }

    fn validate(&self, width: usize) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.variance) {
            return Err(Error::InvalidSpec(format!("noise variance {}", self.variance)));
        }
        if let Some(per_dim) = &self.per_dim {
            if per_dim.len() != width {
                return Err(Error::dims(width, per_dim.len()));
            }
            if let Some(bad) = per_dim.iter().find(|v| !ok(**v)) {
                return Err(Error::InvalidSpec(format!("noise variance {bad}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub per_dim_variance: Vec<f64>,
    /// Scalar τ² used by the gate.
    pub scalar: f64,
}

/// Squared-exponential covariance `σ_f² exp(−‖a − b‖² / 2ℓ²)`.
pub fn rbf_kernel(a: &[f64], b: &[f64], kernel: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    Ok(rbf_unchecked(a, b, kernel))
}

fn rbf_unchecked(a: &[f64], b: &[f64], kernel: &KernelParams) -> f64 {
    let r2 = squared_distance(a, b);
    kernel.signal_variance * (-r2 / (2.0 * kernel.lengthscale * kernel.lengthscale)).exp()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One factorization of `K + (σ² + jitter) I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFactor {
    pub noise_variance: f64,
    pub jitter: f64,
    pub cholesky: Cholesky,
}

/// Fitted multi-output GP. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpPosterior {
    inputs: Vec<Embedding>,
    factors: Vec<NoiseFactor>,
    /// Index into `factors` for each logit dimension.
    factor_of_dim: Vec<usize>,
    /// One column of `M` weights per logit dimension.
    dual_weights: Vec<Vec<f64>>,
    mean_offsets: Vec<f64>,
    kernel: KernelParams,
    noise: NoiseParams,
    aggregation: UncertaintyAggregation,
}

/// Fits one GP per logit dimension on `pairs`.
///
/// Fails with `IllConditioned` when the covariance cannot be factored even
/// after adding diagonal jitter from `1e-8` up to `1e-2` times `trace(K)/M`.
pub fn fit_gp(pairs: &LogitMapSet, kernel: &KernelParams, noise: &NoiseParams) -> Result<GpPosterior> {
    kernel.validate()?;
    let first = pairs.pairs().first().ok_or(Error::EmptyTrainingSet)?;
    let m = pairs.len();
    let dim = first.embedding.len();
    let width = first.oracle_logits.len();
    noise.validate(width)?;

    let inputs: Vec<Embedding> = pairs.pairs().iter().map(|p| p.embedding.clone()).collect();
    for x in &inputs {
        if x.len() != dim {
            return Err(Error::dims(dim, x.len()));
        }
        if !x.is_finite() {
            return Err(Error::NonFiniteInput("GP inputs"));
        }
    }
    for p in pairs.pairs() {
        if !p.oracle_logits.is_finite() {
            return Err(Error::NonFiniteInput("GP targets"));
        }
    }

    let mean_offsets: Vec<f64> = (0..width)
        .map(|v| match kernel.mean {
            MeanFunction::Zero => 0.0,
            MeanFunction::Constant(c) => c,
            MeanFunction::Empirical => pairs.pairs().iter().map(|p| p.oracle_logits[v]).sum::<f64>() / m as f64,
        })
        .collect();

    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        gram[i * m + i] = kernel.signal_variance;
        for j in 0..i {
            let k = rbf_unchecked(&inputs[i], &inputs[j], kernel);
            gram[i * m + j] = k;
            gram[j * m + i] = k;
        }
    }
    let trace_scale = gram.iter().step_by(m + 1).sum::<f64>() / m as f64;

    let mut factors: Vec<NoiseFactor> = Vec::new();
    let mut factor_of_dim = Vec::with_capacity(width);
    let mut dual_weights = Vec::with_capacity(width);
    for v in 0..width {
        let sigma2 = noise.for_dim(v);
        let idx = match factors
            .iter()
            .position(|f| f.noise_variance.to_bits() == sigma2.to_bits())
        {
            Some(i) => i,
            None => {
                factors.push(factor_with_jitter(&gram, m, sigma2, trace_scale)?);
                factors.len() - 1
            }
        };
        let targets: Vec<f64> = pairs
            .pairs()
            .iter()
            .map(|p| p.oracle_logits[v] - mean_offsets[v])
            .collect();
        let weights = factors[idx].cholesky.solve(&targets);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::IllConditioned {
                jitter: factors[idx].jitter,
            });
        }
        factor_of_dim.push(idx);
        dual_weights.push(weights);
    }

    Ok(GpPosterior {
        inputs,
        factors,
        factor_of_dim,
        dual_weights,
        mean_offsets,
        kernel: *kernel,
        noise: noise.clone(),
        aggregation: UncertaintyAggregation::default(),
    })
}

fn factor_with_jitter(gram: &[f64], m: usize, sigma2: f64, trace_scale: f64) -> Result<NoiseFactor> {
    let mut jitter = 0.0;
    let mut step = 0;
    loop {
        let mut a = gram.to_vec();
        for i in 0..m {
            a[i * m + i] += sigma2 + jitter;
        }
        if let Some(cholesky) = Cholesky::factor(&a, m) {
            return Ok(NoiseFactor {
                noise_variance: sigma2,
                jitter,
                cholesky,
            });
        }
        if step == JITTER_STEPS {
            return Err(Error::IllConditioned { jitter });
        }
        jitter = JITTER_START * 10f64.powi(step) * trace_scale;
        step += 1;
        log::debug!("covariance factorization failed, retrying with jitter {jitter:e}");
    }
}

impl GpPosterior {
    pub fn with_aggregation(mut self, aggregation: UncertaintyAggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn aggregation(&self) -> UncertaintyAggregation {
        self.aggregation
    }

    pub fn num_points(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.dual_weights.len()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn noise(&self) -> &NoiseParams {
        &self.noise
    }

    pub fn inputs(&self) -> &[Embedding] {
        &self.inputs
    }

    pub fn factors(&self) -> &[NoiseFactor] {
        &self.factors
    }

    /// Column `v` of the dual weight matrix.
    pub fn dual_weights(&self, v: usize) -> &[f64] {
        &self.dual_weights[v]
    }

    pub fn mean_offsets(&self) -> &[f64] {
        &self.mean_offsets
    }

    fn cross_covariance(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::dims(d, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("GP query point"));
        }
        Ok(self
            .inputs
            .iter()
            .map(|xi| rbf_unchecked(x, xi, &self.kernel))
            .collect())
    }

    /// Predictive mean of every logit dimension at `x`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<LogitVector> {
        let kx = self.cross_covariance(x)?;
        let out: Vec<f64> = self
            .dual_weights
            .iter()
            .zip(&self.mean_offsets)
            .map(|(w, m)| kx.iter().zip(w).map(|(k, a)| k * a).sum::<f64>() + m)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditioned { jitter: f64::NAN });
        }
        Ok(LogitVector(out))
    }

    /// Posterior variance of the latent function per dimension, plus the
    /// aggregated scalar τ².
    pub fn predict_uncertainty(&self, x: &[f64]) -> Result<UncertaintyEstimate> {
        let kx = self.cross_covariance(x)?;
        let prior = self.kernel.signal_variance;
        let per_factor = self
            .factors
            .iter()
            .map(|f| {
                let mut v = kx.clone();
                f.cholesky.forward_substitute(&mut v);
                let var = prior - v.iter().map(|a| a * a).sum::<f64>();
                if !var.is_finite() {
                    Err(Error::IllConditioned { jitter: f.jitter })
                } else if var < -VARIANCE_ROUNDOFF {
                    Err(Error::NegativeVariance(var))
                } else {
                    Ok(var.max(0.0))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let per_dim_variance: Vec<f64> = self.factor_of_dim.iter().map(|&i| per_factor[i]).collect();
        let scalar = match self.aggregation {
            UncertaintyAggregation::Max => per_dim_variance.iter().copied().fold(0.0, f64::max),
            UncertaintyAggregation::Mean => per_dim_variance.iter().sum::<f64>() / per_dim_variance.len() as f64,
        };
        Ok(UncertaintyEstimate {
            per_dim_variance,
            scalar,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            file,
            &PosteriorFileRef {
                format: POSTERIOR_FORMAT,
                posterior: self,
            },
        )?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: PosteriorFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.format != POSTERIOR_FORMAT {
            return Err(Error::UnsupportedFormat(file.format));
        }
        Ok(file.posterior)
    }
}

#[derive(Serialize)]
struct PosteriorFileRef<'a> {
    format: &'a str,
    posterior: &'a GpPosterior,
}

#[derive(Deserialize)]
struct PosteriorFile {
    format: String,
    posterior: GpPosterior,
}

/// Gaussian log evidence summed over logit dimensions.
pub fn log_marginal_likelihood(pairs: &LogitMapSet, kernel: &KernelParams, noise: &NoiseParams) -> Result<f64> {
    let post = fit_gp(pairs, kernel, noise)?;
    Ok(lml_of(&post, pairs))
}

fn lml_of(post: &GpPosterior, pairs: &LogitMapSet) -> f64 {
    let m = pairs.len() as f64;
    let norm = 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    (0..post.output_dim())
        .map(|v| {
            let factor = &post.factors[post.factor_of_dim[v]];
            let fit: f64 = pairs
                .pairs()
                .iter()
                .zip(&post.dual_weights[v])
                .map(|(p, a)| (p.oracle_logits[v] - post.mean_offsets[v]) * a)
                .sum();
            -0.5 * fit - 0.5 * factor.cholesky.log_det() - norm
        })
        .sum()
}

/// Grid search around the data-driven defaults, keeping the kernel with the
/// highest log marginal likelihood. Grid points that fail to factor are skipped.
pub fn select_kernel(
    pairs: &LogitMapSet,
    noise: &NoiseParams,
    lengthscale_factors: &[f64],
    variance_factors: &[f64],
) -> Result<(KernelParams, f64)> {
    let base = KernelParams::from_data(pairs);
    let mut best: Option<(KernelParams, f64)> = None;
    let mut last_err = None;
    for &lf in lengthscale_factors {
        for &vf in variance_factors {
            let candidate = KernelParams {
                signal_variance: base.signal_variance * vf,
                lengthscale: base.lengthscale * lf,
                mean: base.mean,
            };
            match log_marginal_likelihood(pairs, &candidate, noise) {
                Ok(lml) if best.as_ref().is_none_or(|(_, b)| lml > *b) => best = Some((candidate, lml)),
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::EmptyInput("kernel grid")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Uncertainty at or below which the GP mean is trusted.
    pub threshold: f64,
    pub target_fallback_fraction: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            threshold: f64::INFINITY,
            target_fallback_fraction: 0.01,
        }
    }
}

impl GateConfig {
    /// A gate that never falls back to the oracle.
    pub fn never() -> Self {
        Self::default()
    }
}

/// Picks θ so that `ceil(p·N)` of `values` lie strictly above it. Ties at the
/// cut reduce the number of fallbacks.
pub fn gate_threshold_from_values(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("uncertainty values"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidSpec(format!("fallback fraction {p} outside (0,1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("uncertainty values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let fallbacks = ((p * n as f64).ceil() as usize).min(n);
    Ok(sorted[n.saturating_sub(fallbacks).saturating_sub(1)])
}

/// Calibrates the gate on the scalar uncertainties of `inputs`.
pub fn calibrate_gate_threshold(posterior: &GpPosterior, inputs: &[&[f64]], p: f64) -> Result<GateConfig> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("gate calibration inputs"));
    }
    let values = inputs
        .iter()
        .map(|x| posterior.predict_uncertainty(x).map(|u| u.scalar))
        .collect::<Result<Vec<_>>>()?;
    Ok(GateConfig {
        threshold: gate_threshold_from_values(&values, p)?,
        target_fallback_fraction: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LogitMapPair;

    fn set(points: &[(&[f64], &[f64])]) -> LogitMapSet {
        LogitMapSet::new(
            points
                .iter()
                .enumerate()
                .map(|(i, (x, s))| LogitMapPair {
                    example_id: format!("p{i}"),
                    embedding: Embedding(x.to_vec()),
                    oracle_logits: LogitVector(s.to_vec()),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rbf_examples() {
        let k = KernelParams::new(4.0, 1.0);
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], &k).unwrap(), 4.0);
        let unit = KernelParams::new(1.0, 1.0);
        let v = rbf_kernel(&[0.0, 0.0], &[1.0, 1.0], &unit).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!(matches!(
            rbf_kernel(&[0.0], &[0.0, 1.0], &unit),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_point_interpolation() {
        let pairs = set(&[(&[0.0], &[2.0])]);
        let post = fit_gp(&pairs, &KernelParams::default(), &NoiseParams::shared(0.0)).unwrap();
        assert_eq!(post.predict_mean(&[0.0]).unwrap().0, vec![2.0]);
        let u = post.predict_uncertainty(&[0.0]).unwrap();
        assert_eq!(u.per_dim_variance, vec![0.0]);
    }

    #[test]
    fn empty_training_set() {
        let r = fit_gp(
            &LogitMapSet::default(),
            &KernelParams::default(),
            &NoiseParams::default(),
        );
        assert!(matches!(r, Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn two_point_dual_weights_match_closed_form() {
        let pairs = set(&[(&[0.0], &[1.0]), (&[1.0], &[-1.0])]);
        let post = fit_gp(&pairs, &KernelParams::new(1.0, 1.0), &NoiseParams::shared(0.1)).unwrap();
        // [[a, b], [b, a]]⁻¹ = [[a, −b], [−b, a]] / (a² − b²)
        let a = 1.1;
        let b = (-0.5f64).exp();
        let det = a * a - b * b;
        let expected = [(a * 1.0 - -b) / det, (-b * 1.0 + -a) / det];
        let got = post.dual_weights(0);
        assert!((got[0] - expected[0]).abs() < 1e-14);
        assert!((got[1] - expected[1]).abs() < 1e-14);
    }

    #[test]
    fn single_point_noisy_variance() {
        let pairs = set(&[(&[0.5, 0.5], &[3.0])]);
        let post = fit_gp(&pairs, &KernelParams::new(1.0, 1.0), &NoiseParams::shared(1.0)).unwrap();
        let u = post.predict_uncertainty(&[0.5, 0.5]).unwrap();
        assert!((u.scalar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let pairs = set(&[(&[0.0, 0.0], &[1.0, -2.0, 5.0]), (&[1.0, 0.0], &[0.5, 0.5, 0.5])]);
        let k = KernelParams::new(2.5, 0.7);
        let post = fit_gp(&pairs, &k, &NoiseParams::default()).unwrap();
        let far = [0.7e6 * 1e6, 0.0];
        let mean = post.predict_mean(&far).unwrap();
        assert!(mean.iter().all(|v| v.abs() < 1e-12));
        let u = post.predict_uncertainty(&far).unwrap();
        assert!(u.per_dim_variance.iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn lml_standard_normal() {
        let pairs = set(&[(&[0.0], &[0.0, 0.0])]);
        let lml = log_marginal_likelihood(&pairs, &KernelParams::new(0.75, 1.0), &NoiseParams::shared(0.25)).unwrap();
        assert!((lml - 2.0 * -0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        let pairs = set(&[(&[0.0], &[1.0]), (&[0.0], &[1.0])]);
        let post = fit_gp(&pairs, &KernelParams::default(), &NoiseParams::shared(0.0)).unwrap();
        assert!(post.factors()[0].jitter > 0.0);
        assert!((post.predict_mean(&[0.0]).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn per_dim_noise_uses_separate_factors() {
        let pairs = set(&[(&[0.0], &[1.0, 1.0, 1.0]), (&[1.0], &[0.0, 0.0, 0.0])]);
        let post = fit_gp(
            &pairs,
            &KernelParams::default(),
            &NoiseParams::per_dimension(vec![0.1, 0.5, 0.1]),
        )
        .unwrap();
        assert_eq!(post.factors().len(), 2);
        let u = post.predict_uncertainty(&[0.0]).unwrap();
        assert_eq!(u.per_dim_variance[0], u.per_dim_variance[2]);
        assert!(u.per_dim_variance[1] > u.per_dim_variance[0]);
        assert_eq!(u.scalar, u.per_dim_variance[1]);
        let mean = post
            .with_aggregation(UncertaintyAggregation::Mean)
            .predict_uncertainty(&[0.0])
            .unwrap();
        assert!(mean.scalar < u.scalar);
    }

    #[test]
    fn gate_threshold_examples() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let theta = gate_threshold_from_values(&values, 0.01).unwrap();
        assert_eq!(theta, 0.99);
        assert_eq!(values.iter().filter(|v| **v > theta).count(), 1);

        let flat = vec![0.3; 50];
        let theta = gate_threshold_from_values(&flat, 0.01).unwrap();
        assert_eq!(theta, 0.3);
        assert_eq!(flat.iter().filter(|v| **v > theta).count(), 0);

        let theta = gate_threshold_from_values(&values, 0.999).unwrap();
        assert_eq!(theta, 0.01);
        assert_eq!(values.iter().filter(|v| **v > theta).count(), 99);

        assert!(matches!(
            gate_threshold_from_values(&[], 0.01),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn median_heuristic() {
        let pairs = set(&[(&[0.0], &[1.0]), (&[1.0], &[3.0]), (&[3.0], &[2.0])]);
        let k = KernelParams::from_data(&pairs);
        assert_eq!(k.lengthscale, 2.0);
        assert!((k.signal_variance - 2.0 / 3.0).abs() < 1e-15);
    }
}
