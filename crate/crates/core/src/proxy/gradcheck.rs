use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Largest coordinates sampled per check.
const SAMPLE_SIZE: usize = 100;

/// Gradients whose magnitudes are both below this compare absolutely.
const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub coordinates: usize,
}

/// Compares the analytic gradient from `loss` with central differences using
/// the step `h·(1 + |w|)` on up to 100 randomly chosen coordinates.
///
/// `loss` maps a parameter vector to `(value, gradient)`.
pub fn grad_check<F>(loss: F, params: &[f64], h: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = loss(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, params.len(), params.len().min(SAMPLE_SIZE));
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        coordinates: picks.len(),
    };
    for i in picks {
        let step = h * (1.0 + params[i].abs());
        probe[i] = params[i] + step;
        let (up, _) = loss(&probe)?;
        probe[i] = params[i] - step;
        let (down, _) = loss(&probe)?;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        report.max_relative_error = report.max_relative_error.max((a - numeric).abs() / denom);
        report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
        report.max_abs_numeric = report.max_abs_numeric.max(numeric.abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |w: &[f64]| {
            Ok((
                w.iter().map(|v| v * v).sum::<f64>(),
                w.iter().map(|v| 2.0 * v).collect(),
            ))
        };
        let r = grad_check(f, &[1.0, -2.0, 0.5], 1e-5, 0).unwrap();
        assert!(r.max_relative_error < 1e-8);
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn stationary_point() {
        let f = |w: &[f64]| Ok(((w[0] - 3.0).powi(2), vec![2.0 * (w[0] - 3.0)]));
        let r = grad_check(f, &[3.0], 1e-5, 0).unwrap();
        assert!(r.max_abs_analytic < 1e-6 && r.max_abs_numeric < 1e-6);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |w: &[f64]| Ok((w[0] * w[0], vec![w[0]]));
        let r = grad_check(f, &[1.0], 1e-5, 0).unwrap();
        assert!(r.max_relative_error > 0.4);
    }
}
