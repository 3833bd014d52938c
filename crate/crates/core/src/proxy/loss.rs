use super::{GatedSignal, ProxyParams};
use crate::data::{ApiLedger, Example};
use crate::error::{Error, Result};
use crate::oracle::CachedOracle;

/// Loss value and its gradient with respect to the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Whether the shifted logits rank `label` first.
    pub correct: bool,
}

/// `−log softmax(logits)[label]` and its gradient `softmax(logits) − e_label`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - log_norm).exp()).collect();
    grad[label] -= 1.0;
    Ok((log_norm - logits[label], grad))
}

/// `α·(signal − s₋(x))`, with masked-out dimensions left at zero.
pub fn supervision_shift(
    minus: &ProxyParams,
    signal: &[f64],
    alpha: f64,
    x: &[f64],
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let base = minus.forward(x)?;
    if signal.len() != base.len() {
        return Err(Error::dims(base.len(), signal.len()));
    }
    Ok(signal
        .iter()
        .zip(base.iter())
        .enumerate()
        .map(|(v, (s, m))| match mask {
            Some(mask) if !mask[v] => 0.0,
            _ => alpha * (s - m),
        })
        .collect())
}

pub(crate) fn shifted_loss(plus: &ProxyParams, x: &[f64], shift: Option<&[f64]>, label: usize) -> Result<LossEval> {
    let mut logits = plus.forward(x)?.into_inner();
    if let Some(shift) = shift {
        logits.iter_mut().zip(shift).for_each(|(l, s)| *l += s);
    }
    let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
    let correct = argmax(&logits) == label;
    let mut grad = vec![0.0; plus.weights().len()];
    plus.accumulate_gradient(x, &dlogits, &mut grad)?;
    Ok(LossEval { loss, grad, correct })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Independent fine-tuning: cross-entropy on `s₊(x)` alone.
pub fn plain_ft_loss(plus: &ProxyParams, x: &[f64], label: usize) -> Result<LossEval> {
    shifted_loss(plus, x, None, label)
}

/// Cross-entropy of `s₊(x) + α·(signal − s₋(x))`.
pub fn gated_loss(
    plus: &ProxyParams,
    minus: &ProxyParams,
    signal: &GatedSignal,
    alpha: f64,
    x: &[f64],
    label: usize,
) -> Result<LossEval> {
    let shift = supervision_shift(minus, &signal.logits, alpha, x, None)?;
    shifted_loss(plus, x, Some(&shift), label)
}

/// Same as [`gated_loss`] with the oracle queried for the example.
pub fn cpt_loss(
    plus: &ProxyParams,
    minus: &ProxyParams,
    oracle: &CachedOracle,
    ledger: &ApiLedger,
    alpha: f64,
    example: &Example,
) -> Result<LossEval> {
    let signal = oracle.query(example, ledger)?;
    let shift = supervision_shift(minus, &signal, alpha, &example.embedding, None)?;
    shifted_loss(plus, &example.embedding, Some(&shift), example.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LogitVector;
    use crate::proxy::{Architecture, SignalSource};

    fn signal(v: Vec<f64>) -> GatedSignal {
        GatedSignal {
            logits: LogitVector(v),
            source: SignalSource::Gp,
            uncertainty: 0.0,
            observed: None,
        }
    }

    #[test]
    fn uniform_losses() {
        let (l, _) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = softmax_cross_entropy(&[0.0; 4], 3).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let (l, g) = softmax_cross_entropy(&[800.0, 0.0], 0).unwrap();
        assert!(l.abs() < 1e-300 && g.iter().all(|v| v.abs() < 1e-300));
        assert!(matches!(
            softmax_cross_entropy(&[0.0], 1),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn alpha_zero_and_cancellation() {
        let plus = ProxyParams::random(Architecture::LinearSoftmax, 3, 4, 1).to_trainable();
        let minus = ProxyParams::random(Architecture::LinearSoftmax, 3, 4, 2);
        let x = [0.3, -1.2, 0.8];
        let plain = plain_ft_loss(&plus, &x, 2).unwrap();

        let s = signal(vec![5.0, -1.0, 0.5, 2.0]);
        let zero = gated_loss(&plus, &minus, &s, 0.0, &x, 2).unwrap();
        assert_eq!(plain, zero);

        let same = signal(minus.forward(&x).unwrap().into_inner());
        let cancelled = gated_loss(&plus, &minus, &same, 0.8, &x, 2).unwrap();
        assert_eq!(plain, cancelled);
    }

    #[test]
    fn shift_invariance() {
        let plus = ProxyParams::random(Architecture::LinearSoftmax, 2, 3, 4).to_trainable();
        let minus = ProxyParams::random(Architecture::LinearSoftmax, 2, 3, 5);
        let x = [0.5, 0.25];
        let base = vec![1.0, -2.0, 0.5];
        let a = gated_loss(&plus, &minus, &signal(base.clone()), 0.8, &x, 1).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 3.0).collect();
        let b = gated_loss(&plus, &minus, &signal(shifted), 0.8, &x, 1).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn masked_dimensions_do_not_shift() {
        let minus = ProxyParams::random(Architecture::LinearSoftmax, 2, 3, 9);
        let shift = supervision_shift(&minus, &[4.0, 4.0, 4.0], 1.0, &[1.0, 1.0], Some(&[true, false, true])).unwrap();
        assert_eq!(shift[1], 0.0);
        assert_ne!(shift[0], 0.0);
    }
}
