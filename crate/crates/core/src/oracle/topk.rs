use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::LogitVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    pub token_id: usize,
    pub logprob: f64,
}

/// The `k` most likely tokens with their log-probabilities, most likely first.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKLogprobs {
    entries: Vec<TopKEntry>,
}

impl TopKLogprobs {
    /// Requires at least one entry, distinct token ids, finite non-increasing logprobs.
    pub fn new(entries: Vec<TopKEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("top-k entries"));
        }
        let mut ids = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !e.logprob.is_finite() {
                return Err(Error::NonFiniteInput("top-k logprob"));
            }
            if !ids.insert(e.token_id) {
                return Err(Error::parse("top-k", format!("duplicate token id {}", e.token_id)));
            }
            if i > 0 && e.logprob > entries[i - 1].logprob {
                return Err(Error::parse("top-k", "entries not sorted by descending logprob"));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TopKEntry] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.token_id).collect()
    }
}

/// Log-softmax of `logits`, keeping the `k` largest entries.
pub fn truncate_topk(logits: &[f64], k: usize) -> Result<TopKLogprobs> {
    let vocab = logits.len();
    if k == 0 || k > vocab {
        return Err(Error::KOutOfRange { k, vocab });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut order: Vec<usize> = (0..vocab).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    let entries = order
        .into_iter()
        .take(k)
        .map(|i| TopKEntry {
            token_id: i,
            logprob: logits[i] - log_norm,
        })
        .collect();
    TopKLogprobs::new(entries)
}

/// Smallest observed logprob minus 10.
pub fn default_floor(sparse: &TopKLogprobs) -> f64 {
    sparse.entries.iter().map(|e| e.logprob).fold(f64::INFINITY, f64::min) - 10.0
}

/// Dense `vocab`-sized vector with observed logprobs in place and `floor`
/// everywhere else.
pub fn align_topk(sparse: &TopKLogprobs, vocab: usize, floor: f64) -> Result<LogitVector> {
    let mut dense = vec![floor; vocab];
    for e in &sparse.entries {
        if e.token_id >= vocab {
            return Err(Error::TokenIdOutOfRange {
                token_id: e.token_id,
                vocab,
            });
        }
        dense[e.token_id] = e.logprob;
    }
    Ok(LogitVector(dense))
}

/// Which of the `vocab` dimensions appear in `sparse`.
pub fn observed_mask(sparse: &TopKLogprobs, vocab: usize) -> Vec<bool> {
    let mut mask = vec![false; vocab];
    for e in &sparse.entries {
        if let Some(m) = mask.get_mut(e.token_id) {
            *m = true;
        }
    }
    mask
}
