//! The black-box model behind a query-counted, cached interface.
//!
//! Backends implement [`Oracle`]. Every caller goes through [`CachedOracle`],
//! which answers repeated ids from the cache and records each id sent to the
//! backend in an [`ApiLedger`].

mod cache;
mod http;
mod teacher;
mod topk;

use std::sync::Arc;

pub use cache::{CacheRow, OracleCache};
pub use http::{HttpOracle, RetryPolicy, WireEntry, WireRequest, WireResponse};
pub use teacher::{make_synthetic_teacher, SyntheticTeacher, TeacherSpec};
pub use topk::{align_topk, default_floor, observed_mask, truncate_topk, TopKEntry, TopKLogprobs};

use crate::data::{ApiLedger, Example, LogitVector};
use crate::error::{Error, Result};

/// Answer from a backend. `observed` marks which dimensions the backend
/// actually returned when it only exposes a top-k slice.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse {
    pub logits: LogitVector,
    pub observed: Option<Vec<bool>>,
}

impl From<LogitVector> for OracleResponse {
    fn from(logits: LogitVector) -> Self {
        Self { logits, observed: None }
    }
}

/// Input → logits contract of the black-box model. Implementations are never
/// asked about an id twice through [`CachedOracle`].
pub trait Oracle: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn evaluate(&self, example: &Example) -> Result<OracleResponse>;

    fn model_id(&self) -> &str {
        "oracle"
    }
}

/// Cache-aware, ledgered access to an [`Oracle`].
pub struct CachedOracle {
    backend: Arc<dyn Oracle>,
    cache: OracleCache,
}

impl CachedOracle {
    pub fn new(backend: Arc<dyn Oracle>) -> Self {
        Self::with_cache(backend, OracleCache::default())
    }

    pub fn with_cache(backend: Arc<dyn Oracle>, cache: OracleCache) -> Self {
        Self { backend, cache }
    }

    pub fn backend(&self) -> &Arc<dyn Oracle> {
        &self.backend
    }

    pub fn cache(&self) -> &OracleCache {
        &self.cache
    }

    pub fn vocab_size(&self) -> usize {
        self.backend.vocab_size()
    }

    /// Logits for `example`. A cache hit never touches the backend or adds a
    /// unique id to `ledger`.
    pub fn query(&self, example: &Example, ledger: &ApiLedger) -> Result<LogitVector> {
        self.query_response(example, ledger).map(|r| r.logits)
    }

    pub fn query_response(&self, example: &Example, ledger: &ApiLedger) -> Result<OracleResponse> {
        ledger.note_request();
        if let Some(hit) = self.cache.get(&example.id) {
            return Ok(hit);
        }
        ledger.check_budget(&example.id)?;
        let response = self.backend.evaluate(example)?;
        let vocab = self.backend.vocab_size();
        if response.logits.len() != vocab {
            return Err(Error::dims(vocab, response.logits.len()));
        }
        if !response.logits.is_finite() {
            return Err(Error::OracleUnavailable(format!(
                "non-finite logits for {:?}",
                example.id
            )));
        }
        let (stored, inserted) = self.cache.insert_if_absent(&example.id, response);
        if inserted {
            ledger.record(&example.id)?;
        }
        Ok(stored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
    }

    impl Oracle for Counting {
        fn vocab_size(&self) -> usize {
            2
        }

        fn evaluate(&self, example: &Example) -> Result<OracleResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(LogitVector(vec![example.embedding[0], -example.embedding[0]]).into())
        }
    }

    #[test]
    fn fresh_then_cached() {
        let backend = Arc::new(Counting {
            calls: AtomicUsize::new(0),
        });
        let oracle = CachedOracle::new(backend.clone());
        let ledger = ApiLedger::new(10);
        let ex = Example::new("a", vec![1.5], 0);
        let first = oracle.query(&ex, &ledger).unwrap();
        assert_eq!(ledger.unique_count(), 1);
        let second = oracle.query(&ex, &ledger).unwrap();
        assert_eq!(first, second);
        assert_eq!(ledger.unique_count(), 1);
        assert_eq!(ledger.total_requests(), 2);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        assert_eq!(oracle.cache().len(), ledger.unique_count());
    }

    #[test]
    fn budget_cap_blocks_backend() {
        let backend = Arc::new(Counting {
            calls: AtomicUsize::new(0),
        });
        let oracle = CachedOracle::new(backend.clone());
        let ledger = ApiLedger::new(10).with_cap(1);
        oracle.query(&Example::new("a", vec![1.0], 0), &ledger).unwrap();
        let err = oracle.query(&Example::new("b", vec![1.0], 0), &ledger).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrent_misses_count_once() {
        let backend = Arc::new(Counting {
            calls: AtomicUsize::new(0),
        });
        let oracle = Arc::new(CachedOracle::new(backend));
        let ledger = Arc::new(ApiLedger::new(10));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (o, l) = (oracle.clone(), ledger.clone());
                std::thread::spawn(move || {
                    for i in 0..5 {
                        o.query(&Example::new(format!("id{i}"), vec![i as f64], 0), &l).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(ledger.unique_count(), 5);
        assert_eq!(oracle.cache().len(), 5);
    }
}
