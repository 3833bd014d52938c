use std::path::Path;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleCache, OracleResponse};

/// Backend that answers from a pre-materialized cache file and never makes a
/// live call. Unknown ids are reported as an unavailable oracle.
#[derive(Debug)]
pub struct ReplayOracle {
    answers: OracleCache,
    vocab: usize,
    name: String,
}

impl ReplayOracle {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifacts(format!("oracle cache {}", path.display())));
        }
        let answers = OracleCache::open(path)?;
        let rows = answers.rows();
        let vocab = rows
            .first()
            .map(|r| r.logits.len())
            .ok_or(Error::EmptyInput("oracle cache"))?;
        if let Some(bad) = rows.iter().find(|r| r.logits.len() != vocab) {
            return Err(Error::dims(vocab, bad.logits.len()));
        }
        Ok(Self {
            answers,
            vocab,
            name: format!("replay:{}", path.display()),
        })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Oracle for ReplayOracle {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn evaluate(&self, example: &Example) -> Result<OracleResponse> {
        self.answers
            .get(&example.id)
            .ok_or_else(|| Error::OracleUnavailable(format!("id {:?} not in replay cache", example.id)))
    }

    fn model_id(&self) -> &str {
        &self.name
    }
}
