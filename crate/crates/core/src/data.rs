//! Shared domain types: examples, datasets, logit vectors, LogitMap pairs and
//! the oracle query ledger.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Deref;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

real_vector!(
    /// Feature representation of an input, dimension `d`.
    Embedding
);

real_vector!(
    /// Pre-softmax scores over `V` classes.
    LogitVector
);

impl LogitVector {
    /// Index of the largest entry; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub embedding: Embedding,
    pub label: usize,
}

impl Example {
    pub fn new(id: impl Into<String>, features: Vec<f64>, label: usize) -> Self {
        Self {
            id: id.into(),
            embedding: Embedding(features),
            label,
        }
    }
}

/// Maps an example to the vector used for input distances and GP inputs.
pub trait Embedder: Send + Sync {
    fn embed(&self, example: &Example) -> Embedding;
}

/// Uses the stored feature vector unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEmbedder;

impl Embedder for IdentityEmbedder {
    fn embed(&self, example: &Example) -> Embedding {
        example.embedding.clone()
    }
}

/// An ordered, validated collection of examples sharing `dim` and `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    /// Validates ids, feature dimensions, finiteness and labels.
    pub fn new(examples: Vec<Example>, num_classes: usize, dim: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for (row, ex) in examples.iter().enumerate() {
            if ex.embedding.len() != dim {
                return Err(Error::dims(dim, ex.embedding.len()));
            }
            if !ex.embedding.is_finite() {
                return Err(Error::NonFiniteInput("example features"));
            }
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    num_classes,
                });
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::parse(format!("row {row}"), format!("duplicate id {:?}", ex.id)));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            dim,
        })
    }

    /// Infers `dim` from the first example and `num_classes` from the largest label.
    pub fn from_examples(examples: Vec<Example>) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyInput("dataset"))?;
        let dim = first.embedding.len();
        let num_classes = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
        Self::new(examples, num_classes, dim)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// A new dataset holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Self::new(examples, self.num_classes, self.dim)
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyInput("dataset"))
        } else {
            Ok(())
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// One (embedding, oracle logits) record of the GP training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitMapPair {
    #[serde(rename = "id")]
    pub example_id: String,
    pub embedding: Embedding,
    pub oracle_logits: LogitVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogitMapSet {
    pairs: Vec<LogitMapPair>,
}

impl LogitMapSet {
    pub fn new(pairs: Vec<LogitMapPair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut width = None;
        for p in &pairs {
            if !seen.insert(p.example_id.as_str()) {
                return Err(Error::parse("logitmap", format!("duplicate id {:?}", p.example_id)));
            }
            let v = p.oracle_logits.len();
            match width {
                None => width = Some(v),
                Some(w) if w != v => return Err(Error::dims(w, v)),
                _ => {}
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[LogitMapPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.pairs.iter())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Self::Jsonl),
            Some("csv") => Ok(Self::Csv),
            other => Err(Error::UnsupportedFormat(format!("{other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    id: String,
    features: Vec<f64>,
    label: i64,
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    num_classes: usize,
    dim: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonlRecord {
    Row(JsonlRow),
    Header(JsonlHeader),
}

fn to_label(raw: i64, location: impl FnOnce() -> String) -> Result<usize> {
    usize::try_from(raw).map_err(|_| Error::parse(location(), format!("negative label {raw}")))
}

fn assemble(examples: Vec<Example>, header: Option<JsonlHeader>) -> Result<Dataset> {
    match header {
        Some(h) => Dataset::new(examples, h.num_classes, h.dim),
        None => Dataset::from_examples(examples),
    }
}

/// Reads a dataset from JSONL (`{"id", "features", "label"}` per line, with an
/// optional leading `{"num_classes", "dim"}` header) or CSV (`id,f0..,label`).
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Jsonl => load_jsonl(path),
        DatasetFormat::Csv => load_csv(path),
    }
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut examples = Vec::new();
    let mut dim = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), n + 1);
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::parse(loc(), e))?;
        match record {
            JsonlRecord::Header(h) if examples.is_empty() && header.is_none() => {
                dim = Some(h.dim);
                header = Some(h);
            }
            JsonlRecord::Header(_) => return Err(Error::parse(loc(), "header must be the first record")),
            JsonlRecord::Row(row) => {
                let expected = *dim.get_or_insert(row.features.len());
                if row.features.len() != expected {
                    return Err(Error::dims(expected, row.features.len()));
                }
                let label = to_label(row.label, loc)?;
                examples.push(Example::new(row.id, row.features, label));
            }
        }
    }
    assemble(examples, header)
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let width = headers.len();
    if width < 3 || &headers[0] != "id" || &headers[width - 1] != "label" {
        return Err(Error::parse(
            path.display().to_string(),
            "expected header id,f0..f{d-1},label",
        ));
    }
    let dim = width - 2;
    let mut examples = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let loc = || format!("{}:{}", path.display(), n + 2);
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => Error::dims(dim, (*len as usize).saturating_sub(2)),
            _ => Error::parse(loc(), &e),
        })?;
        let features = record
            .iter()
            .skip(1)
            .take(dim)
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::parse(loc(), e)))
            .collect::<Result<Vec<_>>>()?;
        let raw: i64 = record[width - 1].trim().parse().map_err(|e| Error::parse(loc(), e))?;
        examples.push(Example::new(&record[0], features, to_label(raw, loc)?));
    }
    assemble(examples, None)
}

/// Writes a dataset in the given format. JSONL output carries a header record
/// so `num_classes` survives a round trip even when some class is absent.
pub fn save_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Jsonl => {
            let mut out = BufWriter::new(File::create(path)?);
            let header = JsonlHeader {
                num_classes: dataset.num_classes,
                dim: dataset.dim,
            };
            serde_json::to_writer(&mut out, &header)?;
            out.write_all(b"\n")?;
            for ex in dataset {
                let row = JsonlRow {
                    id: ex.id.clone(),
                    features: ex.embedding.0.clone(),
                    label: ex.label as i64,
                };
                serde_json::to_writer(&mut out, &row)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        DatasetFormat::Csv => {
            let mut writer = csv::Writer::from_path(path)?;
            let mut header = vec!["id".to_string()];
            header.extend((0..dataset.dim).map(|i| format!("f{i}")));
            header.push("label".into());
            writer.write_record(&header)?;
            for ex in dataset {
                let mut rec = vec![ex.id.clone()];
                rec.extend(ex.embedding.iter().map(|v| v.to_string()));
                rec.push(ex.label.to_string());
                writer.write_record(&rec)?;
            }
            writer.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct LedgerState {
    seen: HashSet<String>,
    order: Vec<String>,
    total: u64,
}

/// Append-only record of unique oracle queries.
///
/// Usage is the number of distinct example ids sent to the oracle divided by
/// the dataset size; repeated requests for a known id only bump
/// `total_requests`. Internally synchronized.
#[derive(Debug)]
pub struct ApiLedger {
    state: Mutex<LedgerState>,
    denominator: usize,
    cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub unique: usize,
    pub total: u64,
    pub denominator: usize,
    pub fraction: f64,
}

impl ApiLedger {
    pub fn new(denominator: usize) -> Self {
        Self {
            state: Mutex::new(LedgerState::default()),
            denominator,
            cap: None,
        }
    }

    /// Hard limit on unique ids; a fresh id beyond it fails with `BudgetExceeded`.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn denominator(&self) -> usize {
        self.denominator
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LedgerState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Counts one request, whether or not it reaches the backend.
    pub fn note_request(&self) {
        self.lock().total += 1;
    }

    /// Fails if `id` is new and the cap is already reached.
    pub fn check_budget(&self, id: &str) -> Result<()> {
        let state = self.lock();
        match self.cap {
            Some(cap) if state.seen.len() >= cap && !state.seen.contains(id) => {
                Err(Error::BudgetExceeded(format!("cap of {cap} unique ids reached")))
            }
            _ => Ok(()),
        }
    }

    /// Records `id` as queried. Returns `true` when the id was new.
    pub fn record(&self, id: &str) -> Result<bool> {
        let mut state = self.lock();
        if state.seen.contains(id) {
            return Ok(false);
        }
        if let Some(cap) = self.cap {
            if state.seen.len() >= cap {
                return Err(Error::BudgetExceeded(format!("cap of {cap} unique ids reached")));
            }
        }
        state.seen.insert(id.to_string());
        state.order.push(id.to_string());
        Ok(true)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lock().seen.contains(id)
    }

    pub fn unique_count(&self) -> usize {
        self.lock().seen.len()
    }

    pub fn total_requests(&self) -> u64 {
        self.lock().total
    }

    /// Unique ids in first-query order.
    pub fn timeline(&self) -> Vec<String> {
        self.lock().order.clone()
    }

    pub fn usage_fraction(&self) -> Result<f64> {
        usage_fraction(self.unique_count(), self.denominator)
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let state = self.lock();
        let unique = state.seen.len();
        LedgerSnapshot {
            unique,
            total: state.total,
            denominator: self.denominator,
            fraction: usage_fraction(unique, self.denominator).unwrap_or(0.0),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, &self.snapshot())?;
        Ok(())
    }
}

/// `unique / denominator`.
pub fn usage_fraction(unique: usize, denominator: usize) -> Result<f64> {
    if denominator == 0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(unique as f64 / denominator as f64)
}

/// A usage fraction rendered to four decimal places.
pub struct Fraction(pub f64);

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_fraction_examples() {
        assert_eq!(Fraction(usage_fraction(28, 2000).unwrap()).to_string(), "0.0140");
        assert_eq!(usage_fraction(0, 500).unwrap(), 0.0);
        assert!(matches!(usage_fraction(3, 0), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn full_sweep_is_exactly_one() {
        let ledger = ApiLedger::new(40);
        for epoch in 0..3 {
            for i in 0..40 {
                ledger.note_request();
                let fresh = ledger.record(&format!("ex{i}")).unwrap();
                assert_eq!(fresh, epoch == 0);
            }
        }
        assert_eq!(ledger.usage_fraction().unwrap(), 1.0);
        assert_eq!(ledger.total_requests(), 120);
    }

    #[test]
    fn ledger_cap_blocks_only_fresh_ids() {
        let ledger = ApiLedger::new(10).with_cap(2);
        ledger.record("a").unwrap();
        ledger.record("b").unwrap();
        assert!(ledger.record("a").is_ok());
        assert!(ledger.check_budget("b").is_ok());
        assert!(matches!(ledger.record("c"), Err(Error::BudgetExceeded(_))));
        assert!(matches!(ledger.check_budget("c"), Err(Error::BudgetExceeded(_))));
        assert_eq!(ledger.unique_count(), 2);
    }

    #[test]
    fn ledger_snapshot_json_shape() {
        let ledger = ApiLedger::new(4);
        ledger.record("x").unwrap();
        ledger.note_request();
        let json = serde_json::to_value(ledger.snapshot()).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"unique": 1, "total": 1, "denominator": 4, "fraction": 0.25})
        );
    }

    #[test]
    fn concurrent_records_count_once() {
        let ledger = std::sync::Arc::new(ApiLedger::new(100));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let l = ledger.clone();
                std::thread::spawn(move || {
                    for i in 0..50 {
                        l.record(&format!("id{i}")).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(ledger.unique_count(), 50);
    }

    #[test]
    fn dataset_validation() {
        let ok = Dataset::from_examples(vec![
            Example::new("a", vec![0.0, 1.0], 0),
            Example::new("b", vec![1.0, 1.0], 1),
        ])
        .unwrap();
        assert_eq!((ok.len(), ok.dim(), ok.num_classes()), (2, 2, 2));
        let ragged = Dataset::from_examples(vec![
            Example::new("a", vec![0.0, 1.0], 0),
            Example::new("b", vec![1.0], 1),
        ]);
        assert!(matches!(
            ragged,
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        let dup = Dataset::from_examples(vec![Example::new("a", vec![0.0], 0), Example::new("a", vec![1.0], 0)]);
        assert!(matches!(dup, Err(Error::Parse { .. })));
        let label = Dataset::new(vec![Example::new("a", vec![0.0], 3)], 2, 1);
        assert!(matches!(
            label,
            Err(Error::LabelOutOfRange {
                label: 3,
                num_classes: 2
            })
        ));
    }

    #[test]
    fn argmax_prefers_first_on_tie() {
        assert_eq!(LogitVector(vec![1.0, 3.0, 3.0]).argmax(), 1);
    }
}
