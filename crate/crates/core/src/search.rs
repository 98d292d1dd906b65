//! Per-identity part colors, attribute queries and region-level scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::region::{ClassVocabulary, PoolingMode};
use crate::tree::DecisionTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartDetail {
    pub rgb: Rgb,
    pub ranked: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub frames: Vec<String>,
    pub pooling: PoolingMode,
}

/// Color labels of one identity, keyed by part class name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: String,
    pub parts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, PartDetail>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<RecordProvenance>,
}

impl PersonRecord {
    /// A record carrying only labels, as used for ground truth.
    pub fn labels_only<I, C, L>(id: impl Into<String>, parts: I) -> Self
    where
        I: IntoIterator<Item = (C, L)>,
        C: Into<String>,
        L: Into<String>,
    {
        PersonRecord {
            id: id.into(),
            parts: parts.into_iter().map(|(c, l)| (c.into(), l.into())).collect(),
            details: BTreeMap::new(),
            provenance: None,
        }
    }
}

/// Classifies each pooled part color; parts absent from `parts` stay absent.
pub fn build_record(
    id: &str,
    parts: &BTreeMap<String, Rgb>,
    tree: &DecisionTree,
    provenance: Option<RecordProvenance>,
) -> Result<PersonRecord> {
    if parts.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut labels = BTreeMap::new();
    let mut details = BTreeMap::new();
    for (class, &rgb) in parts {
        let prediction = tree.classify(rgb);
        labels.insert(class.clone(), prediction.label().to_string());
        details.insert(
            class.clone(),
            PartDetail {
                rgb,
                ranked: prediction.ranked,
            },
        );
    }
    Ok(PersonRecord {
        id: id.to_string(),
        parts: labels,
        details,
        provenance,
    })
}

/// Terms a query may use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchVocabulary {
    pub classes: BTreeSet<String>,
    pub labels: BTreeSet<String>,
}

impl SearchVocabulary {
    pub fn new(classes: &ClassVocabulary, tree: &DecisionTree) -> Self {
        SearchVocabulary {
            classes: classes.names().iter().cloned().collect(),
            labels: tree.labels().iter().cloned().collect(),
        }
    }

    /// Every class and label that appears in `records`.
    pub fn from_records(records: &[PersonRecord]) -> Self {
        let mut v = SearchVocabulary::default();
        for r in records {
            for (c, l) in &r.parts {
                v.classes.insert(c.clone());
                v.labels.insert(l.clone());
            }
        }
        v
    }
}

/// A conjunction of `class = color` predicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    predicates: Vec<(String, String)>,
}

impl Query {
    pub fn new<I, C, L>(predicates: I) -> Result<Self>
    where
        I: IntoIterator<Item = (C, L)>,
        C: Into<String>,
        L: Into<String>,
    {
        let predicates: Vec<(String, String)> = predicates
            .into_iter()
            .map(|(c, l)| (c.into(), crate::survey::normalize_label(&l.into())))
            .collect();
        if predicates.is_empty() {
            return Err(Error::Query("query has no predicates".into()));
        }
        let mut seen = BTreeSet::new();
        for (class, label) in &predicates {
            if class.is_empty() || label.is_empty() {
                return Err(Error::Query(format!("empty term in '{class}={label}'")));
            }
            if !seen.insert(class.as_str()) {
                return Err(Error::Query(format!("class '{class}' appears twice")));
            }
        }
        Ok(Query { predicates })
    }

    /// Parses space-separated `class=color` predicates, e.g. `upper=red lower=blue`.
    /// Underscores in a color stand for spaces (`upper=light_blue`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut predicates = Vec::new();
        for token in text.split_whitespace() {
            let (class, color) = token
                .split_once('=')
                .ok_or_else(|| Error::Query(format!("'{token}' is not of the form class=color")))?;
            predicates.push((class.to_string(), color.replace('_', " ")));
        }
        Query::new(predicates)
    }

    pub fn predicates(&self) -> &[(String, String)] {
        &self.predicates
    }

    pub fn validate(&self, vocabulary: &SearchVocabulary) -> Result<()> {
        for (class, label) in &self.predicates {
            if !vocabulary.classes.contains(class) {
                return Err(Error::Query(format!("unknown class '{class}'")));
            }
            if !vocabulary.labels.contains(label) {
                return Err(Error::Query(format!("unknown color '{label}'")));
            }
        }
        Ok(())
    }

    pub fn matches(&self, record: &PersonRecord) -> bool {
        self.predicates
            .iter()
            .all(|(class, label)| record.parts.get(class) == Some(label))
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .predicates
            .iter()
            .map(|(c, l)| format!("{c}={}", l.replace(' ', "_")))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Ids of the records satisfying every predicate, ascending and deduplicated.
pub fn search(query: &Query, db: &[PersonRecord], vocabulary: &SearchVocabulary) -> Result<Vec<String>> {
    query.validate(vocabulary)?;
    let ids: BTreeSet<&str> = db
        .iter()
        .filter(|r| query.matches(r))
        .map(|r| r.id.as_str())
        .collect();
    Ok(ids.into_iter().map(str::to_string).collect())
}

/// Record database with one writer and lock-free-in-practice readers: a
/// reader clones the current snapshot `Arc`; a writer builds the next
/// snapshot and swaps it in whole.
#[derive(Debug, Default)]
pub struct RecordStore {
    current: RwLock<Arc<Vec<PersonRecord>>>,
}

impl RecordStore {
    pub fn new(records: Vec<PersonRecord>) -> Self {
        RecordStore {
            current: RwLock::new(Arc::new(records)),
        }
    }

    pub fn snapshot(&self) -> Arc<Vec<PersonRecord>> {
        self.current.read().expect("record store poisoned").clone()
    }

    /// Appends a batch, replacing records whose id is already present.
    pub fn publish(&self, batch: Vec<PersonRecord>) {
        let mut guard = self.current.write().expect("record store poisoned");
        let mut next: Vec<PersonRecord> = (**guard).clone();
        for record in batch {
            match next.iter_mut().find(|r| r.id == record.id) {
                Some(slot) => *slot = record,
                None => next.push(record),
            }
        }
        *guard = Arc::new(next);
    }
}

pub fn write_records<W: Write>(records: &[PersonRecord], mut sink: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: Read>(source: R) -> Result<Vec<PersonRecord>> {
    let reader = std::io::BufReader::new(source);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<PersonRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file)
}

pub fn save_records(records: &[PersonRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}

/// Appends records to a database file, creating it if needed.
pub fn append_records(records: &[PersonRecord], path: &Path) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut sink = std::io::BufWriter::new(file);
    write_records(records, &mut sink)?;
    sink.flush().map_err(|e| Error::io(path, e))
}

/// Ground truth as `identity,class,label` rows (optional header).
pub fn read_truth_csv<R: Read>(source: R) -> Result<Vec<PersonRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut by_id: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i == 0 && record.get(0) == Some("identity") {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected identity,class,label".into(),
            });
        }
        by_id
            .entry(record[0].to_string())
            .or_default()
            .insert(record[1].to_string(), crate::survey::normalize_label(&record[2]));
    }
    Ok(by_id
        .into_iter()
        .map(|(id, parts)| PersonRecord::labels_only(id, parts))
        .collect())
}

pub fn load_truth_csv(path: &Path) -> Result<Vec<PersonRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth_csv(file)
}

/// Renames part classes between datasets (`from,to` rows).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassMapping {
    map: BTreeMap<String, String>,
}

impl ClassMapping {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected from,to".into(),
            })?;
            map.insert(from.trim().to_string(), to.trim().to_string());
        }
        Ok(ClassMapping { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassMapping::parse(&text)
    }

    pub fn apply(&self, records: &mut [PersonRecord]) {
        for r in records {
            r.parts = std::mem::take(&mut r.parts)
                .into_iter()
                .map(|(c, l)| (self.map.get(&c).cloned().unwrap_or(c), l))
                .collect();
        }
    }
}

/// Label used in confusion columns for regions with no prediction.
pub const NO_PREDICTION: &str = "(none)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Predicted regions without ground truth, left out of every count.
    pub unscored: usize,
    /// TP / (TP + FP); zero when nothing was predicted.
    pub ras: f64,
    /// TP / (TP + FN); zero when there is no ground truth.
    pub recall: f64,
    /// Row and column labels; columns add [`NO_PREDICTION`] at the end.
    pub labels: Vec<String>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for l in self.labels.iter().map(String::as_str).chain([NO_PREDICTION]) {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RAS     {:>6.1}", self.ras * 100.0)?;
        writeln!(f, "recall  {:>6.1}", self.recall * 100.0)?;
        writeln!(f, "TP {}  FP {}  FN {}  unscored {}", self.tp, self.fp, self.fn_, self.unscored)?;
        if self.labels.is_empty() {
            return Ok(());
        }
        let width = self
            .labels
            .iter()
            .map(String::len)
            .chain([NO_PREDICTION.len(), 5])
            .max()
            .unwrap_or(5);
        write!(f, "{:>width$}", "truth")?;
        for l in self.labels.iter().map(String::as_str).chain([NO_PREDICTION]) {
            write!(f, " {l:>width$}")?;
        }
        writeln!(f)?;
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            write!(f, "{label:>width$}")?;
            for v in row {
                write!(f, " {v:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Region-level scoring of predicted part labels against ground truth.
///
/// For each (identity, class) with ground truth: a matching prediction is a
/// true positive; a different label counts one false positive and one false
/// negative; no prediction is a false negative.
pub fn evaluate(predictions: &[PersonRecord], truth: &[PersonRecord]) -> Result<EvaluationReport> {
    let index = |records: &[PersonRecord], what: &str| -> Result<BTreeMap<String, usize>> {
        let mut map = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if map.insert(r.id.clone(), i).is_some() {
                return Err(Error::Other(format!("duplicate {what} identity '{}'", r.id)));
            }
        }
        Ok(map)
    };
    let pred_ids = index(predictions, "predicted")?;
    let truth_ids = index(truth, "ground-truth")?;
    let orphans: Vec<String> = pred_ids
        .keys()
        .filter(|id| !truth_ids.contains_key(*id))
        .map(|id| format!("{id} (no ground truth)"))
        .chain(
            truth_ids
                .keys()
                .filter(|id| !pred_ids.contains_key(*id))
                .map(|id| format!("{id} (no prediction)")),
        )
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Orphans(orphans));
    }

    let mut labels = BTreeSet::new();
    for r in predictions.iter().chain(truth) {
        labels.extend(r.parts.values().cloned());
    }
    let labels: Vec<String> = labels.into_iter().collect();
    let col = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).unwrap();
    let none_col = labels.len();
    let mut confusion = vec![vec![0usize; labels.len() + 1]; labels.len()];

    let (mut tp, mut fp, mut fn_, mut unscored) = (0, 0, 0, 0);
    for (id, &ti) in &truth_ids {
        let t = &truth[ti];
        let p = &predictions[pred_ids[id]];
        for (class, truth_label) in &t.parts {
            let row = col(truth_label);
            match p.parts.get(class) {
                Some(pred) if pred == truth_label => {
                    tp += 1;
                    confusion[row][row] += 1;
                }
                Some(pred) => {
                    fp += 1;
                    fn_ += 1;
                    confusion[row][col(pred)] += 1;
                }
                None => {
                    fn_ += 1;
                    confusion[row][none_col] += 1;
                }
            }
        }
        unscored += p.parts.keys().filter(|c| !t.parts.contains_key(*c)).count();
    }

    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvaluationReport {
        tp,
        fp,
        fn_,
        unscored,
        ras: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        labels,
        confusion,
    })
}
