//! Survey ingestion and training-set preparation.
//!
//! A raw survey dump goes through four stages before tree training:
//! frequency filtering, per-label outlier removal, SMOTE balancing and
//! restriction to the target vocabulary. Each stage consumes a dataset and
//! returns a new one; stages can be skipped but never run backwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::neighbors::ColorIndex;
use crate::util::{fnv1a, mix_seed};

/// Lower-cases, trims and collapses internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColorSample {
    pub rgb: Rgb,
    pub label: Arc<str>,
}

impl ColorSample {
    /// Builds a sample, normalizing the label. Fails on an empty label.
    pub fn new(rgb: Rgb, label: &str) -> Result<Self> {
        let label = normalize_label(label);
        if label.is_empty() {
            return Err(Error::param("color label is empty"));
        }
        Ok(ColorSample {
            rgb,
            label: label.into(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Filtered,
    Cleaned,
    Resampled,
    Restricted,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Filtered => "filtered",
            Stage::Cleaned => "cleaned",
            Stage::Resampled => "resampled",
            Stage::Restricted => "restricted",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => Stage::Raw,
            "filtered" => Stage::Filtered,
            "cleaned" => Stage::Cleaned,
            "resampled" => Stage::Resampled,
            "restricted" => Stage::Restricted,
            other => return Err(Error::param(format!("unknown dataset stage '{other}'"))),
        })
    }
}

/// Parameters that were applied to reach the current stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tau: Option<f64>,
    pub outlier_k: Option<usize>,
    pub outlier_radius: Option<f64>,
    pub smote_k: Option<usize>,
    pub seed: Option<u64>,
}

/// An ordered collection of labeled samples tagged with its preparation stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorNameDataset {
    samples: Vec<ColorSample>,
    label_counts: BTreeMap<Arc<str>, usize>,
    stage: Stage,
    provenance: Provenance,
    malformed: usize,
}

impl ColorNameDataset {
    pub fn from_samples(samples: Vec<ColorSample>, stage: Stage) -> Self {
        let mut label_counts = BTreeMap::new();
        for s in &samples {
            *label_counts.entry(s.label.clone()).or_insert(0) += 1;
        }
        ColorNameDataset {
            samples,
            label_counts,
            stage,
            provenance: Provenance::default(),
            malformed: 0,
        }
    }

    fn derive(&self, samples: Vec<ColorSample>, stage: Stage) -> Self {
        let mut next = ColorNameDataset::from_samples(samples, stage);
        next.provenance = self.provenance.clone();
        next.malformed = self.malformed;
        next
    }

    pub fn samples(&self) -> &[ColorSample] {
        &self.samples
    }

    pub fn label_counts(&self) -> &BTreeMap<Arc<str>, usize> {
        &self.label_counts
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.label_counts.keys().map(|l| &**l)
    }

    pub fn count_of(&self, label: &str) -> usize {
        self.label_counts.get(label).copied().unwrap_or(0)
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Rows skipped while parsing the source survey.
    pub fn malformed_rows(&self) -> usize {
        self.malformed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Content hash over samples in order, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::with_capacity(self.samples.len() * 12);
        for s in &self.samples {
            buf.extend_from_slice(&s.rgb.0);
            buf.extend_from_slice(s.label.as_bytes());
            buf.push(0);
        }
        format!("{:016x}", fnv1a(&buf))
    }

    /// Seeded shuffle split into (train, held-out); `holdout` is the held-out fraction.
    pub fn split_holdout(&self, holdout: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(Error::param(format!("holdout fraction must be in [0,1), got {holdout}")));
        }
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5917));
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let n_test = (self.samples.len() as f64 * holdout).round() as usize;
        let (test_idx, train_idx) = order.split_at(n_test);
        let pick = |idx: &[usize]| {
            let mut idx = idx.to_vec();
            idx.sort_unstable();
            self.derive(idx.iter().map(|&i| self.samples[i].clone()).collect(), self.stage)
        };
        Ok((pick(train_idx), pick(test_idx)))
    }

    fn group_by_label(&self) -> BTreeMap<Arc<str>, Vec<usize>> {
        let mut groups: BTreeMap<Arc<str>, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            groups.entry(s.label.clone()).or_default().push(i);
        }
        groups
    }

    fn require_stage(&self, operation: &'static str, expected: Stage) -> Result<()> {
        if self.stage > expected {
            return Err(Error::StageOrder {
                operation,
                found: self.stage,
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetFilterParams {
    /// Fraction of samples the kept labels must cover, in (0, 1].
    pub tau: f64,
    pub outlier_k: usize,
    /// Neighborhood radius in RGB units.
    pub outlier_radius: f64,
    pub smote_k: usize,
}

impl Default for DatasetFilterParams {
    fn default() -> Self {
        DatasetFilterParams {
            tau: 0.65,
            outlier_k: 5,
            outlier_radius: 8.0,
            smote_k: 5,
        }
    }
}

impl DatasetFilterParams {
    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        if self.outlier_k < 1 {
            return Err(Error::param("outlier_k must be at least 1"));
        }
        if !(self.outlier_radius > 0.0 && self.outlier_radius.is_finite()) {
            return Err(Error::param(format!(
                "outlier_radius must be positive, got {}",
                self.outlier_radius
            )));
        }
        if self.smote_k < 1 {
            return Err(Error::param("smote_k must be at least 1"));
        }
        Ok(())
    }
}

fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("tau must be in (0, 1], got {tau}")))
    }
}

/// The vocabulary a tree is trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: BTreeSet<String>,
}

/// The eleven basic color terms of Berlin and Kay.
pub const BERLIN_KAY: [&str; 11] = [
    "black", "white", "red", "green", "yellow", "blue", "brown", "pink", "orange", "purple", "gray",
];

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: BTreeSet<String> = labels
            .into_iter()
            .map(|l| normalize_label(l.as_ref()))
            .filter(|l| !l.is_empty())
            .collect();
        if labels.is_empty() {
            return Err(Error::param("label set is empty"));
        }
        Ok(LabelSet { labels })
    }

    pub fn berlin_kay() -> Self {
        LabelSet::new(BERLIN_KAY).expect("non-empty")
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        LabelSet::new(value)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(value: LabelSet) -> Self {
        value.labels.into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Parsing

struct Interner(HashMap<String, Arc<str>>);

impl Interner {
    fn get(&mut self, label: String) -> Arc<str> {
        if let Some(a) = self.0.get(&label) {
            return a.clone();
        }
        let a: Arc<str> = label.as_str().into();
        self.0.insert(label, a.clone());
        a
    }
}

fn detect_delimiter(bytes: &[u8]) -> u8 {
    let first = bytes
        .split(|&b| b == b'\n')
        .find(|line| line.iter().any(|b| !b.is_ascii_whitespace()))
        .unwrap_or(&[]);
    if first.contains(&b'\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_channel(field: &str) -> Option<u8> {
    field.trim().parse::<i64>().ok().and_then(|v| u8::try_from(v).ok())
}

/// Reads a survey dump: one `r,g,b,label` record per line, comma or tab
/// delimited, labels optionally double-quoted. A leading header row is
/// skipped; rows with out-of-range channels or empty labels are counted in
/// [`ColorNameDataset::malformed_rows`] and dropped.
pub fn parse_survey<R: Read>(mut source: R) -> Result<ColorNameDataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let delimiter = detect_delimiter(&bytes);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::Fields)
        .from_reader(bytes.as_slice());

    let mut interner = Interner(HashMap::new());
    let mut samples = Vec::new();
    let mut malformed = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                malformed += 1;
                continue;
            }
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let channels = (
            record.get(0).and_then(parse_channel),
            record.get(1).and_then(parse_channel),
            record.get(2).and_then(parse_channel),
        );
        let (Some(r), Some(g), Some(b)) = channels else {
            let looks_like_header = row == 0
                && record
                    .get(0)
                    .is_some_and(|f| f.trim().parse::<i64>().is_err());
            if !looks_like_header {
                malformed += 1;
            }
            continue;
        };
        let raw_label = record
            .iter()
            .skip(3)
            .collect::<Vec<_>>()
            .join(",");
        let label = normalize_label(&raw_label);
        if label.is_empty() {
            malformed += 1;
            continue;
        }
        samples.push(ColorSample {
            rgb: Rgb::new(r, g, b),
            label: interner.get(label),
        });
    }

    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no valid survey rows, {malformed} malformed"
        )));
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed survey rows");
    }
    let mut dataset = ColorNameDataset::from_samples(samples, Stage::Raw);
    dataset.malformed = malformed;
    Ok(dataset)
}

pub fn read_survey_file(path: &Path) -> Result<ColorNameDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_survey(BufReader::new(file)).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Stage operations

/// Keeps the most frequent labels covering at least `tau` of all samples.
///
/// Labels are ranked by descending count (ties by name); the label whose
/// cumulative share first reaches `tau` is kept.
pub fn filter_by_frequency(d: &ColorNameDataset, tau: f64) -> Result<ColorNameDataset> {
    validate_tau(tau)?;
    d.require_stage("filter_by_frequency", Stage::Raw)?;

    let kept = most_frequent_labels(d.label_counts(), tau);
    let samples = d
        .samples
        .iter()
        .filter(|s| kept.contains(&s.label))
        .cloned()
        .collect();
    let mut out = d.derive(samples, Stage::Filtered);
    out.provenance.tau = Some(tau);
    Ok(out)
}

/// Labels making up the smallest descending-frequency prefix with coverage >= `tau`.
pub fn most_frequent_labels(counts: &BTreeMap<Arc<str>, usize>, tau: f64) -> BTreeSet<Arc<str>> {
    let total: usize = counts.values().sum();
    let mut ranked: Vec<(&Arc<str>, usize)> = counts.iter().map(|(l, &c)| (l, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut kept = BTreeSet::new();
    let mut covered = 0usize;
    for (label, count) in ranked {
        if total > 0 && covered as f64 / total as f64 >= tau - 1e-12 {
            break;
        }
        kept.insert(label.clone());
        covered += count;
    }
    kept
}

/// Per label, drops every sample with fewer than `k` other same-label samples
/// within `radius`. Labels with at most `k` samples are left as they are.
pub fn remove_outliers(d: &ColorNameDataset, k: usize, radius: f64) -> Result<ColorNameDataset> {
    if k < 1 {
        return Err(Error::param("outlier k must be at least 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param(format!("outlier radius must be positive, got {radius}")));
    }
    d.require_stage("remove_outliers", Stage::Cleaned)?;

    let groups: Vec<(Arc<str>, Vec<usize>)> = d.group_by_label().into_iter().collect();
    let dropped: Vec<Vec<usize>> = groups
        .par_iter()
        .map(|(label, members)| {
            if members.len() <= k {
                log::warn!(
                    "label '{label}' has {} samples (<= k = {k}); outlier removal skipped",
                    members.len()
                );
                return Vec::new();
            }
            let index = ColorIndex::new(members.iter().map(|&i| d.samples[i].rgb));
            let isolated: Vec<bool> = index
                .points()
                .iter()
                .map(|&p| index.count_within(p, radius) - 1 < k as u64)
                .collect();
            members
                .iter()
                .copied()
                .filter(|&i| {
                    let pos = index.position(d.samples[i].rgb).expect("indexed");
                    isolated[pos]
                })
                .collect()
        })
        .collect();

    let mut keep = vec![true; d.samples.len()];
    for i in dropped.into_iter().flatten() {
        keep[i] = false;
    }
    let samples = d
        .samples
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    let mut out = d.derive(samples, Stage::Cleaned);
    out.provenance.outlier_k = Some(k);
    out.provenance.outlier_radius = Some(radius);
    Ok(out)
}

/// SMOTE: tops every label up to the majority count with points interpolated
/// between a sample and one of its `k` nearest same-label neighbors.
pub fn resample_smote(d: &ColorNameDataset, k: usize, seed: u64) -> Result<ColorNameDataset> {
    resample_smote_for(d, k, seed, None)
}

/// Like [`resample_smote`], but only synthesizes samples for labels in
/// `only`; other labels pass through unbalanced.
///
/// The majority count is still taken over all labels and each label draws
/// from its own seeded stream, so restricting the result to `only` gives
/// exactly the samples that full resampling followed by the same
/// restriction would.
pub fn resample_smote_for(
    d: &ColorNameDataset,
    k: usize,
    seed: u64,
    only: Option<&LabelSet>,
) -> Result<ColorNameDataset> {
    if k < 1 {
        return Err(Error::param("smote k must be at least 1"));
    }
    d.require_stage("resample_smote", Stage::Cleaned)?;
    let target = d.label_counts.values().copied().max().unwrap_or(0);

    let groups: Vec<(Arc<str>, Vec<usize>)> = d
        .group_by_label()
        .into_iter()
        .filter(|(label, _)| only.is_none_or(|set| set.contains(label)))
        .collect();
    let synthetic: Vec<Vec<ColorSample>> = groups
        .par_iter()
        .map(|(label, members)| {
            let points: Vec<Rgb> = members.iter().map(|&i| d.samples[i].rgb).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(label.as_bytes())));
            smote_class(label, &points, target, k, &mut rng)
                .into_iter()
                .map(|rgb| ColorSample {
                    rgb,
                    label: label.clone(),
                })
                .collect()
        })
        .collect();

    let mut samples = d.samples.clone();
    samples.extend(synthetic.into_iter().flatten());
    let mut out = d.derive(samples, Stage::Resampled);
    out.provenance.smote_k = Some(k);
    out.provenance.seed = Some(seed);
    Ok(out)
}

fn smote_class(label: &str, points: &[Rgb], target: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Rgb> {
    let n = points.len();
    let deficit = target.saturating_sub(n);
    if deficit == 0 {
        return Vec::new();
    }
    if n == 1 {
        log::warn!("label '{label}' has a single sample; oversampling by duplication");
        return vec![points[0]; deficit];
    }

    let index = ColorIndex::new(points.iter().copied());
    let mut knn: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut out = Vec::with_capacity(deficit);
    for _ in 0..deficit {
        let base = points[rng.random_range(0..n)];
        let pos = index.position(base).expect("indexed");
        let neighbors = knn.entry(pos).or_insert_with(|| index.k_nearest(pos, k));
        let other = index.points()[neighbors[rng.random_range(0..neighbors.len())]];
        let gap: f64 = rng.random();
        let a = base.to_f64();
        let b = other.to_f64();
        out.push(Rgb::from_f64([
            a[0] + gap * (b[0] - a[0]),
            a[1] + gap * (b[1] - a[1]),
            a[2] + gap * (b[2] - a[2]),
        ]));
    }
    out
}

/// Keeps only samples whose label belongs to `labels`.
pub fn restrict_labels(d: &ColorNameDataset, labels: &LabelSet) -> Result<ColorNameDataset> {
    d.require_stage("restrict_labels", Stage::Resampled)?;
    let samples: Vec<ColorSample> = d
        .samples
        .iter()
        .filter(|s| labels.contains(&s.label))
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyDataset(
            "no sample carries a label from the requested set".into(),
        ));
    }
    Ok(d.derive(samples, Stage::Restricted))
}

// ---------------------------------------------------------------------------
// Stage files

const DATASET_MAGIC: &str = "# huesearch-dataset v1";

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Writes a stage file: a header line with stage, parameters and row count,
/// then `r,g,b,label` rows.
pub fn write_dataset<W: Write>(d: &ColorNameDataset, sink: W) -> Result<()> {
    let p = &d.provenance;
    let mut sink = std::io::BufWriter::new(sink);
    writeln!(
        sink,
        "{DATASET_MAGIC} stage={} rows={} tau={} outlier_k={} outlier_radius={} smote_k={} seed={} malformed={}",
        d.stage,
        d.samples.len(),
        opt(&p.tau),
        opt(&p.outlier_k),
        opt(&p.outlier_radius),
        opt(&p.smote_k),
        opt(&p.seed),
        d.malformed,
    )?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(sink);
    for s in &d.samples {
        writer.write_record([
            s.rgb.r().to_string().as_str(),
            s.rgb.g().to_string().as_str(),
            s.rgb.b().to_string().as_str(),
            &s.label,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(d: &ColorNameDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}

pub fn read_dataset<R: Read>(source: R) -> Result<ColorNameDataset> {
    let mut reader = BufReader::new(source);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields = header
        .trim_end()
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing dataset header".into(),
        })?;
    let mut kv: HashMap<&str, &str> = HashMap::new();
    for item in fields.split_whitespace() {
        if let Some((k, v)) = item.split_once('=') {
            kv.insert(k, v);
        }
    }
    let header_err = |message: String| Error::Parse { line: 1, message };
    let get = |key: &str| {
        kv.get(key)
            .copied()
            .ok_or_else(|| header_err(format!("header lacks '{key}'")))
    };
    fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>> {
        if v == "-" {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad header value '{v}'"),
            })
        }
    }
    let stage: Stage = get("stage")?.parse()?;
    let rows: usize = get("rows")?
        .parse()
        .map_err(|_| header_err("bad row count".into()))?;
    let provenance = Provenance {
        tau: parse_opt(get("tau")?)?,
        outlier_k: parse_opt(get("outlier_k")?)?,
        outlier_radius: parse_opt(get("outlier_radius")?)?,
        smote_k: parse_opt(get("smote_k")?)?,
        seed: parse_opt(get("seed")?)?,
    };
    let malformed = parse_opt(get("malformed")?)?.unwrap_or(0);

    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut interner = Interner(HashMap::new());
    let mut samples = Vec::with_capacity(rows);
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        if record.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let ch = |j: usize| parse_channel(&record[j]).ok_or_else(|| bad("bad channel"));
        let rgb = Rgb::new(ch(0)?, ch(1)?, ch(2)?);
        let label = normalize_label(&record[3]);
        if label.is_empty() {
            return Err(bad("empty label"));
        }
        samples.push(ColorSample {
            rgb,
            label: interner.get(label),
        });
    }
    if samples.len() != rows {
        return Err(Error::Parse {
            line: samples.len() + 2,
            message: format!("header promises {rows} rows, found {}", samples.len()),
        });
    }
    let mut d = ColorNameDataset::from_samples(samples, stage);
    d.provenance = provenance;
    d.malformed = malformed;
    Ok(d)
}

pub fn load_dataset(path: &Path) -> Result<ColorNameDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[((u8, u8, u8), &str)]) -> ColorNameDataset {
        ColorNameDataset::from_samples(
            rows.iter()
                .map(|&((r, g, b), l)| ColorSample::new(Rgb::new(r, g, b), l).unwrap())
                .collect(),
            Stage::Raw,
        )
    }

    #[test]
    fn parses_quoted_comma_rows() {
        let d = parse_survey("174,199,232,\"light blue\"\n".as_bytes()).unwrap();
        assert_eq!(d.samples()[0].rgb, Rgb::new(174, 199, 232));
        assert_eq!(&*d.samples()[0].label, "light blue");
    }

    #[test]
    fn parses_tab_rows_and_normalizes_labels() {
        let d = parse_survey("1\t2\t3\t  Light   BLUE \n4\t5\t6\tred\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(&*d.samples()[0].label, "light blue");
    }

    #[test]
    fn out_of_range_channel_is_counted_and_skipped() {
        let d = parse_survey("300,0,0,red\n1,2,3,red\n-1,0,0,red\n1,2,3,\"\"\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.malformed_rows(), 3);
    }

    #[test]
    fn header_row_is_not_malformed() {
        let d = parse_survey("r,g,b,label\n1,2,3,red\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.malformed_rows(), 0);
    }

    #[test]
    fn empty_source_is_an_error() {
        assert!(matches!(
            parse_survey("x,y\n".as_bytes()),
            Err(Error::EmptyDataset(_))
        ));
        assert!(matches!(parse_survey(&b""[..]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = read_survey_file(Path::new("/nonexistent/survey.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn unquoted_commas_in_label_are_joined() {
        let d = parse_survey("1,2,3,blue,ish\n".as_bytes()).unwrap();
        assert_eq!(&*d.samples()[0].label, "blue,ish");
    }

    #[test]
    fn frequency_filter_toy_counts() {
        let mut rows = vec![((0, 0, 0), "a"); 6];
        rows.extend(vec![((0, 0, 0), "b"); 3]);
        rows.push(((0, 0, 0), "c"));
        let d = ds(&rows);
        let f = filter_by_frequency(&d, 0.6).unwrap();
        assert_eq!(f.labels().collect::<Vec<_>>(), vec!["a"]);
        assert_eq!(f.len(), 6);
        let f = filter_by_frequency(&d, 0.61).unwrap();
        assert_eq!(f.labels().collect::<Vec<_>>(), vec!["a", "b"]);
        let full = filter_by_frequency(&d, 1.0).unwrap();
        assert_eq!(full.samples(), d.samples());
    }

    #[test]
    fn frequency_filter_rejects_bad_tau() {
        let d = ds(&[((0, 0, 0), "a")]);
        assert!(filter_by_frequency(&d, 0.0).is_err());
        assert!(filter_by_frequency(&d, 1.5).is_err());
        assert!(filter_by_frequency(&d, -0.1).is_err());
    }

    #[test]
    fn stages_cannot_run_backwards() {
        let d = ds(&[((0, 0, 0), "a"), ((1, 1, 1), "a")]);
        let l = LabelSet::new(["a"]).unwrap();
        let restricted = restrict_labels(&d, &l).unwrap();
        assert!(matches!(
            filter_by_frequency(&restricted, 1.0),
            Err(Error::StageOrder { .. })
        ));
        assert!(resample_smote(&restricted, 3, 0).is_err());
    }

    #[test]
    fn lone_white_point_is_an_outlier() {
        let mut rows = vec![((0, 0, 0), "x"); 10];
        rows.push(((255, 255, 255), "x"));
        let d = ds(&rows);
        let c = remove_outliers(&d, 3, 10.0).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.samples().iter().all(|s| s.rgb == Rgb::BLACK));
        assert_eq!(c.stage(), Stage::Cleaned);
    }

    #[test]
    fn identical_points_survive_outlier_removal() {
        let d = ds(&vec![((10, 20, 30), "x"); 100]);
        let c = remove_outliers(&d, 5, 1.0).unwrap();
        assert_eq!(c.len(), 100);
    }

    #[test]
    fn small_classes_are_left_untouched() {
        let d = ds(&[((0, 0, 0), "x"), ((200, 0, 0), "x"), ((0, 0, 0), "y")]);
        let c = remove_outliers(&d, 5, 1.0).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn outlier_removal_on_empty_dataset() {
        let d = ColorNameDataset::from_samples(Vec::new(), Stage::Filtered);
        assert!(remove_outliers(&d, 5, 8.0).unwrap().is_empty());
    }

    #[test]
    fn smote_balances_and_stays_on_segments() {
        let d = ds(&[
            ((0, 0, 0), "a"),
            ((1, 1, 1), "a"),
            ((2, 2, 2), "a"),
            ((3, 3, 3), "a"),
            ((10, 20, 30), "b"),
            ((50, 100, 150), "b"),
        ]);
        let r = resample_smote(&d, 5, 7).unwrap();
        assert_eq!(r.count_of("a"), 4);
        assert_eq!(r.count_of("b"), 4);
        for s in &r.samples()[6..] {
            assert_eq!(&*s.label, "b");
            // the two b-points span a line with direction (40, 80, 120)
            let t = (f64::from(s.rgb.r()) - 10.0) / 40.0;
            assert!((-0.02..=1.02).contains(&t));
            assert!((f64::from(s.rgb.g()) - (20.0 + 80.0 * t)).abs() <= 1.0);
            assert!((f64::from(s.rgb.b()) - (30.0 + 120.0 * t)).abs() <= 1.5);
        }
    }

    #[test]
    fn smote_on_balanced_data_is_identity() {
        let d = ds(&[((0, 0, 0), "a"), ((9, 9, 9), "b")]);
        let r = resample_smote(&d, 3, 1).unwrap();
        assert_eq!(r.samples(), d.samples());
    }

    #[test]
    fn smote_degenerate_segment_and_singleton() {
        let mut rows = vec![((0, 0, 0), "a"); 5];
        rows.push(((40, 40, 40), "b"));
        rows.push(((40, 40, 40), "b"));
        rows.push(((9, 8, 7), "c"));
        let r = resample_smote(&ds(&rows), 3, 3).unwrap();
        for s in r.samples() {
            match &*s.label {
                "b" => assert_eq!(s.rgb, Rgb::new(40, 40, 40)),
                "c" => assert_eq!(s.rgb, Rgb::new(9, 8, 7)),
                _ => {}
            }
        }
        assert_eq!(r.count_of("c"), 5);
    }

    #[test]
    fn restricted_smote_matches_full_then_restrict() {
        let rows: Vec<((u8, u8, u8), &str)> = (0..60u8)
            .map(|i| {
                let label = ["red", "blue", "teal", "gray"][usize::from(i % 4)];
                let n = if label == "teal" { i } else { i / 3 };
                ((n, i.wrapping_mul(7), 255 - i), label)
            })
            .chain((0..20u8).map(|i| ((i, i, i), "teal")))
            .collect();
        let d = ds(&rows);
        let l = LabelSet::new(["red", "gray"]).unwrap();
        let full = restrict_labels(&resample_smote(&d, 3, 11).unwrap(), &l).unwrap();
        let fast = restrict_labels(&resample_smote_for(&d, 3, 11, Some(&l)).unwrap(), &l).unwrap();
        assert_eq!(full.samples(), fast.samples());
    }

    #[test]
    fn restrict_to_missing_labels_is_an_error() {
        let d = ds(&[((0, 0, 0), "a")]);
        let l = LabelSet::new(["red"]).unwrap();
        assert!(matches!(restrict_labels(&d, &l), Err(Error::EmptyDataset(_))));
        let l = LabelSet::new(["a"]).unwrap();
        assert_eq!(restrict_labels(&d, &l).unwrap().samples(), d.samples());
    }

    #[test]
    fn label_set_rejects_empty() {
        assert!(LabelSet::new(Vec::<String>::new()).is_err());
        assert!(LabelSet::new(["  "]).is_err());
        assert_eq!(LabelSet::berlin_kay().len(), 11);
    }

    #[test]
    fn stage_file_round_trip() {
        let d = ds(&[((1, 2, 3), "light, blue"), ((4, 5, 6), "red")]);
        let f = filter_by_frequency(&d, 1.0).unwrap();
        let mut buf = Vec::new();
        write_dataset(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# huesearch-dataset v1 stage=filtered rows=2 tau=1 "));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_stage_file_is_rejected() {
        let d = ds(&[((1, 2, 3), "a"), ((4, 5, 6), "b")]);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let cut = buf.len() - 8;
        assert!(read_dataset(&buf[..cut]).is_err());
    }

    #[test]
    fn holdout_split_partitions_samples() {
        let rows: Vec<_> = (0..100u8).map(|i| ((i, 0, 0), "a")).collect();
        let d = ds(&rows);
        let (train, test) = d.split_holdout(0.1, 3).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(test.len(), 10);
        let (train2, _) = d.split_holdout(0.1, 3).unwrap();
        assert_eq!(train, train2);
    }
}
