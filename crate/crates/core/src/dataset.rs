//! Integrated feature table keyed by (participant, passage, sentence).
//!
//! Column order is fixed: the EEG band powers (channel-major, band-minor),
//! then the five syntactic features, then the optional self-rated
//! confusion column.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::nlp::NLP_FEATURE_NAMES;
use crate::standardize::Standardizer;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate key {0}")]
    DuplicateKey(RowKey),
    #[error("no confusion ratings present")]
    NoRatings,
    #[error("no rows carry both a confusion and a correctness label")]
    NoLabeledRows,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature width mismatch: {0}")]
    Width(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 10;
pub const CONFUSION_COLUMN: &str = "confusion_rating";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub participant_id: String,
    pub passage_id: String,
    pub sentence_id: u32,
}

impl RowKey {
    pub fn new(participant_id: impl Into<String>, passage_id: impl Into<String>, sentence_id: u32) -> Self {
        Self { participant_id: participant_id.into(), passage_id: passage_id.into(), sentence_id }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.participant_id, self.passage_id, self.sentence_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConfusionLabel {
    Confused,
    NotConfused,
}

impl ConfusionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Confused => "confused",
            Self::NotConfused => "not_confused",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Confused
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorrectLabel {
    Correct,
    Incorrect,
}

impl CorrectLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Correct => "correct",
            Self::Incorrect => "incorrect",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Correct
    }

    pub fn from_bool(correct: bool) -> Self {
        if correct { Self::Correct } else { Self::Incorrect }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub key: RowKey,
    pub eeg: Vec<f64>,
    pub nlp: Vec<f64>,
    pub confusion_rating: Option<u8>,
    pub confusion_label: Option<ConfusionLabel>,
    pub correct_label: Option<CorrectLabel>,
}

/// Which columns feed a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSet {
    Eeg,
    EegNlp,
    EegNlpCon,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Eeg, FeatureSet::EegNlp, FeatureSet::EegNlpCon];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Eeg => "EEG",
            Self::EegNlp => "EEG+NLP",
            Self::EegNlpCon => "EEG+NLP+CON",
        }
    }

    /// Accepts `eeg`, `eeg+nlp`, `eeg+nlp+con` in any case.
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eeg" => Some(Self::Eeg),
            "eeg+nlp" => Some(Self::EegNlp),
            "eeg+nlp+con" => Some(Self::EegNlpCon),
            _ => None,
        }
    }

    pub fn uses_nlp(self) -> bool {
        self != Self::Eeg
    }

    pub fn uses_confusion(self) -> bool {
        self == Self::EegNlpCon
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Sorted by key, keys unique.
    pub rows: Vec<FeatureRow>,
    pub eeg_names: Vec<String>,
    pub nlp_names: Vec<String>,
    /// Parameters of the last [`standardize_fit_transform`], `eeg ++ nlp` order.
    pub standardization: Option<Standardizer<f64>>,
}

impl Dataset {
    pub fn new(mut rows: Vec<FeatureRow>, eeg_names: Vec<String>, nlp_names: Vec<String>) -> Result<Self> {
        for r in &rows {
            if r.eeg.len() != eeg_names.len() || r.nlp.len() != nlp_names.len() {
                return Err(DatasetError::Width(format!("row {} has {}+{} values", r.key, r.eeg.len(), r.nlp.len())));
            }
            if let Some(rt) = r.confusion_rating {
                if !(RATING_MIN..=RATING_MAX).contains(&rt) {
                    return Err(DatasetError::Width(format!("rating {rt} outside 1..=10 at {}", r.key)));
                }
            }
        }
        rows.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = rows.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(DatasetError::DuplicateKey(w[0].key.clone()));
        }
        Ok(Self { rows, eeg_names, nlp_names, standardization: None })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// EEG then NLP columns.
    pub fn feature_names(&self) -> Vec<String> {
        self.eeg_names.iter().chain(&self.nlp_names).cloned().collect()
    }

    pub fn column_names(&self, set: FeatureSet) -> Vec<String> {
        let mut names = self.eeg_names.clone();
        if set.uses_nlp() {
            names.extend(self.nlp_names.iter().cloned());
        }
        if set.uses_confusion() {
            names.push(CONFUSION_COLUMN.to_string());
        }
        names
    }

    /// Whether the row has every value the feature set needs.
    pub fn row_usable(&self, i: usize, set: FeatureSet) -> bool {
        !set.uses_confusion() || self.rows[i].confusion_rating.is_some()
    }

    pub fn feature_vector(&self, i: usize, set: FeatureSet) -> Vec<f64> {
        let r = &self.rows[i];
        let mut v = r.eeg.clone();
        if set.uses_nlp() {
            v.extend_from_slice(&r.nlp);
        }
        if set.uses_confusion() {
            v.push(r.confusion_rating.map_or(f64::NAN, f64::from));
        }
        v
    }

    /// Feature matrix over the given row indices.
    pub fn matrix(&self, rows: &[usize], set: FeatureSet) -> Matrix<f64> {
        let width = self.column_names(set).len();
        let vecs: Vec<Vec<f64>> = rows.iter().map(|&i| self.feature_vector(i, set)).collect();
        Matrix::from_rows(&vecs, width)
    }

    pub fn participants(&self) -> Vec<String> {
        let mut p: Vec<String> = self.rows.iter().map(|r| r.key.participant_id.clone()).collect();
        p.dedup();
        p.sort();
        p.dedup();
        p
    }

    /// Jointly shuffles (rating, confusion label, correctness label) across
    /// rows, destroying any feature-label association.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut labels: Vec<_> =
            self.rows.iter().map(|r| (r.confusion_rating, r.confusion_label, r.correct_label)).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        for (r, (rt, cl, co)) in out.rows.iter_mut().zip(labels) {
            r.confusion_rating = rt;
            r.confusion_label = cl;
            r.correct_label = co;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EegFeatureRecord {
    pub key: RowKey,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpRecord {
    pub passage_id: String,
    pub sentence_id: u32,
    pub features: [f64; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub key: RowKey,
    pub confusion_rating: Option<u8>,
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssembleReport {
    pub rows: usize,
    pub dropped_missing_nlp: usize,
    pub responses_without_eeg: usize,
}

/// Inner join of EEG and NLP features; responses attach labels where present.
pub fn assemble(
    eeg_names: &[String],
    eeg: &[EegFeatureRecord],
    nlp: &[NlpRecord],
    responses: &[Response],
) -> Result<(Dataset, AssembleReport)> {
    let mut nlp_map: HashMap<(&str, u32), &NlpRecord> = HashMap::new();
    for r in nlp {
        if nlp_map.insert((r.passage_id.as_str(), r.sentence_id), r).is_some() {
            return Err(DatasetError::DuplicateKey(RowKey::new("*", r.passage_id.clone(), r.sentence_id)));
        }
    }
    let mut resp_map: HashMap<&RowKey, &Response> = HashMap::new();
    for r in responses {
        if resp_map.insert(&r.key, r).is_some() {
            return Err(DatasetError::DuplicateKey(r.key.clone()));
        }
    }
    let mut seen = BTreeMap::new();
    let mut report = AssembleReport::default();
    let mut rows = Vec::with_capacity(eeg.len());
    for e in eeg {
        if e.values.len() != eeg_names.len() {
            return Err(DatasetError::Width(format!("EEG record {} has {} values", e.key, e.values.len())));
        }
        if seen.insert(&e.key, ()).is_some() {
            return Err(DatasetError::DuplicateKey(e.key.clone()));
        }
        let Some(n) = nlp_map.get(&(e.key.passage_id.as_str(), e.key.sentence_id)) else {
            report.dropped_missing_nlp += 1;
            continue;
        };
        let resp = resp_map.get(&e.key);
        rows.push(FeatureRow {
            key: e.key.clone(),
            eeg: e.values.clone(),
            nlp: n.features.to_vec(),
            confusion_rating: resp.and_then(|r| r.confusion_rating),
            confusion_label: None,
            correct_label: resp.and_then(|r| r.correct).map(CorrectLabel::from_bool),
        });
    }
    report.responses_without_eeg = responses.iter().filter(|r| !seen.contains_key(&r.key)).count();
    if report.dropped_missing_nlp > 0 {
        log::info!("dropped {} rows without NLP features", report.dropped_missing_nlp);
    }
    report.rows = rows.len();
    let nlp_names = NLP_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    Ok((Dataset::new(rows, eeg_names.to_vec(), nlp_names)?, report))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

/// Ratings strictly above the median are `confused`; at or below are
/// `not_confused`. The median is global unless `per_participant`.
pub fn derive_confusion_labels(ds: &Dataset, per_participant: bool) -> Result<Dataset> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &ds.rows {
        if let Some(rt) = r.confusion_rating {
            let g = if per_participant { r.key.participant_id.as_str() } else { "" };
            groups.entry(g).or_default().push(f64::from(rt));
        }
    }
    if groups.is_empty() {
        return Err(DatasetError::NoRatings);
    }
    let medians: BTreeMap<&str, f64> = groups.into_iter().map(|(g, mut v)| (g, median(&mut v))).collect();
    let mut out = ds.clone();
    for r in &mut out.rows {
        r.confusion_label = r.confusion_rating.map(|rt| {
            let g = if per_participant { r.key.participant_id.as_str() } else { "" };
            if f64::from(rt) > medians[g] { ConfusionLabel::Confused } else { ConfusionLabel::NotConfused }
        });
    }
    Ok(out)
}

/// 2x2 cross-tabulation of confusion against correctness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KnownUnknownMatrix {
    pub confused_correct: usize,
    pub confused_incorrect: usize,
    pub notconfused_correct: usize,
    pub notconfused_incorrect: usize,
}

impl KnownUnknownMatrix {
    pub fn confused_total(&self) -> usize {
        self.confused_correct + self.confused_incorrect
    }

    pub fn notconfused_total(&self) -> usize {
        self.notconfused_correct + self.notconfused_incorrect
    }

    pub fn correct_total(&self) -> usize {
        self.confused_correct + self.notconfused_correct
    }

    pub fn incorrect_total(&self) -> usize {
        self.confused_incorrect + self.notconfused_incorrect
    }

    pub fn total(&self) -> usize {
        self.confused_total() + self.notconfused_total()
    }

    /// `[[confused/correct, confused/incorrect], [not/correct, not/incorrect]]`.
    pub fn cells(&self) -> [[usize; 2]; 2] {
        [[self.confused_correct, self.confused_incorrect], [self.notconfused_correct, self.notconfused_incorrect]]
    }

    pub fn to_csv(&self) -> String {
        format!(
            "row,correct,incorrect,total\nconfused,{},{},{}\nnot_confused,{},{},{}\ntotal,{},{},{}\n",
            self.confused_correct,
            self.confused_incorrect,
            self.confused_total(),
            self.notconfused_correct,
            self.notconfused_incorrect,
            self.notconfused_total(),
            self.correct_total(),
            self.incorrect_total(),
            self.total()
        )
    }
}

impl fmt::Display for KnownUnknownMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>9}{:>11}{:>8}", "", "Correct", "Incorrect", "TOTAL")?;
        writeln!(f, "{:<14}{:>9}{:>11}{:>8}", "Confused", self.confused_correct, self.confused_incorrect, self.confused_total())?;
        writeln!(
            f,
            "{:<14}{:>9}{:>11}{:>8}",
            "Not Confused",
            self.notconfused_correct,
            self.notconfused_incorrect,
            self.notconfused_total()
        )?;
        writeln!(f, "{:<14}{:>9}{:>11}{:>8}", "TOTAL", self.correct_total(), self.incorrect_total(), self.total())
    }
}

pub fn known_unknown_matrix(ds: &Dataset) -> Result<KnownUnknownMatrix> {
    let mut m = KnownUnknownMatrix::default();
    for r in &ds.rows {
        let (Some(c), Some(k)) = (r.confusion_label, r.correct_label) else { continue };
        match (c, k) {
            (ConfusionLabel::Confused, CorrectLabel::Correct) => m.confused_correct += 1,
            (ConfusionLabel::Confused, CorrectLabel::Incorrect) => m.confused_incorrect += 1,
            (ConfusionLabel::NotConfused, CorrectLabel::Correct) => m.notconfused_correct += 1,
            (ConfusionLabel::NotConfused, CorrectLabel::Incorrect) => m.notconfused_incorrect += 1,
        }
    }
    if m.total() == 0 {
        return Err(DatasetError::NoLabeledRows);
    }
    Ok(m)
}

/// Standardizes EEG and NLP columns of `apply_to` with moments of `train`.
pub fn standardize_fit_transform(train: &Dataset, apply_to: &Dataset) -> Dataset {
    let idx: Vec<usize> = (0..train.len()).collect();
    let fit = Standardizer::fit(&train.matrix(&idx, FeatureSet::EegNlp));
    let n_eeg = apply_to.eeg_names.len();
    let mut out = apply_to.clone();
    for r in &mut out.rows {
        let joined: Vec<f64> = r.eeg.iter().chain(&r.nlp).copied().collect();
        let z = fit.transform_row(&joined);
        r.eeg = z[..n_eeg].to_vec();
        r.nlp = z[n_eeg..].to_vec();
    }
    out.standardization = Some(fit);
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse { line, msg: msg.into() }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(line, format!("bad number `{s}`")))
}

fn parse_rating(s: &str, line: usize) -> Result<Option<u8>> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<u8>() {
        Ok(v) if (RATING_MIN..=RATING_MAX).contains(&v) => Ok(Some(v)),
        _ => Err(parse_err(line, format!("rating `{s}` outside 1..=10"))),
    }
}

fn header_and_rows(text: &str) -> Option<(&str, impl Iterator<Item = (usize, &str)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next()?;
    Some((header, lines))
}

pub const RESPONSES_HEADER: &str = "participant_id,passage_id,sentence_id,confusion_rating,correct";

pub fn parse_responses(text: &str) -> Result<Vec<Response>> {
    let Some((header, lines)) = header_and_rows(text) else { return Ok(Vec::new()) };
    if header.trim() != RESPONSES_HEADER {
        return Err(parse_err(1, format!("expected header `{RESPONSES_HEADER}`")));
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(parse_err(ln, "expected 5 fields"));
            }
            let sentence_id = f[2].parse().map_err(|_| parse_err(ln, "bad sentence_id"))?;
            let correct = match f[4] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(parse_err(ln, format!("correct must be 0, 1 or empty, got `{other}`"))),
            };
            Ok(Response { key: RowKey::new(f[0], f[1], sentence_id), confusion_rating: parse_rating(f[3], ln)?, correct })
        })
        .collect()
}

pub fn format_responses(responses: &[Response]) -> String {
    let mut out = format!("{RESPONSES_HEADER}\n");
    for r in responses {
        let rating = r.confusion_rating.map(|v| v.to_string()).unwrap_or_default();
        let correct = match r.correct {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(out, "{},{},{},{},{}", r.key.participant_id, r.key.passage_id, r.key.sentence_id, rating, correct);
    }
    out
}

pub fn format_eeg_features(names: &[String], records: &[EegFeatureRecord]) -> String {
    let mut out = format!("participant_id,passage_id,sentence_id,{}\n", names.join(","));
    for r in records {
        let _ = write!(out, "{},{},{}", r.key.participant_id, r.key.passage_id, r.key.sentence_id);
        for v in &r.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_eeg_features(text: &str) -> Result<(Vec<String>, Vec<EegFeatureRecord>)> {
    let Some((header, lines)) = header_and_rows(text) else { return Ok((Vec::new(), Vec::new())) };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["participant_id", "passage_id", "sentence_id"] {
        return Err(parse_err(1, "EEG feature header must start with participant_id,passage_id,sentence_id"));
    }
    let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut recs = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(parse_err(ln, format!("expected {} fields", cols.len())));
        }
        let sentence_id = f[2].parse().map_err(|_| parse_err(ln, "bad sentence_id"))?;
        let values = f[3..].iter().map(|v| parse_f64(v, ln)).collect::<Result<_>>()?;
        recs.push(EegFeatureRecord { key: RowKey::new(f[0], f[1], sentence_id), values });
    }
    Ok((names, recs))
}

pub fn format_nlp_features(records: &[NlpRecord]) -> String {
    let mut out = format!("passage_id,sentence_id,{}\n", NLP_FEATURE_NAMES.join(","));
    for r in records {
        let _ = write!(out, "{},{}", r.passage_id, r.sentence_id);
        for v in &r.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_nlp_features(text: &str) -> Result<Vec<NlpRecord>> {
    let Some((header, lines)) = header_and_rows(text) else { return Ok(Vec::new()) };
    let expected = format!("passage_id,sentence_id,{}", NLP_FEATURE_NAMES.join(","));
    if header.trim() != expected {
        return Err(parse_err(1, format!("expected header `{expected}`")));
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(parse_err(ln, "expected 7 fields"));
            }
            let sentence_id = f[1].parse().map_err(|_| parse_err(ln, "bad sentence_id"))?;
            let mut features = [0.0; 5];
            for (slot, v) in features.iter_mut().zip(&f[2..]) {
                *slot = parse_f64(v, ln)?;
            }
            Ok(NlpRecord { passage_id: f[0].to_string(), sentence_id, features })
        })
        .collect()
}

/// Persisted layout:
/// `participant_id,passage_id,sentence_id,<eeg...>,<nlp...>,confusion_rating,confusion_label,correct_label`.
/// Missing values are empty fields.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::from("participant_id,passage_id,sentence_id");
    for n in ds.eeg_names.iter().chain(&ds.nlp_names) {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",confusion_rating,confusion_label,correct_label\n");
    for r in &ds.rows {
        let _ = write!(out, "{},{},{}", r.key.participant_id, r.key.passage_id, r.key.sentence_id);
        for v in r.eeg.iter().chain(&r.nlp) {
            let _ = write!(out, ",{v}");
        }
        let rating = r.confusion_rating.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            ",{},{},{}",
            rating,
            r.confusion_label.map_or("", ConfusionLabel::as_str),
            r.correct_label.map_or("", CorrectLabel::as_str)
        );
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let Some((header, lines)) = header_and_rows(text) else {
        return Err(parse_err(1, "empty dataset file"));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.len();
    if n < 6
        || cols[..3] != ["participant_id", "passage_id", "sentence_id"]
        || cols[n - 3..] != ["confusion_rating", "confusion_label", "correct_label"]
    {
        return Err(parse_err(1, "unrecognized dataset header"));
    }
    let features = &cols[3..n - 3];
    let nlp_start = features.iter().position(|c| *c == NLP_FEATURE_NAMES[0]).unwrap_or(features.len());
    if features[nlp_start..] != NLP_FEATURE_NAMES[..features.len() - nlp_start] {
        return Err(parse_err(1, "NLP columns out of order"));
    }
    let eeg_names: Vec<String> = features[..nlp_start].iter().map(|s| s.to_string()).collect();
    let nlp_names: Vec<String> = features[nlp_start..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != n {
            return Err(parse_err(ln, format!("expected {n} fields, found {}", f.len())));
        }
        let sentence_id = f[2].parse().map_err(|_| parse_err(ln, "bad sentence_id"))?;
        let vals = f[3..n - 3].iter().map(|v| parse_f64(v, ln)).collect::<Result<Vec<_>>>()?;
        let confusion_label = match f[n - 2] {
            "" => None,
            "confused" => Some(ConfusionLabel::Confused),
            "not_confused" => Some(ConfusionLabel::NotConfused),
            other => return Err(parse_err(ln, format!("bad confusion label `{other}`"))),
        };
        let correct_label = match f[n - 1] {
            "" => None,
            "correct" => Some(CorrectLabel::Correct),
            "incorrect" => Some(CorrectLabel::Incorrect),
            other => return Err(parse_err(ln, format!("bad correctness label `{other}`"))),
        };
        rows.push(FeatureRow {
            key: RowKey::new(f[0], f[1], sentence_id),
            eeg: vals[..nlp_start].to_vec(),
            nlp: vals[nlp_start..].to_vec(),
            confusion_rating: parse_rating(f[n - 3], ln)?,
            confusion_label,
            correct_label,
        });
    }
    Dataset::new(rows, eeg_names, nlp_names)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}
