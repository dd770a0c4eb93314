//! Stacked ensembles, grouped cross-validation, nested grid search and the
//! two evaluation tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::balance::{self, BalanceError, LabelSpreadConfig};
use crate::dataset::{self, Dataset, DatasetError, FeatureSet};
use crate::learners::{
    GbtConfig, LearnerConfig, LearnerError, LearnerKind, LrConfig, Model, ProbClassifier, RfConfig, SvmConfig,
};
use crate::matrix::Matrix;
use crate::scalar::{derive_seed, Real};
use crate::standardize::Standardizer;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("need at least {needed} samples per class, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("{groups} groups cannot fill {k} folds")]
    TooFewGroups { groups: usize, k: usize },
    #[error("feature set {set} is not allowed for the {task} task")]
    InvalidFeatureSet { set: FeatureSet, task: Task },
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("test fold {0} changed during training")]
    Leakage(usize),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("stack text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Correctness,
    Confusion,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Correctness, Task::Confusion];

    pub fn name(self) -> &'static str {
        match self {
            Self::Correctness => "correctness",
            Self::Confusion => "confusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Lr,
    Rf,
    Svm,
    Stack,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lr, Method::Rf, Method::Svm, Method::Stack];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Rf => "rf",
            Self::Svm => "svm",
            Self::Stack => "stack",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Lr => "LR",
            Self::Rf => "RF",
            Self::Svm => "SVM",
            Self::Stack => "Stack",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    fn learner(self) -> Option<LearnerKind> {
        match self {
            Self::Lr => Some(LearnerKind::Lr),
            Self::Rf => Some(LearnerKind::Rf),
            Self::Svm => Some(LearnerKind::Svm),
            Self::Stack => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------- metrics

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl BinaryCounts {
    pub fn from_predictions(truth: &[bool], pred: &[bool]) -> Self {
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Positive-class F1; 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

pub fn f1_score(truth: &[bool], pred: &[bool]) -> f64 {
    BinaryCounts::from_predictions(truth, pred).f1()
}

// ------------------------------------------------------------------ folds

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupFold {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Distinct participants (sorted first, so the input order is irrelevant)
/// shuffled by `seed` and dealt round-robin into `k` test folds.
pub fn grouped_kfold(participants: &[String], k: usize, seed: u64) -> Result<Vec<GroupFold>> {
    let mut ids: Vec<String> = participants.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || k > ids.len() {
        return Err(EnsembleError::TooFewGroups { groups: ids.len(), k });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in ids.iter().enumerate() {
        tests[i % k].push(id.clone());
    }
    Ok(tests
        .into_iter()
        .map(|mut test_ids| {
            test_ids.sort();
            let set: BTreeSet<&String> = test_ids.iter().collect();
            let train_ids = ids.iter().filter(|p| !set.contains(p)).cloned().collect::<BTreeSet<_>>().into_iter().collect();
            GroupFold { train_ids, test_ids }
        })
        .collect())
}

/// Fold index of each of `n` rows: shuffled by `seed`, dealt round-robin.
/// Independent of labels.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Like [`kfold_assignment`] but dealing each class separately so every
/// fold gets a share of both.
pub fn stratified_assignment(y: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

fn split_by_fold(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold.len()).partition(|&i| fold[i] != f)
}

fn subset<T: Real>(x: &Matrix<T>, y: &[bool], idx: &[usize]) -> (Matrix<T>, Vec<bool>) {
    (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
}

/// Fits `cfg`, or a constant model at the positive rate when only one class
/// is present.
pub fn fit_or_constant<T: Real>(cfg: &LearnerConfig, x: &Matrix<T>, y: &[bool], seed: u64) -> Result<Model<T>> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        let p = if y.is_empty() { 0.5 } else { pos as f64 / y.len() as f64 };
        return Ok(Model::constant(x.ncols(), T::lit(p)));
    }
    Ok(cfg.fit(x, y, seed)?)
}

// ------------------------------------------------------------ grid search

/// Candidate values per hyperparameter; cells are the cartesian product
/// with the first parameter varying slowest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridSpec {
    pub params: Vec<(String, Vec<f64>)>,
}

impl GridSpec {
    pub fn new(params: &[(&str, &[f64])]) -> Self {
        Self { params: params.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect() }
    }

    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Lr => Self::new(&[("l2", &[0.1, 1.0, 10.0])]),
            LearnerKind::Rf => Self::new(&[("max_depth", &[4.0, 8.0, 16.0])]),
            LearnerKind::Svm => Self::new(&[("penalty", &[0.1, 1.0, 10.0])]),
            LearnerKind::Gbt => Self::new(&[("learning_rate", &[0.05, 0.1]), ("max_depth", &[2.0, 3.0])]),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).product()
    }

    pub fn cells(&self, base: &LearnerConfig) -> Result<Vec<LearnerConfig>> {
        if let Some((name, _)) = self.params.iter().find(|(_, v)| v.is_empty()) {
            return Err(EnsembleError::InvalidConfig(format!("grid parameter `{name}` has no candidates")));
        }
        let mut cells = vec![*base];
        for (name, values) in &self.params {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for c in &cells {
                for &v in values {
                    next.push(c.with_param(name, v)?);
                }
            }
            cells = next;
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: LearnerConfig,
    /// Every cell with its mean inner F1, in grid order.
    pub scores: Vec<(LearnerConfig, f64)>,
}

/// Mean inner-fold F1 for every cell; the first best cell wins ties.
pub fn grid_search<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    base: &LearnerConfig,
    grid: &GridSpec,
    inner_folds: usize,
    seed: u64,
) -> Result<GridResult> {
    let cells = grid.cells(base)?;
    if inner_folds < 2 || inner_folds > y.len() {
        return Err(EnsembleError::InvalidConfig(format!("inner_folds={inner_folds} for {} rows", y.len())));
    }
    let assign = stratified_assignment(y, inner_folds, seed);
    let splits: Vec<_> = (0..inner_folds).map(|f| split_by_fold(&assign, f)).collect();
    let scores = cells
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let mut total = 0.0;
            for (f, (tr, te)) in splits.iter().enumerate() {
                let (xt, yt) = subset(x, y, tr);
                let (xv, yv) = subset(x, y, te);
                let m = fit_or_constant(cfg, &xt, &yt, derive_seed(seed, (c * inner_folds + f) as u64))?;
                total += f1_score(&yv, &m.predict(&xv));
            }
            Ok((*cfg, total / inner_folds as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    Ok(GridResult { best: scores[best].0, scores })
}

// --------------------------------------------------------------- stacking

#[derive(Clone, Debug, PartialEq)]
pub struct StackingConfig {
    pub bases: Vec<LearnerConfig>,
    pub meta: LearnerConfig,
    pub oof_folds: usize,
    pub seed: u64,
}

/// Weak ridge on the meta learner: its inputs are probabilities, and the
/// default base LR penalty would shrink their weights towards the prior.
pub const META_L2: f64 = 1e-3;

impl Default for StackingConfig {
    fn default() -> Self {
        Self {
            bases: vec![
                LearnerConfig::Gbt(GbtConfig::default()),
                LearnerConfig::Svm(SvmConfig::default()),
                LearnerConfig::Lr(LrConfig::default()),
                LearnerConfig::Rf(RfConfig::default()),
            ],
            meta: LearnerConfig::Lr(LrConfig { l2: META_L2, ..Default::default() }),
            oof_folds: 5,
            seed: 0,
        }
    }
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bases.len() < 2 {
            return Err(EnsembleError::InvalidConfig("stacking needs at least 2 base learners".into()));
        }
        if self.oof_folds < 2 {
            return Err(EnsembleError::InvalidConfig("oof_folds must be at least 2".into()));
        }
        for b in &self.bases {
            b.validate()?;
        }
        self.meta.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedStack<T> {
    pub bases: Vec<Model<T>>,
    pub meta: Model<T>,
    pub feature_names: Vec<String>,
    pub standardization: Option<Standardizer<T>>,
}

impl<T: Real> TrainedStack<T> {
    pub fn meta_row(&self, row: &[T]) -> Vec<T> {
        self.bases.iter().map(|m| m.predict_proba_row(row)).collect()
    }
}

impl<T: Real> ProbClassifier<T> for TrainedStack<T> {
    /// Raw (already standardized) feature row.
    fn predict_proba_row(&self, row: &[T]) -> T {
        self.meta.predict_proba_row(&self.meta_row(row))
    }
}

/// Out-of-fold base probabilities: row `i`'s column `b` comes from base
/// `b` trained on the folds not containing `i`. Fold membership depends only
/// on `(n, folds, seed)`, never on labels.
pub fn oof_meta_features<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    bases: &[LearnerConfig],
    folds: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    let n = y.len();
    let assign = kfold_assignment(n, folds, derive_seed(seed, 0));
    let mut meta = Matrix::zeros(n, bases.len());
    for f in 0..folds {
        let (tr, te) = split_by_fold(&assign, f);
        let (xt, yt) = subset(x, y, &tr);
        let xv = x.select_rows(&te);
        for (b, cfg) in bases.iter().enumerate() {
            let m = fit_or_constant(cfg, &xt, &yt, derive_seed(seed, 1 + (f * bases.len() + b) as u64))?;
            for (&i, p) in te.iter().zip(m.predict_proba(&xv)) {
                meta.set(i, b, p);
            }
        }
    }
    Ok(meta)
}

pub fn fit_stack<T: Real>(x: &Matrix<T>, y: &[bool], cfg: &StackingConfig) -> Result<TrainedStack<T>> {
    cfg.validate()?;
    let pos = y.iter().filter(|&&v| v).count();
    let have = pos.min(y.len() - pos);
    if have < cfg.oof_folds {
        return Err(EnsembleError::TooFewSamples { needed: cfg.oof_folds, have });
    }
    let meta_x = oof_meta_features(x, y, &cfg.bases, cfg.oof_folds, cfg.seed)?;
    let meta = fit_or_constant(&cfg.meta, &meta_x, y, derive_seed(cfg.seed, u64::MAX))?;
    let bases = cfg
        .bases
        .iter()
        .enumerate()
        .map(|(b, c)| fit_or_constant(c, x, y, derive_seed(cfg.seed, 1_000_000 + b as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedStack { bases, meta, feature_names: Vec::new(), standardization: None })
}

pub const STACK_MAGIC: &str = "comprehend-stack 1";

/// `comprehend-stack 1`, `features <names..>`, optional `means`/`stds`
/// lines, `bases <n>`, then the base models, then the meta model, each in
/// the model text layout.
impl<T: Real> fmt::Display for TrainedStack<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{STACK_MAGIC}")?;
        writeln!(f, "features {}", self.feature_names.join(" "))?;
        if let Some(s) = &self.standardization {
            let join = |v: &[T]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            writeln!(f, "means {}", join(&s.means))?;
            writeln!(f, "stds {}", join(&s.stds))?;
        }
        writeln!(f, "bases {}", self.bases.len())?;
        for m in &self.bases {
            write!(f, "{m}")?;
        }
        write!(f, "{}", self.meta)
    }
}

impl<T: Real> FromStr for TrainedStack<T> {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| EnsembleError::Parse { line, msg: msg.to_string() };
        let lines: Vec<&str> = s.lines().collect();
        if lines.first() != Some(&STACK_MAGIC) {
            return Err(perr(1, "bad header"));
        }
        let feature_names = match lines.get(1).and_then(|l| l.strip_prefix("features")) {
            Some(rest) => rest.split_whitespace().map(str::to_string).collect(),
            None => return Err(perr(2, "expected `features`")),
        };
        let mut at = 2;
        let nums = |rest: &str, line: usize| -> Result<Vec<T>> {
            rest.split_whitespace().map(|w| w.parse().map_err(|_| perr(line, "bad number"))).collect()
        };
        let mut standardization = None;
        if let Some(rest) = lines.get(at).and_then(|l| l.strip_prefix("means")) {
            let means = nums(rest, at + 1)?;
            let stds = match lines.get(at + 1).and_then(|l| l.strip_prefix("stds")) {
                Some(r) => nums(r, at + 2)?,
                None => return Err(perr(at + 2, "expected `stds`")),
            };
            standardization = Some(Standardizer { means, stds });
            at += 2;
        }
        let n: usize = lines
            .get(at)
            .and_then(|l| l.strip_prefix("bases "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr(at + 1, "expected `bases <n>`"))?;
        at += 1;
        let mut models = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let end = (at..lines.len()).find(|&i| lines[i] == "end").ok_or_else(|| perr(at + 1, "unterminated model"))?;
            let text = lines[at..=end].join("\n");
            let m: Model<T> = text.parse().map_err(|e: LearnerError| perr(at + 1, &e.to_string()))?;
            models.push(m);
            at = end + 1;
        }
        if at != lines.len() {
            return Err(perr(at + 1, "trailing content"));
        }
        let meta = models.pop().expect("n + 1 models");
        Ok(TrainedStack { bases: models, meta, feature_names, standardization })
    }
}

// ------------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k_folds: usize,
    /// Participant-grouped outer folds; `false` deals rows instead.
    pub grouped: bool,
    pub inner_folds: usize,
    /// Starting point for each learner before its grid is applied.
    pub learners: BTreeMap<LearnerKind, LearnerConfig>,
    pub grids: BTreeMap<LearnerKind, GridSpec>,
    pub stacking: StackingConfig,
    pub smote_k: usize,
    pub smote_ratio: f64,
    pub spread: LabelSpreadConfig,
    /// Median split per participant instead of globally, when labels are
    /// derived here.
    pub per_participant_median: bool,
    pub threshold: DecisionThreshold,
    pub seed: u64,
}

/// Probability cut-off for calling a test row positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecisionThreshold {
    /// `p > 0.5`.
    Half,
    /// `p > ` the positive fraction of the final training labels, so an
    /// uninformative model splits its calls instead of collapsing onto one
    /// class.
    TrainPrior,
    /// The highest-scoring rows are positive, as many as the observed
    /// training prevalence implies. Only the ranking of the scores matters,
    /// so resampling artifacts in their calibration cannot move the
    /// positive rate. A fitted final model stores the matching quantile of
    /// its scores on the real training rows.
    #[default]
    PriorRank,
}

impl DecisionThreshold {
    pub fn name(self) -> &'static str {
        match self {
            Self::Half => "half",
            Self::TrainPrior => "train_prior",
            Self::PriorRank => "prior_rank",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "half" => Some(Self::Half),
            "train_prior" => Some(Self::TrainPrior),
            "prior_rank" => Some(Self::PriorRank),
            _ => None,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_folds: 10,
            grouped: true,
            inner_folds: 3,
            learners: LearnerKind::ALL.iter().map(|&k| (k, LearnerConfig::default_for(k))).collect(),
            grids: LearnerKind::ALL.iter().map(|&k| (k, GridSpec::default_for(k))).collect(),
            stacking: StackingConfig::default(),
            smote_k: 5,
            smote_ratio: 1.0,
            spread: LabelSpreadConfig::default(),
            per_participant_median: false,
            threshold: DecisionThreshold::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn learner(&self, k: LearnerKind) -> LearnerConfig {
        self.learners.get(&k).copied().unwrap_or_else(|| LearnerConfig::default_for(k))
    }

    fn grid(&self, k: LearnerKind) -> GridSpec {
        self.grids.get(&k).cloned().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_participants: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub counts: BinaryCounts,
    pub acc: f64,
    pub f1: f64,
    /// Tuned configuration per model trained in this fold.
    pub chosen: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub task: Task,
    pub method: Method,
    pub feature_set: FeatureSet,
    pub folds: Vec<FoldResult>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl CvReport {
    pub fn new(task: Task, method: Method, feature_set: FeatureSet, folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.acc).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let (mean_acc, std_acc) = mean_std(&acc);
        let (mean_f1, std_f1) = mean_std(&f1);
        Self { task, method, feature_set, folds, mean_acc, std_acc, mean_f1, std_f1 }
    }
}

/// Binary target for the task, `None` where unknown.
fn task_labels(ds: &Dataset, task: Task) -> Vec<Option<bool>> {
    ds.rows
        .iter()
        .map(|r| match task {
            Task::Correctness => r.correct_label.map(|c| c.is_positive()),
            Task::Confusion => r.confusion_label.map(|c| c.is_positive()),
        })
        .collect()
}

fn hash_rows(x: &Matrix<f64>, y: &[Option<bool>], idx: &[usize]) -> u64 {
    let mut h = DefaultHasher::new();
    for &i in idx {
        i.hash(&mut h);
        for v in x.row(i) {
            v.to_bits().hash(&mut h);
        }
        y[i].hash(&mut h);
    }
    h.finish()
}

/// A fitted single learner or stack.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedBody {
    Single(Model<f64>),
    Stack(TrainedStack<f64>),
}

impl ProbClassifier<f64> for FittedBody {
    fn predict_proba_row(&self, row: &[f64]) -> f64 {
        match self {
            Self::Single(m) => m.predict_proba_row(row),
            Self::Stack(s) => s.predict_proba_row(row),
        }
    }
}

struct Fitted {
    model: FittedBody,
    chosen: Vec<String>,
}

fn train_method(
    method: Method,
    x: &Matrix<f64>,
    y: &[bool],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Fitted> {
    let tune = |base: LearnerConfig, s: u64| -> Result<LearnerConfig> {
        let grid = cfg.grid(base.kind());
        if grid.params.is_empty() {
            return Ok(base);
        }
        Ok(grid_search(x, y, &base, &grid, cfg.inner_folds, s)?.best)
    };
    match method.learner() {
        Some(kind) => {
            let best = tune(cfg.learner(kind), derive_seed(seed, 1))?;
            let m = fit_or_constant(&best, x, y, derive_seed(seed, 2))?;
            Ok(Fitted { model: FittedBody::Single(m), chosen: vec![best.to_string()] })
        }
        None => {
            let mut sc = cfg.stacking.clone();
            sc.seed = derive_seed(seed, 3);
            sc.bases = sc
                .bases
                .iter()
                .enumerate()
                .map(|(b, base)| tune(*base, derive_seed(seed, 10 + b as u64)))
                .collect::<Result<Vec<_>>>()?;
            let chosen = sc.bases.iter().map(|b| b.to_string()).collect();
            let stack = fit_stack(x, y, &sc)?;
            Ok(Fitted { model: FittedBody::Stack(stack), chosen })
        }
    }
}

/// Rows that can be scored for the task with this feature set.
fn eligible_rows(ds: &Dataset, set: FeatureSet) -> Vec<usize> {
    (0..ds.len()).filter(|&i| ds.row_usable(i, set)).collect()
}

struct TaskInputs {
    ds: Dataset,
    labels: Vec<Option<bool>>,
    rows: Vec<usize>,
}

/// Labels for the task (deriving confusion labels when absent) and the
/// rows usable with the feature set.
fn task_inputs(ds: &Dataset, task: Task, feature_set: FeatureSet, cfg: &EvalConfig) -> Result<TaskInputs> {
    if task == Task::Confusion && feature_set.uses_confusion() {
        return Err(EnsembleError::InvalidFeatureSet { set: feature_set, task });
    }
    let ds = if task == Task::Confusion && ds.rows.iter().all(|r| r.confusion_label.is_none()) {
        dataset::derive_confusion_labels(ds, cfg.per_participant_median)?
    } else {
        ds.clone()
    };
    let labels = task_labels(&ds, task);
    let rows = eligible_rows(&ds, feature_set);
    let labeled = rows.iter().filter(|&&i| labels[i].is_some()).count();
    if labeled == 0 {
        return Err(EnsembleError::MissingLabels(format!("no {task} labels")));
    }
    Ok(TaskInputs { ds, labels, rows })
}

/// Cross-validated evaluation of one (task, feature set, method) cell.
///
/// Per outer fold: standardize on the training rows; for correctness,
/// spread labels to unlabeled training rows; for confusion, oversample and
/// clean the training rows; tune and fit on the training rows only; score
/// the labeled test rows.
pub fn evaluate_task(
    ds: &Dataset,
    task: Task,
    feature_set: FeatureSet,
    method: Method,
    cfg: &EvalConfig,
) -> Result<CvReport> {
    let TaskInputs { ds, labels, rows } = task_inputs(ds, task, feature_set, cfg)?;
    let x_all = ds.matrix(&(0..ds.len()).collect::<Vec<_>>(), feature_set);
    let pid: Vec<&str> = ds.rows.iter().map(|r| r.key.participant_id.as_str()).collect();

    // (train rows, test rows, test participants)
    let splits: Vec<(Vec<usize>, Vec<usize>, Vec<String>)> = if cfg.grouped {
        let parts: Vec<String> = rows.iter().map(|&i| pid[i].to_string()).collect();
        grouped_kfold(&parts, cfg.k_folds, derive_seed(cfg.seed, 0))?
            .into_iter()
            .map(|f| {
                let test: BTreeSet<&str> = f.test_ids.iter().map(String::as_str).collect();
                let (te, tr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| test.contains(pid[i]));
                (tr, te, f.test_ids)
            })
            .collect()
    } else {
        if cfg.k_folds < 2 || cfg.k_folds > rows.len() {
            return Err(EnsembleError::TooFewGroups { groups: rows.len(), k: cfg.k_folds });
        }
        let assign = kfold_assignment(rows.len(), cfg.k_folds, derive_seed(cfg.seed, 0));
        (0..cfg.k_folds)
            .map(|f| {
                let (tr, te): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&j| assign[j] != f);
                let tr: Vec<usize> = tr.into_iter().map(|j| rows[j]).collect();
                let te: Vec<usize> = te.into_iter().map(|j| rows[j]).collect();
                let parts: BTreeSet<String> = te.iter().map(|&i| pid[i].to_string()).collect();
                (tr, te, parts.into_iter().collect())
            })
            .collect()
    };

    let folds = splits
        .into_par_iter()
        .enumerate()
        .map(|(f, (train, test, participants))| {
            let fold_seed = derive_seed(cfg.seed, 100 + f as u64);
            let before = hash_rows(&x_all, &labels, &test);
            let result = run_fold(&x_all, &labels, &train, &test, task, method, cfg, fold_seed, f, participants)?;
            if hash_rows(&x_all, &labels, &test) != before {
                return Err(EnsembleError::Leakage(f));
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::new(task, method, feature_set, folds))
}

fn positive_rate(y: &[bool]) -> f64 {
    y.iter().filter(|&&b| b).count() as f64 / y.len().max(1) as f64
}

/// Observed labels of the training rows, before any resampling or spreading.
fn observed_prevalence(labels: &[Option<bool>], train: &[usize]) -> f64 {
    let seen: Vec<bool> = train.iter().filter_map(|&i| labels[i]).collect();
    positive_rate(&seen)
}

/// Indices of the `round(rate * n)` highest scores, ties broken by position.
fn top_ranked(scores: &[f64], rate: f64) -> Vec<bool> {
    let k = ((rate * scores.len() as f64).round() as usize).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![false; scores.len()];
    for &i in &order[..k] {
        out[i] = true;
    }
    out
}

/// A fixed cut with `score > cut` true for the top `rate` share of `scores`.
fn rank_cut(scores: &[f64], rate: f64) -> f64 {
    let k = ((rate * scores.len() as f64).round() as usize).min(scores.len());
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if k == sorted.len() {
        -1.0
    } else {
        sorted[k]
    }
}

fn predict_with(t: DecisionThreshold, scores: &[f64], yt: &[bool], observed: f64) -> Vec<bool> {
    let cut = match t {
        DecisionThreshold::Half => 0.5,
        DecisionThreshold::TrainPrior => positive_rate(yt),
        DecisionThreshold::PriorRank => return top_ranked(scores, observed),
    };
    scores.iter().map(|&p| p > cut).collect()
}

/// Standardizes the training rows, then completes the training labels:
/// label spreading for correctness, SMOTE-Tomek for confusion.
#[allow(clippy::too_many_arguments)]
fn prepare_training(
    x_all: &Matrix<f64>,
    labels: &[Option<bool>],
    train: &[usize],
    task: Task,
    cfg: &EvalConfig,
    seed: u64,
    fold: usize,
) -> Result<(Standardizer<f64>, Matrix<f64>, Vec<bool>)> {
    let raw_train = x_all.select_rows(train);
    let std = Standardizer::fit(&raw_train);
    let mut xt = std.transform(&raw_train);
    let yt: Vec<bool> = match task {
        Task::Correctness => {
            let partial: Vec<Option<usize>> = train.iter().map(|&i| labels[i].map(|b| b as usize)).collect();
            let classes: BTreeSet<usize> = partial.iter().flatten().copied().collect();
            if classes.len() == 2 {
                let spread = balance::label_spread(&xt, &partial, 2, &cfg.spread)?;
                spread.labels.into_iter().map(|c| c == 1).collect()
            } else {
                let only = classes.into_iter().next().ok_or_else(|| {
                    EnsembleError::MissingLabels(format!("fold {fold} has no labeled training rows"))
                })?;
                log::warn!("fold {fold}: single labeled class in training rows");
                vec![only == 1; train.len()]
            }
        }
        Task::Confusion => {
            let mut kept: Vec<usize> = Vec::new();
            let mut y = Vec::new();
            for (j, &i) in train.iter().enumerate() {
                if let Some(b) = labels[i] {
                    kept.push(j);
                    y.push(b);
                }
            }
            xt = xt.select_rows(&kept);
            let counts = balance::class_counts(&y);
            if counts[0].min(counts[1]) >= 2 {
                let r = balance::smote_tomek(&xt, &y, cfg.smote_k, cfg.smote_ratio, derive_seed(seed, 7))?;
                xt = r.x;
                r.y
            } else {
                log::warn!("fold {fold}: minority class too small to resample");
                y
            }
        }
    };
    Ok((std, xt, yt))
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    x_all: &Matrix<f64>,
    labels: &[Option<bool>],
    train: &[usize],
    test: &[usize],
    task: Task,
    method: Method,
    cfg: &EvalConfig,
    seed: u64,
    fold: usize,
    test_participants: Vec<String>,
) -> Result<FoldResult> {
    let test: Vec<usize> = test.iter().copied().filter(|&i| labels[i].is_some()).collect();
    let (std, xt, yt) = prepare_training(x_all, labels, train, task, cfg, seed, fold)?;
    let xv = std.transform(&x_all.select_rows(&test));
    let yv: Vec<bool> = test.iter().map(|&i| labels[i].unwrap()).collect();
    let fitted = train_method(method, &xt, &yt, cfg, seed)?;
    let scores = fitted.model.predict_proba(&xv);
    let pred = predict_with(cfg.threshold, &scores, &yt, observed_prevalence(labels, train));
    let counts = BinaryCounts::from_predictions(&yv, &pred);
    Ok(FoldResult {
        fold,
        test_participants,
        n_train: xt.nrows(),
        n_test: yv.len(),
        counts,
        acc: counts.accuracy(),
        f1: counts.f1(),
        chosen: fitted.chosen,
    })
}

/// A model fitted on every usable row, with everything needed to score raw
/// feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalModel {
    pub task: Task,
    pub method: Method,
    pub feature_set: FeatureSet,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer<f64>,
    /// Positive when the probability exceeds this.
    pub cut: f64,
    pub chosen: Vec<String>,
    pub body: FittedBody,
}

impl FinalModel {
    pub fn predict_proba_raw(&self, row: &[f64]) -> f64 {
        self.body.predict_proba_row(&self.standardizer.transform_row(row))
    }

    pub fn predict_raw(&self, row: &[f64]) -> bool {
        self.predict_proba_raw(row) > self.cut
    }
}

/// Same preparation and tuning as one evaluation fold, with every usable
/// row in the training partition.
pub fn fit_final(
    ds: &Dataset,
    task: Task,
    feature_set: FeatureSet,
    method: Method,
    cfg: &EvalConfig,
) -> Result<FinalModel> {
    let TaskInputs { ds, labels, rows } = task_inputs(ds, task, feature_set, cfg)?;
    let x_all = ds.matrix(&(0..ds.len()).collect::<Vec<_>>(), feature_set);
    let seed = derive_seed(cfg.seed, 99);
    let (standardizer, xt, yt) = prepare_training(&x_all, &labels, &rows, task, cfg, seed, 0)?;
    let fitted = train_method(method, &xt, &yt, cfg, seed)?;
    let cut = match cfg.threshold {
        DecisionThreshold::Half => 0.5,
        DecisionThreshold::TrainPrior => positive_rate(&yt),
        DecisionThreshold::PriorRank => {
            let seen: Vec<usize> = rows.iter().copied().filter(|&i| labels[i].is_some()).collect();
            let real = standardizer.transform(&x_all.select_rows(&seen));
            rank_cut(&fitted.model.predict_proba(&real), observed_prevalence(&labels, &rows))
        }
    };
    Ok(FinalModel {
        task,
        method,
        feature_set,
        feature_names: ds.column_names(feature_set),
        standardizer,
        cut,
        chosen: fitted.chosen,
        body: fitted.model,
    })
}

pub const FINAL_MAGIC: &str = "comprehend-final 1";

/// Header lines (`task`, `method`, `feature_set`, `features`, `means`,
/// `stds`, `cut`, one `chosen` line per tuned learner) followed by the
/// model or stack text.
impl fmt::Display for FinalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(f, "{FINAL_MAGIC}")?;
        writeln!(f, "task {}", self.task)?;
        writeln!(f, "method {}", self.method)?;
        writeln!(f, "feature_set {}", self.feature_set.tag())?;
        writeln!(f, "features {}", self.feature_names.join(" "))?;
        writeln!(f, "means {}", join(&self.standardizer.means))?;
        writeln!(f, "stds {}", join(&self.standardizer.stds))?;
        writeln!(f, "cut {}", self.cut)?;
        for c in &self.chosen {
            writeln!(f, "chosen {c}")?;
        }
        match &self.body {
            FittedBody::Single(m) => write!(f, "{m}"),
            FittedBody::Stack(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for FinalModel {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| EnsembleError::Parse { line, msg: msg.to_string() };
        let lines: Vec<&str> = s.lines().collect();
        if lines.first() != Some(&FINAL_MAGIC) {
            return Err(perr(1, "bad header"));
        }
        let field = |i: usize, key: &str| -> Result<&str> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .ok_or_else(|| perr(i + 1, &format!("expected `{key}`")))
        };
        let nums = |i: usize, key: &str| -> Result<Vec<f64>> {
            field(i, key)?.split_whitespace().map(|w| w.parse().map_err(|_| perr(i + 1, "bad number"))).collect()
        };
        let task = Task::parse(field(1, "task")?).ok_or_else(|| perr(2, "unknown task"))?;
        let method = Method::parse(field(2, "method")?).ok_or_else(|| perr(3, "unknown method"))?;
        let feature_set = FeatureSet::parse(field(3, "feature_set")?).ok_or_else(|| perr(4, "unknown feature set"))?;
        let feature_names = field(4, "features")?.split_whitespace().map(str::to_string).collect();
        let standardizer = Standardizer { means: nums(5, "means")?, stds: nums(6, "stds")? };
        let cut = field(7, "cut")?.parse().map_err(|_| perr(8, "bad cut"))?;
        let mut at = 8;
        let mut chosen = Vec::new();
        while let Some(c) = lines.get(at).and_then(|l| l.strip_prefix("chosen ")) {
            chosen.push(c.to_string());
            at += 1;
        }
        let rest = lines[at.min(lines.len())..].join("\n") + "\n";
        let body = match lines.get(at) {
            Some(&STACK_MAGIC) => FittedBody::Stack(rest.parse()?),
            Some(_) => FittedBody::Single(rest.parse().map_err(|e: LearnerError| perr(at + 1, &e.to_string()))?),
            None => return Err(perr(at + 1, "missing model")),
        };
        Ok(Self { task, method, feature_set, feature_names, standardizer, cut, chosen, body })
    }
}

/// Inverse of [`format_fold_csv`]. The tuned configurations are not part of
/// the file and come back empty.
pub fn parse_fold_csv(text: &str) -> Result<Vec<CvReport>> {
    let perr = |line: usize, msg: &str| EnsembleError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FOLD_CSV_HEADER => {}
        _ => return Err(perr(1, "bad fold csv header")),
    }
    let mut groups: Vec<((Task, Method, FeatureSet), Vec<FoldResult>)> = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 13 {
            return Err(perr(ln + 1, "expected 13 columns"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| perr(ln + 1, "bad integer"));
        let real = |s: &str| s.parse::<f64>().map_err(|_| perr(ln + 1, "bad number"));
        let key = (
            Task::parse(c[0]).ok_or_else(|| perr(ln + 1, "unknown task"))?,
            Method::parse(c[1]).ok_or_else(|| perr(ln + 1, "unknown method"))?,
            FeatureSet::parse(c[2]).ok_or_else(|| perr(ln + 1, "unknown feature set"))?,
        );
        let fold = FoldResult {
            fold: int(c[3])?,
            test_participants: c[4].split(';').filter(|p| !p.is_empty()).map(str::to_string).collect(),
            n_train: int(c[5])?,
            n_test: int(c[6])?,
            counts: BinaryCounts { tp: int(c[7])?, fp: int(c[8])?, fn_: int(c[9])?, tn: int(c[10])? },
            acc: real(c[11])?,
            f1: real(c[12])?,
            chosen: Vec::new(),
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(fold),
            None => groups.push((key, vec![fold])),
        }
    }
    Ok(groups.into_iter().map(|((t, m, f), folds)| CvReport::new(t, m, f, folds)).collect())
}

// --------------------------------------------------------------- reports

/// `mean ± std` at two decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

pub const EMPTY_CELL: &str = "-";

/// One aligned block per task present: rows are method × {ACC, F1}, columns
/// the three feature sets. Missing combinations show as an em dash.
pub fn format_table(reports: &[CvReport]) -> String {
    let tasks: BTreeSet<Task> = reports.iter().map(|r| r.task).collect();
    let mut out = String::new();
    for task in tasks {
        let mut header = vec!["Method".to_string(), "Metric".to_string()];
        header.extend(FeatureSet::ALL.iter().map(|s| s.tag().to_string()));
        let mut table = vec![header];
        for method in Method::ALL {
            for metric in ["ACC", "F1"] {
                let mut row = vec![method.label().to_string(), metric.to_string()];
                for set in FeatureSet::ALL {
                    let cell = reports
                        .iter()
                        .find(|r| r.task == task && r.method == method && r.feature_set == set)
                        .map(|r| {
                            if metric == "ACC" { format_cell(r.mean_acc, r.std_acc) } else { format_cell(r.mean_f1, r.std_f1) }
                        })
                        .unwrap_or_else(|| EMPTY_CELL.to_string());
                    row.push(cell);
                }
                table.push(row);
            }
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        out.push_str(&format!("Task: {task}\n"));
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// `task,method,feature_set,metric,mean,std,fold_1..fold_k`.
pub fn format_summary_csv(reports: &[CvReport]) -> String {
    let k = reports.iter().map(|r| r.folds.len()).max().unwrap_or(0);
    let mut out = String::from("task,method,feature_set,metric,mean,std");
    for i in 1..=k {
        out.push_str(&format!(",fold_{i}"));
    }
    out.push('\n');
    for r in reports {
        for (metric, mean, std) in [("acc", r.mean_acc, r.std_acc), ("f1", r.mean_f1, r.std_f1)] {
            out.push_str(&format!("{},{},{},{metric},{mean},{std}", r.task, r.method, r.feature_set.tag()));
            for f in &r.folds {
                out.push_str(&format!(",{}", if metric == "acc" { f.acc } else { f.f1 }));
            }
            out.push('\n');
        }
    }
    out
}

pub const FOLD_CSV_HEADER: &str = "task,method,feature_set,fold,test_participants,n_train,n_test,tp,fp,fn,tn,acc,f1";

pub fn format_fold_csv(reports: &[CvReport]) -> String {
    let mut out = format!("{FOLD_CSV_HEADER}\n");
    for r in reports {
        for f in &r.folds {
            let c = f.counts;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.task,
                r.method,
                r.feature_set.tag(),
                f.fold,
                f.test_participants.join(";"),
                f.n_train,
                f.n_test,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                f.acc,
                f.f1
            ));
        }
    }
    out
}
