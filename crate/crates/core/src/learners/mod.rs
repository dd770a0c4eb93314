//! Binary probabilistic classifiers: logistic regression, random forest,
//! linear SVM with Platt scaling and second-order gradient boosted trees.
//!
//! Every fitted model implements [`ProbClassifier`]; [`Model`] wraps any of
//! them behind one type with a plain-text serialization (see [`Model`]'s
//! `Display` impl for the layout).

mod forest;
mod linear;
mod tree;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use forest::{
    log_loss_from_scores, train_decision_tree, train_gbt_traced, train_gradient_boosted_trees, train_random_forest,
    Forest, GbtModel,
};
pub use linear::{
    logistic_objective, svm_objective, svm_subgradient, train_linear_svm, train_logistic_regression, LogisticModel,
    SvmModel,
};
pub use tree::{leaf_weight, split_gain, Node, Tree};

use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("empty training set")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
    #[error("unknown hyperparameter `{param}` for {learner}")]
    UnknownParam { learner: &'static str, param: String },
    #[error("model text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model expects {expected} features, got {got}")]
    Width { expected: usize, got: usize },
}

pub type Result<T, E = LearnerError> = std::result::Result<T, E>;

pub(crate) fn check_binary<T: Real>(x: &Matrix<T>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(LearnerError::LengthMismatch { rows: x.nrows(), labels: y.len() });
    }
    if y.is_empty() {
        return Err(LearnerError::Empty);
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(LearnerError::SingleClassInput);
    }
    Ok(())
}

/// Fitted binary classifier returning `P(positive)`.
pub trait ProbClassifier<T: Real> {
    fn predict_proba_row(&self, row: &[T]) -> T;

    fn predict_proba(&self, x: &Matrix<T>) -> Vec<T> {
        x.rows().map(|r| self.predict_proba_row(r)).collect()
    }

    /// Positive when the probability exceeds one half.
    fn predict(&self, x: &Matrix<T>) -> Vec<bool> {
        let half = T::lit(0.5);
        self.predict_proba(x).into_iter().map(|p| p > half).collect()
    }
}

macro_rules! impl_prob {
    ($($t:ident),*) => {$(
        impl<T: Real> ProbClassifier<T> for $t<T> {
            fn predict_proba_row(&self, row: &[T]) -> T {
                <$t<T>>::predict_proba_row(self, row)
            }
        }
    )*};
}
impl_prob!(LogisticModel, SvmModel, Forest, GbtModel);

impl<T: Real> ProbClassifier<T> for Tree<T> {
    fn predict_proba_row(&self, row: &[T]) -> T {
        self.predict(row)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LearnerKind {
    Gbt,
    Svm,
    Lr,
    Rf,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [Self::Gbt, Self::Svm, Self::Lr, Self::Rf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gbt => "gbt",
            Self::Svm => "svm",
            Self::Lr => "lr",
            Self::Rf => "rf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrConfig {
    /// `> 0`; penalty on `|w|^2 / 2` added to the mean log-loss.
    pub l2: f64,
    pub max_iter: usize,
    /// Gradient-norm stopping threshold.
    pub tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self { l2: 1.0, max_iter: 1000, tol: 1e-6 }
    }
}

impl LrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(LearnerError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Features tried per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            Self::Sqrt => (d as f64).sqrt().floor() as usize,
            Self::All => d,
            Self::Count(c) => c.min(d),
        };
        m.max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: Some(8), min_leaf: 2, max_features: MaxFeatures::Sqrt, bootstrap: true }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 || self.max_features == MaxFeatures::Count(0) {
            return Err(LearnerError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    /// Hinge-loss weight `C`; the SGD regularizer is `1/(C n)`.
    pub penalty: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { penalty: 1.0, epochs: 50 }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty > 0.0 && self.penalty.is_finite()) || self.epochs == 0 {
            return Err(LearnerError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbtConfig {
    pub rounds: usize,
    /// In `[0, 1]`.
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Row fraction per round, in `(0, 1]`.
    pub subsample: f64,
    /// Minimum Hessian sum per child.
    pub min_child_weight: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            lambda: 1.0,
            gamma: 0.0,
            subsample: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.learning_rate)
            && self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.min_child_weight >= 0.0;
        if !ok {
            return Err(LearnerError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearnerConfig {
    Lr(LrConfig),
    Rf(RfConfig),
    Svm(SvmConfig),
    Gbt(GbtConfig),
}

fn as_count(learner: &'static str, name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(LearnerError::InvalidConfig(format!("{learner}.{name} must be a non-negative integer, got {v}")))
    }
}

impl LearnerConfig {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Lr => Self::Lr(LrConfig::default()),
            LearnerKind::Rf => Self::Rf(RfConfig::default()),
            LearnerKind::Svm => Self::Svm(SvmConfig::default()),
            LearnerKind::Gbt => Self::Gbt(GbtConfig::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Self::Lr(_) => LearnerKind::Lr,
            Self::Rf(_) => LearnerKind::Rf,
            Self::Svm(_) => LearnerKind::Svm,
            Self::Gbt(_) => LearnerKind::Gbt,
        }
    }

    pub fn param_names(kind: LearnerKind) -> &'static [&'static str] {
        match kind {
            LearnerKind::Lr => &["l2", "max_iter", "tol"],
            LearnerKind::Rf => &["n_trees", "max_depth", "min_leaf", "max_features", "bootstrap"],
            LearnerKind::Svm => &["penalty", "epochs"],
            LearnerKind::Gbt => {
                &["rounds", "learning_rate", "max_depth", "lambda", "gamma", "subsample", "min_child_weight"]
            }
        }
    }

    /// Current value of every parameter in [`Self::param_names`] order,
    /// encoded as [`Self::with_param`] accepts them.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        let names = Self::param_names(self.kind());
        let vals: Vec<f64> = match self {
            Self::Lr(c) => vec![c.l2, c.max_iter as f64, c.tol],
            Self::Rf(c) => vec![
                c.n_trees as f64,
                c.max_depth.map_or(f64::INFINITY, |d| d as f64),
                c.min_leaf as f64,
                match c.max_features {
                    MaxFeatures::Sqrt => 0.0,
                    MaxFeatures::All => f64::INFINITY,
                    MaxFeatures::Count(m) => m as f64,
                },
                c.bootstrap as u8 as f64,
            ],
            Self::Svm(c) => vec![c.penalty, c.epochs as f64],
            Self::Gbt(c) => vec![
                c.rounds as f64,
                c.learning_rate,
                c.max_depth as f64,
                c.lambda,
                c.gamma,
                c.subsample,
                c.min_child_weight,
            ],
        };
        names.iter().copied().zip(vals).collect()
    }

    /// Copy with one hyperparameter replaced. Integer parameters need an
    /// integral value; `rf.max_depth = inf` means unlimited,
    /// `rf.max_features = 0` means square root of the width, `inf` all
    /// features, and `rf.bootstrap` is 0 or 1.
    pub fn with_param(&self, name: &str, v: f64) -> Result<Self> {
        let k = self.kind().name();
        let mut out = *self;
        match &mut out {
            Self::Lr(c) => match name {
                "l2" => c.l2 = v,
                "max_iter" => c.max_iter = as_count(k, name, v)?,
                "tol" => c.tol = v,
                _ => return Err(LearnerError::UnknownParam { learner: k, param: name.into() }),
            },
            Self::Rf(c) => match name {
                "n_trees" => c.n_trees = as_count(k, name, v)?,
                "max_depth" => c.max_depth = if v == f64::INFINITY { None } else { Some(as_count(k, name, v)?) },
                "min_leaf" => c.min_leaf = as_count(k, name, v)?,
                "max_features" if v == f64::INFINITY => c.max_features = MaxFeatures::All,
                "max_features" => {
                    c.max_features = match as_count(k, name, v)? {
                        0 => MaxFeatures::Sqrt,
                        m => MaxFeatures::Count(m),
                    }
                }
                "bootstrap" => {
                    c.bootstrap = match as_count(k, name, v)? {
                        0 => false,
                        1 => true,
                        _ => return Err(LearnerError::InvalidConfig("rf.bootstrap must be 0 or 1".into())),
                    }
                }
                _ => return Err(LearnerError::UnknownParam { learner: k, param: name.into() }),
            },
            Self::Svm(c) => match name {
                "penalty" => c.penalty = v,
                "epochs" => c.epochs = as_count(k, name, v)?,
                _ => return Err(LearnerError::UnknownParam { learner: k, param: name.into() }),
            },
            Self::Gbt(c) => match name {
                "rounds" => c.rounds = as_count(k, name, v)?,
                "learning_rate" => c.learning_rate = v,
                "max_depth" => c.max_depth = as_count(k, name, v)?,
                "lambda" => c.lambda = v,
                "gamma" => c.gamma = v,
                "subsample" => c.subsample = v,
                "min_child_weight" => c.min_child_weight = v,
                _ => return Err(LearnerError::UnknownParam { learner: k, param: name.into() }),
            },
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Lr(c) => c.validate(),
            Self::Rf(c) => c.validate(),
            Self::Svm(c) => c.validate(),
            Self::Gbt(c) => c.validate(),
        }
    }

    pub fn fit<T: Real>(&self, x: &Matrix<T>, y: &[bool], seed: u64) -> Result<Model<T>> {
        let width = x.ncols();
        let body = match self {
            Self::Lr(c) => ModelBody::Lr(train_logistic_regression(x, y, c)?),
            Self::Rf(c) => ModelBody::Rf(train_random_forest(x, y, c, seed)?),
            Self::Svm(c) => ModelBody::Svm(train_linear_svm(x, y, c, seed)?),
            Self::Gbt(c) => ModelBody::Gbt(train_gradient_boosted_trees(x, y, c, seed)?),
        };
        Ok(Model { width, body })
    }
}

impl fmt::Display for LearnerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lr(c) => write!(f, "lr(l2={}, max_iter={}, tol={})", c.l2, c.max_iter, c.tol),
            Self::Rf(c) => {
                let depth = c.max_depth.map_or("inf".to_string(), |d| d.to_string());
                let mf = match c.max_features {
                    MaxFeatures::Sqrt => "sqrt".to_string(),
                    MaxFeatures::All => "all".to_string(),
                    MaxFeatures::Count(m) => m.to_string(),
                };
                write!(
                    f,
                    "rf(n_trees={}, max_depth={depth}, min_leaf={}, max_features={mf}, bootstrap={})",
                    c.n_trees, c.min_leaf, c.bootstrap as u8
                )
            }
            Self::Svm(c) => write!(f, "svm(penalty={}, epochs={})", c.penalty, c.epochs),
            Self::Gbt(c) => write!(
                f,
                "gbt(rounds={}, learning_rate={}, max_depth={}, lambda={}, gamma={}, subsample={}, min_child_weight={})",
                c.rounds, c.learning_rate, c.max_depth, c.lambda, c.gamma, c.subsample, c.min_child_weight
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelBody<T> {
    Lr(LogisticModel<T>),
    Rf(Forest<T>),
    Svm(SvmModel<T>),
    Gbt(GbtModel<T>),
    /// Fixed probability; stands in when a training split has one class.
    Constant(T),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    /// Feature count seen at fit time.
    pub width: usize,
    pub body: ModelBody<T>,
}

impl<T: Real> Model<T> {
    pub fn constant(width: usize, p: T) -> Self {
        Self { width, body: ModelBody::Constant(p) }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.body {
            ModelBody::Lr(_) => "lr",
            ModelBody::Rf(_) => "rf",
            ModelBody::Svm(_) => "svm",
            ModelBody::Gbt(_) => "gbt",
            ModelBody::Constant(_) => "constant",
        }
    }

    pub fn check_width(&self, x: &Matrix<T>) -> Result<()> {
        if x.ncols() != self.width {
            return Err(LearnerError::Width { expected: self.width, got: x.ncols() });
        }
        Ok(())
    }
}

impl<T: Real> ProbClassifier<T> for Model<T> {
    fn predict_proba_row(&self, row: &[T]) -> T {
        match &self.body {
            ModelBody::Lr(m) => m.predict_proba_row(row),
            ModelBody::Rf(m) => m.predict_proba_row(row),
            ModelBody::Svm(m) => m.predict_proba_row(row),
            ModelBody::Gbt(m) => m.predict_proba_row(row),
            ModelBody::Constant(p) => *p,
        }
    }
}

pub const MODEL_MAGIC: &str = "comprehend-model 1";

fn write_vec<T: fmt::Display>(f: &mut fmt::Formatter<'_>, key: &str, v: &[T]) -> fmt::Result {
    write!(f, "{key} {}", v.len())?;
    for x in v {
        write!(f, " {x}")?;
    }
    writeln!(f)
}

fn write_trees<T: Real>(f: &mut fmt::Formatter<'_>, trees: &[Tree<T>]) -> fmt::Result {
    writeln!(f, "trees {}", trees.len())?;
    for t in trees {
        writeln!(f, "tree {}", t.nodes.len())?;
        for n in &t.nodes {
            match n {
                Node::Split { feature, threshold, left, right } => writeln!(f, "s {feature} {threshold} {left} {right}")?,
                Node::Leaf { value } => writeln!(f, "l {value}")?,
            }
        }
    }
    Ok(())
}

/// Layout, one item per line, numbers in shortest round-trip decimal:
///
/// ```text
/// comprehend-model 1
/// kind <lr|rf|svm|gbt|constant>
/// width <d>
/// lr:       weights <d> w1 .. wd / bias b
/// svm:      weights <d> w1 .. wd / bias b / platt a b
/// gbt:      base b / trees <n> / (tree <m> / node lines)*
/// rf:       trees <n> / (tree <m> / node lines)*
/// constant: p <value>
/// end
/// ```
///
/// Node lines are `s <feature> <threshold> <left> <right>` or `l <value>`.
impl<T: Real> fmt::Display for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MODEL_MAGIC}")?;
        writeln!(f, "kind {}", self.kind_name())?;
        writeln!(f, "width {}", self.width)?;
        match &self.body {
            ModelBody::Lr(m) => {
                write_vec(f, "weights", &m.weights)?;
                writeln!(f, "bias {}", m.bias)?;
            }
            ModelBody::Svm(m) => {
                write_vec(f, "weights", &m.weights)?;
                writeln!(f, "bias {}", m.bias)?;
                writeln!(f, "platt {} {}", m.platt_a, m.platt_b)?;
            }
            ModelBody::Gbt(m) => {
                writeln!(f, "base {}", m.base)?;
                write_trees(f, &m.trees)?;
            }
            ModelBody::Rf(m) => write_trees(f, &m.trees)?,
            ModelBody::Constant(p) => writeln!(f, "p {p}")?,
        }
        writeln!(f, "end")
    }
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> LearnerError {
        LearnerError::Parse { line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.it.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim_end())
            }
            None => Err(LearnerError::Parse { line: self.line + 1, msg: "unexpected end of model".into() }),
        }
    }

    /// Next line split into words, requiring the first to be `key`.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut w = l.split(' ');
        if w.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(w.collect())
    }

    fn num<V: FromStr>(&self, s: &str) -> Result<V> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }

    fn scalar<V: FromStr>(&mut self, key: &str) -> Result<V> {
        let w = self.keyed(key)?;
        if w.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        self.num(w[0])
    }

    fn vector<T: Real>(&mut self, key: &str) -> Result<Vec<T>> {
        let w = self.keyed(key)?;
        let n: usize = self.num(w.first().copied().unwrap_or(""))?;
        if w.len() != n + 1 {
            return Err(self.err(format!("`{key}` declares {n} values, has {}", w.len().saturating_sub(1))));
        }
        w[1..].iter().map(|s| self.num(s)).collect()
    }

    fn trees<T: Real>(&mut self, width: usize) -> Result<Vec<Tree<T>>> {
        let n: usize = self.scalar("trees")?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let m: usize = self.scalar("tree")?;
            let mut nodes = Vec::with_capacity(m);
            for _ in 0..m {
                let l = self.next()?;
                let w: Vec<&str> = l.split(' ').collect();
                let node = match w.as_slice() {
                    ["s", f, t, a, b] => {
                        let (feature, left, right): (usize, usize, usize) = (self.num(f)?, self.num(a)?, self.num(b)?);
                        if feature >= width || left >= m || right >= m || left <= nodes.len() || right <= nodes.len() {
                            return Err(self.err("split refers outside the tree"));
                        }
                        Node::Split { feature, threshold: self.num(t)?, left, right }
                    }
                    ["l", v] => Node::Leaf { value: self.num(v)? },
                    _ => return Err(self.err("bad node line")),
                };
                nodes.push(node);
            }
            if m == 0 {
                return Err(self.err("empty tree"));
            }
            out.push(Tree { nodes });
        }
        Ok(out)
    }
}

impl<T: Real> FromStr for Model<T> {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self> {
        let mut r = Lines { it: s.lines().enumerate(), line: 0 };
        if r.next()? != MODEL_MAGIC {
            return Err(r.err(format!("expected `{MODEL_MAGIC}`")));
        }
        let kind: String = r.scalar("kind")?;
        let width: usize = r.scalar("width")?;
        let body = match kind.as_str() {
            "lr" | "svm" => {
                let weights: Vec<T> = r.vector("weights")?;
                if weights.len() != width {
                    return Err(r.err("weight count differs from width"));
                }
                let bias = r.scalar("bias")?;
                if kind == "lr" {
                    ModelBody::Lr(LogisticModel { weights, bias })
                } else {
                    let w = r.keyed("platt")?;
                    if w.len() != 2 {
                        return Err(r.err("`platt` takes two values"));
                    }
                    ModelBody::Svm(SvmModel { weights, bias, platt_a: r.num(w[0])?, platt_b: r.num(w[1])? })
                }
            }
            "gbt" => {
                let base = r.scalar("base")?;
                ModelBody::Gbt(GbtModel { base, trees: r.trees(width)? })
            }
            "rf" => {
                let trees = r.trees(width)?;
                if trees.is_empty() {
                    return Err(r.err("forest without trees"));
                }
                ModelBody::Rf(Forest { trees })
            }
            "constant" => ModelBody::Constant(r.scalar("p")?),
            other => return Err(r.err(format!("unknown model kind `{other}`"))),
        };
        if r.next()? != "end" {
            return Err(r.err("expected `end`"));
        }
        Ok(Model { width, body })
    }
}
