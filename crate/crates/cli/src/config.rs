//! Strict INI configuration with command-line overrides.
//!
//! Every key has a default except `run.seed`. The effective configuration
//! is the default table overlaid with the file and then the overrides; it
//! is rendered canonically so it can be echoed and hashed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use comprehend_core::balance::{Affinity, LabelSpreadConfig};
use comprehend_core::dataset::FeatureSet;
use comprehend_core::ensemble::{DecisionThreshold, EvalConfig, GridSpec, Method, StackingConfig, Task};
use comprehend_core::learners::{LearnerConfig, LearnerKind};
use comprehend_core::pipeline::{FeatureConfig, PreprocessConfig};
use comprehend_core::signal::FilterSpec;
use comprehend_core::spectral::WelchParams;
use comprehend_core::synth::SynthConfig;

use crate::error::CliError;

type Key = (String, String);

/// Ordered (section, key, default) table of everything but the learners.
const FIXED_KEYS: &[(&str, &str, &str)] = &[
    ("run", "seed", ""),
    ("run", "task", "confusion"),
    ("run", "features", "eeg+nlp"),
    ("run", "method", "stack"),
    ("paths", "out_dir", "out"),
    ("paths", "raw_dir", "raw"),
    ("paths", "manifest", "raw/manifest.csv"),
    ("paths", "trees", "nlp/trees.tsv"),
    ("paths", "conllu", "nlp/dependencies.conllu"),
    ("paths", "responses", "labels/responses.csv"),
    ("synth", "n_participants", "21"),
    ("synth", "passages_per_participant", "5"),
    ("synth", "sentences_min", "9"),
    ("synth", "sentences_max", "10"),
    ("synth", "sample_rate_hz", "256"),
    ("synth", "effect_size", "1"),
    ("synth", "label_noise", "0.02"),
    ("synth", "missing_correct_frac", "0.1"),
    ("preprocess", "normalize", "true"),
    ("preprocess", "filter_lo_hz", "4"),
    ("preprocess", "filter_hi_hz", "80"),
    ("preprocess", "filter_order", "4"),
    ("preprocess", "zero_phase", "true"),
    ("preprocess", "eog", "true"),
    ("preprocess", "eog_threshold_uv", "100"),
    ("preprocess", "eog_window_s", "0.5"),
    ("features", "window_len", "512"),
    ("features", "overlap", "0.5"),
    ("features", "min_window", "128"),
    ("features", "log_power", "true"),
    ("features", "exclude_punct", "false"),
    ("dataset", "per_participant_median", "false"),
    ("eval", "k_folds", "10"),
    ("eval", "grouped", "true"),
    ("eval", "inner_folds", "3"),
    ("eval", "oof_folds", "5"),
    ("eval", "meta_l2", "0.001"),
    ("eval", "smote_k", "5"),
    ("eval", "smote_ratio", "1"),
    ("eval", "threshold", "prior_rank"),
    ("eval", "spread_graph", "knn"),
    ("eval", "spread_k", "7"),
    ("eval", "spread_gamma", "1"),
    ("eval", "spread_alpha", "0.2"),
    ("eval", "spread_max_iter", "30"),
    ("eval", "spread_tol", "0.001"),
    ("bench", "kernels", "filter,welch_psd,tree_split,label_spread"),
    ("bench", "sizes", ""),
    ("bench", "iterations", "5"),
    ("bench", "parallel", "false"),
];

const LEARNER_SECTIONS: [LearnerKind; 4] = [LearnerKind::Lr, LearnerKind::Rf, LearnerKind::Svm, LearnerKind::Gbt];

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn learner_defaults(kind: LearnerKind) -> Vec<(String, String)> {
    let cfg = LearnerConfig::default_for(kind);
    let mut out: Vec<(String, String)> = cfg.params().into_iter().map(|(k, v)| (k.to_string(), fmt_num(v))).collect();
    for (p, vals) in GridSpec::default_for(kind).params {
        out.push((format!("grid.{p}"), vals.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(",")));
    }
    out
}

fn is_learner_key(kind: LearnerKind, key: &str) -> bool {
    let names = LearnerConfig::param_names(kind);
    names.contains(&key) || key.strip_prefix("grid.").is_some_and(|p| names.contains(&p))
}

/// Default table in canonical order.
fn default_table() -> Vec<(Key, String)> {
    let mut t: Vec<(Key, String)> =
        FIXED_KEYS.iter().map(|(s, k, v)| ((s.to_string(), k.to_string()), v.to_string())).collect();
    for kind in LEARNER_SECTIONS {
        for (k, v) in learner_defaults(kind) {
            t.push(((kind.name().to_string(), k), v));
        }
    }
    t
}

fn known(section: &str, key: &str) -> bool {
    FIXED_KEYS.iter().any(|(s, k, _)| *s == section && *k == key)
        || LearnerKind::parse(section).is_some_and(|kind| is_learner_key(kind, key))
}

fn known_section(section: &str) -> bool {
    FIXED_KEYS.iter().any(|(s, _, _)| *s == section) || LearnerKind::parse(section).is_some()
}

/// Parses `[section]` headers and `key = value` lines. `#` and `;` start
/// comment lines. Keys outside a section, unknown sections or keys, and
/// repeated keys are errors.
pub fn parse_ini(text: &str, origin: &str) -> Result<BTreeMap<Key, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = || format!("{origin}:{}", ln + 1);
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::config(format!("{}: malformed section header `{line}`", at())))?
                .trim();
            if !known_section(name) {
                return Err(CliError::config(format!("{}: unknown section [{name}]", at())));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("{}: expected `key = value`, got `{line}`", at())))?;
        let (k, v) = (k.trim(), v.trim());
        let sec = section
            .as_deref()
            .ok_or_else(|| CliError::config(format!("{}: key `{k}` outside any section", at())))?;
        if !known(sec, k) {
            return Err(CliError::config(format!("{}: unknown key `{sec}.{k}`", at())));
        }
        if out.insert((sec.to_string(), k.to_string()), v.to_string()).is_some() {
            return Err(CliError::config(format!("{}: duplicate key `{sec}.{k}`", at())));
        }
    }
    Ok(out)
}

/// `section.key=value`.
pub fn parse_override(s: &str) -> Result<(Key, String), CliError> {
    let (path, v) =
        s.split_once('=').ok_or_else(|| CliError::config(format!("override `{s}` is not section.key=value")))?;
    let (sec, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::config(format!("override `{s}` is not section.key=value")))?;
    if !known(sec, key) {
        return Err(CliError::config(format!("unknown key `{sec}.{key}`")));
    }
    Ok(((sec.to_string(), key.to_string()), v.trim().to_string()))
}

/// The merged key table.
#[derive(Clone, Debug, PartialEq)]
pub struct Effective {
    entries: Vec<(Key, String)>,
}

impl Effective {
    pub fn merge(file: &BTreeMap<Key, String>, overrides: &[(Key, String)]) -> Self {
        let mut entries = default_table();
        let mut set = |k: &Key, v: &String| {
            if let Some(slot) = entries.iter_mut().find(|(key, _)| key == k) {
                slot.1 = v.clone();
            } else {
                // grid keys absent from the default grid
                entries.push((k.clone(), v.clone()));
            }
        };
        for (k, v) in file {
            set(k, v);
        }
        for (k, v) in overrides {
            set(k, v);
        }
        Self { entries }
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        self.entries
            .iter()
            .find(|((s, k), _)| s == section && k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or("")
    }

    /// Canonical INI text, sections in table order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for ((s, k), v) in &self.entries {
            if s != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn grid_keys(&self, section: &str) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter(|((s, _), _)| s == section)
            .filter_map(|((_, k), v)| k.strip_prefix("grid.").map(|p| (p, v.as_str())))
            .collect()
    }
}

fn bad(section: &str, key: &str, v: &str, want: &str) -> CliError {
    CliError::config(format!("{section}.{key} = `{v}`: expected {want}"))
}

fn num(e: &Effective, s: &str, k: &str) -> Result<f64, CliError> {
    let v = e.get(s, k);
    match v {
        "inf" => Ok(f64::INFINITY),
        _ => v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(s, k, v, "a number")),
    }
}

fn int(e: &Effective, s: &str, k: &str) -> Result<usize, CliError> {
    let v = e.get(s, k);
    v.parse::<usize>().map_err(|_| bad(s, k, v, "a non-negative integer"))
}

fn flag(e: &Effective, s: &str, k: &str) -> Result<bool, CliError> {
    match e.get(s, k) {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(bad(s, k, v, "true or false")),
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub raw_dir: PathBuf,
    pub manifest: PathBuf,
    pub trees: PathBuf,
    pub conllu: PathBuf,
    pub responses: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub kernels: Vec<String>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub parallel: bool,
}

/// Typed view of the effective configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub feature_set: FeatureSet,
    pub method: Method,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub exclude_punct: bool,
    pub per_participant_median: bool,
    pub eval: EvalConfig,
    pub bench: BenchSettings,
}

impl PipelineConfig {
    pub fn from_effective(e: &Effective) -> Result<Self, CliError> {
        let seed_text = e.get("run", "seed");
        if seed_text.is_empty() {
            return Err(CliError::config("missing required key `run.seed`".into()));
        }
        let seed: u64 = seed_text.parse().map_err(|_| bad("run", "seed", seed_text, "an unsigned integer"))?;
        let task = Task::parse(e.get("run", "task"))
            .ok_or_else(|| bad("run", "task", e.get("run", "task"), "correctness or confusion"))?;
        let feature_set = FeatureSet::parse(e.get("run", "features"))
            .ok_or_else(|| bad("run", "features", e.get("run", "features"), "eeg, eeg+nlp or eeg+nlp+con"))?;
        let method = Method::parse(e.get("run", "method"))
            .ok_or_else(|| bad("run", "method", e.get("run", "method"), "lr, rf, svm or stack"))?;

        let out_dir = PathBuf::from(e.get("paths", "out_dir"));
        let under = |k: &str| resolve(&out_dir, e.get("paths", k));
        let paths = Paths {
            raw_dir: under("raw_dir"),
            manifest: under("manifest"),
            trees: under("trees"),
            conllu: under("conllu"),
            responses: under("responses"),
            out_dir: out_dir.clone(),
        };

        let synth = SynthConfig {
            n_participants: int(e, "synth", "n_participants")?,
            passages_per_participant: int(e, "synth", "passages_per_participant")?,
            sentences_min: int(e, "synth", "sentences_min")?,
            sentences_max: int(e, "synth", "sentences_max")?,
            sample_rate_hz: num(e, "synth", "sample_rate_hz")?,
            effect_size: num(e, "synth", "effect_size")?,
            label_noise: num(e, "synth", "label_noise")?,
            missing_correct_frac: num(e, "synth", "missing_correct_frac")?,
            seed,
        };
        synth.validate().map_err(|err| CliError::config(err.to_string()))?;

        let preprocess = PreprocessConfig {
            normalize: flag(e, "preprocess", "normalize")?,
            filter: FilterSpec {
                lo_hz: num(e, "preprocess", "filter_lo_hz")?,
                hi_hz: num(e, "preprocess", "filter_hi_hz")?,
                order: int(e, "preprocess", "filter_order")?,
                zero_phase: flag(e, "preprocess", "zero_phase")?,
                ..FilterSpec::default()
            },
            eog: flag(e, "preprocess", "eog")?,
            eog_threshold_uv: num(e, "preprocess", "eog_threshold_uv")?,
            eog_window_s: num(e, "preprocess", "eog_window_s")?,
        };
        if !(preprocess.eog_threshold_uv > 0.0 && preprocess.eog_window_s > 0.0) {
            return Err(CliError::config("preprocess.eog_threshold_uv and eog_window_s must be positive".into()));
        }

        let features = FeatureConfig {
            welch: WelchParams {
                window_len: int(e, "features", "window_len")?,
                overlap_frac: num(e, "features", "overlap")?,
                min_window: int(e, "features", "min_window")?,
            },
            log_power: flag(e, "features", "log_power")?,
            ..FeatureConfig::default()
        };

        let mut learners = BTreeMap::new();
        let mut grids = BTreeMap::new();
        for kind in LEARNER_SECTIONS {
            let sec = kind.name();
            let mut cfg = LearnerConfig::default_for(kind);
            for p in LearnerConfig::param_names(kind) {
                cfg = cfg.with_param(p, num(e, sec, p)?).map_err(|err| CliError::config(format!("[{sec}] {err}")))?;
            }
            let mut grid = GridSpec::default();
            for (p, vals) in e.grid_keys(sec) {
                let parsed = list(vals)
                    .into_iter()
                    .map(|v| match v {
                        "inf" => Ok(f64::INFINITY),
                        _ => v.parse::<f64>().map_err(|_| bad(sec, &format!("grid.{p}"), vals, "a comma list of numbers")),
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                if !parsed.is_empty() {
                    grid.params.push((p.to_string(), parsed));
                }
            }
            grid.cells(&cfg).map_err(|err| CliError::config(format!("[{sec}] grid: {err}")))?;
            learners.insert(kind, cfg);
            grids.insert(kind, grid);
        }

        let spread = LabelSpreadConfig {
            graph: match e.get("eval", "spread_graph") {
                "knn" => Affinity::Knn { k: int(e, "eval", "spread_k")? },
                "rbf" => Affinity::Rbf { gamma: num(e, "eval", "spread_gamma")? },
                v => return Err(bad("eval", "spread_graph", v, "knn or rbf")),
            },
            alpha: num(e, "eval", "spread_alpha")?,
            max_iter: int(e, "eval", "spread_max_iter")?,
            tol: num(e, "eval", "spread_tol")?,
        };
        spread.validate().map_err(|err| CliError::config(format!("[eval] {err}")))?;
        let meta_l2 = num(e, "eval", "meta_l2")?;
        let stacking = StackingConfig {
            oof_folds: int(e, "eval", "oof_folds")?,
            meta: LearnerConfig::default_for(LearnerKind::Lr)
                .with_param("l2", meta_l2)
                .map_err(|err| CliError::config(format!("eval.meta_l2: {err}")))?,
            seed,
            ..StackingConfig::default()
        };
        stacking.validate().map_err(|err| CliError::config(format!("[eval] {err}")))?;
        let per_participant_median = flag(e, "dataset", "per_participant_median")?;
        let eval = EvalConfig {
            k_folds: int(e, "eval", "k_folds")?,
            grouped: flag(e, "eval", "grouped")?,
            inner_folds: int(e, "eval", "inner_folds")?,
            learners,
            grids,
            stacking,
            smote_k: int(e, "eval", "smote_k")?,
            smote_ratio: num(e, "eval", "smote_ratio")?,
            spread,
            per_participant_median,
            threshold: DecisionThreshold::parse(e.get("eval", "threshold"))
                .ok_or_else(|| bad("eval", "threshold", e.get("eval", "threshold"), "half, train_prior or prior_rank"))?,
            seed,
        };
        if eval.k_folds < 2 || eval.inner_folds < 2 {
            return Err(CliError::config("eval.k_folds and eval.inner_folds must be at least 2".into()));
        }

        let bench = BenchSettings {
            kernels: list(e.get("bench", "kernels")).into_iter().map(String::from).collect(),
            sizes: list(e.get("bench", "sizes"))
                .into_iter()
                .map(|v| v.parse::<usize>().map_err(|_| bad("bench", "sizes", e.get("bench", "sizes"), "a comma list of sizes")))
                .collect::<Result<_, _>>()?,
            iterations: int(e, "bench", "iterations")?,
            parallel: flag(e, "bench", "parallel")?,
        };

        Ok(Self {
            seed,
            task,
            feature_set,
            method,
            paths,
            synth,
            preprocess,
            features,
            exclude_punct: flag(e, "features", "exclude_punct")?,
            per_participant_median,
            eval,
            bench,
        })
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
