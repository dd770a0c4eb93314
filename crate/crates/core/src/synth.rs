//! Synthetic reading experiments with planted structure.
//!
//! Every sentence has a latent difficulty `d_s ~ N(0, 1)`, centered on its
//! sample median; each reader sees
//! it as `d_ps = d_s + 0.2 e` with reader noise `e ~ N(0, 1)`. Difficulty
//! (scaled by `effect_size`) lengthens dependencies and deepens trees, and
//! raises theta while lowering alpha burst amplitude in the EEG. Ratings are
//! a logistic squashing of `d_ps` onto 1..=10 and correctness is Bernoulli
//! with `P(correct) = sigmoid(-8 d_ps)`; both ignore `effect_size`, so at
//! `effect_size = 0` no feature carries label information.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::dataset::{format_responses, median, ConfusionLabel, Response, RowKey};
use crate::matrix::Matrix;
use crate::nlp::{format_conllu, format_tree_file, ConstituencyTree, DepToken, DependencySentence, TreeRecord};
use crate::scalar::{derive_seed, sigmoid};
use crate::signal::{format_manifest, format_recording, EegRecording, ManifestEntry, SegmentSpec, MUSE_CHANNELS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Nlp(#[from] crate::nlp::NlpError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub passages_per_participant: usize,
    /// Sentences per passage are drawn uniformly from this inclusive range.
    pub sentences_min: usize,
    pub sentences_max: usize,
    pub sample_rate_hz: f64,
    pub effect_size: f64,
    /// Probability that a reported rating or correctness value is replaced
    /// by a uniformly random one.
    pub label_noise: f64,
    pub missing_correct_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 21,
            passages_per_participant: 5,
            sentences_min: 9,
            sentences_max: 10,
            sample_rate_hz: 256.0,
            effect_size: 1.0,
            label_noise: 0.02,
            missing_correct_frac: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_participants == 0 || self.passages_per_participant == 0 {
            return bad("need at least one participant and one passage");
        }
        if self.sentences_min == 0 || self.sentences_min > self.sentences_max {
            return bad("sentence range must be non-empty and start at 1 or more");
        }
        if !(self.sample_rate_hz >= 200.0 && self.sample_rate_hz.is_finite()) {
            return bad("sample rate must be at least 200 Hz so the 80 Hz band edge fits");
        }
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return bad("effect_size must be >= 0");
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 0.5]");
        }
        if !(0.0..1.0).contains(&self.missing_correct_frac) {
            return bad("missing_correct_frac must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub key: RowKey,
    pub difficulty: f64,
    pub confusion_rating: u8,
    /// Global median split of all emitted ratings.
    pub confusion_label: ConfusionLabel,
    /// Reported correctness, including values withheld from the responses.
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub recordings: Vec<EegRecording<f64>>,
    pub manifest: Vec<ManifestEntry>,
    pub trees: Vec<TreeRecord>,
    pub dependencies: Vec<DependencySentence>,
    pub responses: Vec<Response>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Reader-level spread of perceived difficulty.
pub const READER_NOISE: f64 = 0.2;
/// Slope of `P(correct)` against perceived difficulty.
pub const CORRECT_SLOPE: f64 = 8.0;
const RATING_SLOPE: f64 = 1.5;
/// Puts the 5|6 rating boundary slightly above the median difficulty, so the
/// global median rating is 5 and `> median` keeps close to half the rows.
const RATING_SHIFT: f64 = 0.1;
const SECONDS_PER_TOKEN: f64 = 0.25;
const SENTENCE_GAP_S: f64 = 0.6;
const LEAD_S: f64 = 1.0;
const NOISE_UV: f64 = 10.0;
const BURST_UV: f64 = 6.0;
const BURST_GAIN: f64 = 0.15;

const WORDS: [(&str, &str); 12] = [
    ("the", "DET"),
    ("student", "NOUN"),
    ("reads", "VERB"),
    ("a", "DET"),
    ("passage", "NOUN"),
    ("about", "ADP"),
    ("neural", "ADJ"),
    ("signals", "NOUN"),
    ("which", "PRON"),
    ("slowly", "ADV"),
    ("describe", "VERB"),
    ("complex", "ADJ"),
];

struct Sentence {
    passage_id: String,
    sentence_id: u32,
    difficulty: f64,
    tree: ConstituencyTree,
    deps: DependencySentence,
}

impl Sentence {
    fn n_tokens(&self) -> usize {
        self.deps.tokens.len()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Heads for tokens `1..=n`: token 1 is the root, the final token is
/// punctuation attached to the root, and every other token attaches
/// `1 + Poisson(reach)` positions to its left (clamped at token 1).
fn dependency_heads(n: usize, reach: f64, rng: &mut impl Rng) -> Vec<usize> {
    let pois = Poisson::new(reach).expect("positive reach");
    (1..=n)
        .map(|i| {
            if i == 1 {
                0
            } else if i == n {
                1
            } else {
                let dist = 1 + pois.sample(rng) as usize;
                i.saturating_sub(dist).max(1)
            }
        })
        .collect()
}

/// Binary bracketing where spans longer than `chunk` split at a random
/// interior point; smaller chunks give more internal nodes.
fn bracket(tokens: &[(String, String)], chunk: usize, depth: usize, rng: &mut impl Rng) -> ConstituencyTree {
    let leaves = |t: &[(String, String)]| t.iter().map(|(w, pos)| ConstituencyTree::leaf(pos.clone(), w.clone())).collect();
    if tokens.len() <= chunk || tokens.len() < 2 {
        return ConstituencyTree::node("NP", leaves(tokens));
    }
    let cut = rng.random_range(1..tokens.len());
    let label = if depth.is_multiple_of(2) { "VP" } else { "S" };
    ConstituencyTree::node(
        label,
        vec![bracket(&tokens[..cut], chunk, depth + 1, rng), bracket(&tokens[cut..], chunk, depth + 1, rng)],
    )
}

fn make_sentence(passage_id: &str, sentence_id: u32, d: f64, cfg: &SynthConfig, rng: &mut impl Rng) -> Sentence {
    let e = cfg.effect_size * d;
    let n = (12.0 + 2.5 * e + normal(rng)).round().clamp(5.0, 30.0) as usize;
    let reach = (0.8 * e).exp();
    let heads = dependency_heads(n, reach, rng);
    let mut toks: Vec<(String, String)> = (0..n - 1)
        .map(|_| {
            let (w, p) = WORDS[rng.random_range(0..WORDS.len())];
            (w.to_string(), p.to_string())
        })
        .collect();
    toks.push((".".into(), "PUNCT".into()));
    let tokens = toks
        .iter()
        .zip(&heads)
        .enumerate()
        .map(|(i, ((w, p), &h))| DepToken {
            index: i + 1,
            form: w.clone(),
            upos: p.clone(),
            head: h,
            deprel: if h == 0 {
                "root".into()
            } else if p == "PUNCT" {
                "punct".into()
            } else {
                "dep".into()
            },
        })
        .collect();
    let chunk = (4.0 - 1.5 * e).round().clamp(1.0, 8.0) as usize;
    let inner = bracket(&toks, chunk, 0, rng);
    Sentence {
        passage_id: passage_id.to_string(),
        sentence_id,
        difficulty: d,
        tree: ConstituencyTree::node("ROOT", vec![inner]),
        deps: DependencySentence { passage_id: Some(passage_id.into()), sentence_id: Some(sentence_id), tokens },
    }
}

/// Approximate 1/f noise (Kellet's filter bank) scaled to `std`.
fn pink_noise(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w = normal(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let p = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            p
        })
        .collect();
    let m = out.iter().sum::<f64>() / n as f64;
    let s = (out.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|v| *v = (*v - m) / s * std);
    out
}

const CHANNEL_THETA_GAIN: [f64; 4] = [0.8, 1.2, 1.2, 0.8];
const CHANNEL_ALPHA_GAIN: [f64; 4] = [1.2, 0.8, 0.8, 1.2];
const FRONTAL: [usize; 2] = [1, 2];

fn add_burst(col: &mut [f64], start: usize, len: usize, freq: f64, amp: f64, phase: f64, fs: f64) {
    let tau = std::f64::consts::TAU;
    for k in 0..len {
        let taper = 0.5 - 0.5 * (tau * k as f64 / len.max(2) as f64).cos();
        col[start + k] += amp * taper * (tau * freq * k as f64 / fs + phase).sin();
    }
}

fn rating_from(d: f64) -> u8 {
    (1.0 + 9.0 * sigmoid(RATING_SLOPE * (d - RATING_SHIFT))).round().clamp(1.0, 10.0) as u8
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let fs = cfg.sample_rate_hz;
    let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut slots = Vec::new();
    for p in 1..=cfg.passages_per_participant {
        let count = srng.random_range(cfg.sentences_min..=cfg.sentences_max);
        slots.extend((1..=count).map(|s| (format!("passage{p}"), s as u32)));
    }
    // Centered on the sample median so half the sentences sit on each side
    // of the rating split.
    let mut ds: Vec<f64> = slots.iter().map(|_| normal(&mut srng)).collect();
    let mut sorted = ds.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let centre = if sorted.len().is_multiple_of(2) { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
    ds.iter_mut().for_each(|d| *d -= centre);
    let sentences: Vec<Sentence> =
        slots.iter().zip(&ds).map(|((pid, s), &d)| make_sentence(pid, *s, d, cfg, &mut srng)).collect();
    let trees = sentences
        .iter()
        .map(|s| TreeRecord { passage_id: s.passage_id.clone(), sentence_id: s.sentence_id, tree: s.tree.clone() })
        .collect();
    let dependencies = sentences.iter().map(|s| s.deps.clone()).collect();

    let channels: Vec<String> = MUSE_CHANNELS.iter().map(|c| c.to_string()).collect();
    let mut recordings = Vec::new();
    let mut manifest = Vec::new();
    // (key, d_ps, rating, correct, withheld)
    let mut reports: Vec<(RowKey, f64, u8, bool, bool)> = Vec::new();
    for p in 1..=cfg.n_participants {
        let participant = format!("S{p:02}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100 + p as u64));
        let mut t = LEAD_S;
        let mut spans = Vec::with_capacity(sentences.len());
        for s in &sentences {
            let dur = SECONDS_PER_TOKEN * s.n_tokens() as f64 + rng.random_range(-0.1..0.1);
            let seg = SegmentSpec::new(s.passage_id.clone(), s.sentence_id, t, t + dur)?;
            spans.push(seg.clone());
            manifest.push(ManifestEntry { participant_id: participant.clone(), segment: seg });
            t += dur + SENTENCE_GAP_S;
        }
        let n_samples = ((t + LEAD_S) * fs).ceil() as usize;
        let mut cols: Vec<Vec<f64>> = (0..channels.len()).map(|_| pink_noise(n_samples, NOISE_UV, &mut rng)).collect();
        for (s, seg) in sentences.iter().zip(&spans) {
            let d_ps = s.difficulty + READER_NOISE * normal(&mut rng);
            let (a, b) = seg.sample_range(fs);
            let len = b - a;
            let g = BURST_GAIN * cfg.effect_size * d_ps;
            let f_theta = rng.random_range(4.5..7.5);
            let f_alpha = rng.random_range(8.5..11.5);
            for (c, col) in cols.iter_mut().enumerate() {
                let ph1 = rng.random_range(0.0..std::f64::consts::TAU);
                let ph2 = rng.random_range(0.0..std::f64::consts::TAU);
                add_burst(col, a, len, f_theta, BURST_UV * CHANNEL_THETA_GAIN[c] * g.exp(), ph1, fs);
                add_burst(col, a, len, f_alpha, BURST_UV * CHANNEL_ALPHA_GAIN[c] * (-g).exp(), ph2, fs);
            }
            // Blink in the following gap on the frontal pair.
            if rng.random_bool(0.5) {
                let start = ((seg.t_end_s + 0.15) * fs) as usize;
                let blen = (0.3 * fs) as usize;
                let amp = rng.random_range(150.0..250.0);
                for (k, &c) in FRONTAL.iter().enumerate() {
                    let scale = if k == 0 { 1.0 } else { 0.8 };
                    for j in 0..blen.min(n_samples.saturating_sub(start)) {
                        cols[c][start + j] += amp * scale * (std::f64::consts::PI * j as f64 / blen as f64).sin();
                    }
                }
            }
            let mut rating = rating_from(d_ps);
            let mut correct = rng.random_bool(sigmoid(-CORRECT_SLOPE * d_ps));
            if rng.random_bool(cfg.label_noise) {
                rating = rng.random_range(1..=10);
            }
            if rng.random_bool(cfg.label_noise) {
                correct = rng.random_bool(0.5);
            }
            let withheld = rng.random_bool(cfg.missing_correct_frac);
            reports.push((RowKey::new(participant.clone(), s.passage_id.clone(), s.sentence_id), d_ps, rating, correct, withheld));
        }
        let mut samples = Matrix::zeros(n_samples, channels.len());
        for (c, col) in cols.iter().enumerate() {
            samples.set_column(c, col);
        }
        recordings.push(EegRecording::new(participant, fs, channels.clone(), samples)?);
    }

    let mut ratings: Vec<f64> = reports.iter().map(|r| f64::from(r.2)).collect();
    let med = median(&mut ratings);
    let responses = reports
        .iter()
        .map(|(key, _, rating, correct, withheld)| Response {
            key: key.clone(),
            confusion_rating: Some(*rating),
            correct: if *withheld { None } else { Some(*correct) },
        })
        .collect();
    let ground_truth = reports
        .into_iter()
        .map(|(key, d, rating, correct, _)| GroundTruth {
            key,
            difficulty: d,
            confusion_rating: rating,
            confusion_label: if f64::from(rating) > med { ConfusionLabel::Confused } else { ConfusionLabel::NotConfused },
            correct,
        })
        .collect();
    Ok(SynthOutput { recordings, manifest, trees, dependencies, responses, ground_truth })
}

pub const GROUND_TRUTH_HEADER: &str =
    "participant_id,passage_id,sentence_id,difficulty,confusion_rating,confusion_label,correct";

pub fn format_ground_truth(rows: &[GroundTruth]) -> String {
    let mut out = format!("{GROUND_TRUTH_HEADER}\n");
    for g in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.key.participant_id,
            g.key.passage_id,
            g.key.sentence_id,
            g.difficulty,
            g.confusion_rating,
            g.confusion_label.as_str(),
            g.correct as u8
        );
    }
    out
}

/// Relative output paths.
pub const RAW_DIR: &str = "raw";
pub const MANIFEST_FILE: &str = "raw/manifest.csv";
pub const TREES_FILE: &str = "nlp/trees.tsv";
pub const CONLLU_FILE: &str = "nlp/dependencies.conllu";
pub const RESPONSES_FILE: &str = "labels/responses.csv";
pub const GROUND_TRUTH_FILE: &str = "labels/ground_truth.csv";

fn write(root: &Path, rel: &str, text: &str) -> Result<(), SynthError> {
    let path = root.join(rel);
    let io_err = |source| SynthError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(&path, text).map_err(io_err)
}

/// Writes `raw/<participant>.csv`, the manifest, both annotation files and
/// the label files under `root`.
pub fn write_tree(out: &SynthOutput, root: &Path) -> Result<(), SynthError> {
    for rec in &out.recordings {
        write(root, &format!("{RAW_DIR}/{}.csv", rec.participant_id), &format_recording(rec))?;
    }
    write(root, MANIFEST_FILE, &format_manifest(&out.manifest))?;
    write(root, TREES_FILE, &format_tree_file(&out.trees))?;
    write(root, CONLLU_FILE, &format_conllu(&out.dependencies))?;
    write(root, RESPONSES_FILE, &format_responses(&out.responses))?;
    write(root, GROUND_TRUTH_FILE, &format_ground_truth(&out.ground_truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{dependency_metrics, parse_conllu, parse_tree_file};

    fn small() -> SynthConfig {
        SynthConfig { n_participants: 3, passages_per_participant: 2, ..Default::default() }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let n_sent = a.trees.len();
        assert!((18..=20).contains(&n_sent));
        assert_eq!(a.manifest.len(), 3 * n_sent);
        assert_eq!(a.responses.len(), 3 * n_sent);
        for (t, d) in a.trees.iter().zip(&a.dependencies) {
            assert_eq!(t.tree.leaf_count(), d.tokens.len());
            let heads: Vec<usize> = d.tokens.iter().map(|t| t.head).collect();
            DependencySentence::from_heads(&heads).unwrap();
        }
        assert_eq!(parse_tree_file(&format_tree_file(&a.trees)).unwrap(), a.trees);
        let back = parse_conllu(&format_conllu(&a.dependencies)).unwrap();
        assert_eq!(back, a.dependencies);
    }

    #[test]
    fn ratings_monotone_without_noise() {
        let cfg = SynthConfig { label_noise: 0.0, effect_size: 3.0, ..small() };
        let out = generate(&cfg).unwrap();
        let mut pairs: Vec<(f64, u8)> = out.ground_truth.iter().map(|g| (g.difficulty, g.confusion_rating)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn difficulty_lengthens_dependencies() {
        let cfg = SynthConfig { effect_size: 1.0, passages_per_participant: 10, n_participants: 1, ..Default::default() };
        let out = generate(&cfg).unwrap();
        let gt = &out.ground_truth;
        let avg: Vec<f64> = out.dependencies.iter().map(|d| dependency_metrics(d).avg).collect();
        let (mut hard, mut easy) = (Vec::new(), Vec::new());
        for (g, a) in gt.iter().zip(&avg) {
            if g.difficulty > 0.0 { hard.push(*a) } else { easy.push(*a) }
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(m(&hard) > m(&easy));
    }

    #[test]
    fn config_checks() {
        assert!(SynthConfig { label_noise: 0.6, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { missing_correct_frac: 1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { sentences_min: 11, ..Default::default() }.validate().is_err());
    }
}
