//! Sentence complexity from pre-computed parses: bracketed constituency
//! trees and CoNLL-U dependency blocks.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("empty tree")]
    EmptyTree,
    #[error("token `{0}` outside a preterminal")]
    BareToken(String),
    #[error("input continues after the root bracket at byte {0}")]
    TrailingInput(usize),
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: head {head} outside 0..={n}")]
    HeadOutOfRange { line: usize, head: usize, n: usize },
    #[error("sentence ending at line {line} has cyclic heads")]
    CyclicHeads { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NlpError> = std::result::Result<T, E>;

/// Labeled node with either children or a single token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstituencyTree {
    pub label: String,
    pub children: Vec<ConstituencyTree>,
    pub token: Option<String>,
}

impl ConstituencyTree {
    pub fn leaf(label: impl Into<String>, token: impl Into<String>) -> Self {
        Self { label: label.into(), children: Vec::new(), token: Some(token.into()) }
    }

    pub fn node(label: impl Into<String>, children: Vec<ConstituencyTree>) -> Self {
        assert!(!children.is_empty(), "internal node needs children");
        Self { label: label.into(), children, token: None }
    }

    /// Tokens in surface order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if let Some(t) = &n.token {
                out.push(t.as_str());
            }
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.tokens().len()
    }

    /// Labeled nodes, root included.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ConstituencyTree::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ConstituencyTree::depth).max().unwrap_or(0)
    }
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.label)?;
        if let Some(t) = &self.token {
            write!(f, " {t}")?;
        }
        for c in &self.children {
            write!(f, " {c}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str, usize),
}

fn tokenize(text: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Tok::Open(i));
                i += 1;
            }
            b')' => {
                out.push(Tok::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push(Tok::Atom(&text[start..i], start));
            }
        }
    }
    out
}

/// Parses `(LABEL child ...)`. An unlabeled outer bracket `( (S ...))` gets
/// the empty label.
pub fn parse_bracketed_tree(text: &str) -> Result<ConstituencyTree> {
    let toks = tokenize(text);
    let first = toks.first().ok_or(NlpError::EmptyTree)?;
    match first {
        Tok::Atom(a, _) => return Err(NlpError::BareToken(a.to_string())),
        Tok::Close(p) => return Err(NlpError::UnbalancedParens(*p)),
        Tok::Open(_) => {}
    }

    // Explicit stack of open nodes, so deep trees cannot overflow.
    let mut stack: Vec<ConstituencyTree> = Vec::new();
    let mut root = None;
    let mut i = 0;
    while i < toks.len() {
        if root.is_some() {
            let pos = match toks[i] {
                Tok::Open(p) | Tok::Close(p) | Tok::Atom(_, p) => p,
            };
            return Err(match toks[i] {
                Tok::Close(p) => NlpError::UnbalancedParens(p),
                _ => NlpError::TrailingInput(pos),
            });
        }
        match toks[i] {
            Tok::Open(_) => {
                let label = match toks.get(i + 1) {
                    Some(Tok::Atom(a, _)) => {
                        i += 1;
                        a.to_string()
                    }
                    _ => String::new(),
                };
                stack.push(ConstituencyTree { label, children: Vec::new(), token: None });
            }
            Tok::Atom(a, _) => {
                let top = stack.last_mut().ok_or_else(|| NlpError::BareToken(a.to_string()))?;
                if top.token.is_some() || !top.children.is_empty() {
                    return Err(NlpError::BareToken(a.to_string()));
                }
                top.token = Some(a.to_string());
            }
            Tok::Close(p) => {
                let node = stack.pop().ok_or(NlpError::UnbalancedParens(p))?;
                if node.token.is_none() && node.children.is_empty() {
                    return Err(NlpError::EmptyTree);
                }
                match stack.last_mut() {
                    Some(parent) => {
                        if parent.token.is_some() {
                            return Err(NlpError::BareToken(parent.token.clone().unwrap()));
                        }
                        parent.children.push(node);
                    }
                    None => root = Some(node),
                }
            }
        }
        i += 1;
    }
    root.ok_or(NlpError::UnbalancedParens(text.len()))
}

/// Number of subtrees: every labeled node that governs a smaller structure
/// (preterminals and the root included). Equals total nodes minus tokens.
pub fn subtree_count(tree: &ConstituencyTree) -> usize {
    tree.node_count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepToken {
    /// 1-based position.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

impl DepToken {
    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT" || self.deprel == "punct"
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DependencySentence {
    pub passage_id: Option<String>,
    pub sentence_id: Option<u32>,
    pub tokens: Vec<DepToken>,
}

impl DependencySentence {
    /// Builds a sentence from head indices alone, validating the tree.
    pub fn from_heads(heads: &[usize]) -> Result<Self> {
        let tokens = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| DepToken {
                index: i + 1,
                form: format!("w{}", i + 1),
                upos: "X".into(),
                head: h,
                deprel: if h == 0 { "root".into() } else { "dep".into() },
            })
            .collect();
        let s = Self { passage_id: None, sentence_id: None, tokens };
        s.validate(0)?;
        Ok(s)
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    fn validate(&self, line: usize) -> Result<()> {
        let n = self.tokens.len();
        for t in &self.tokens {
            if t.head > n {
                return Err(NlpError::HeadOutOfRange { line, head: t.head, n });
            }
        }
        // Walking up from any token must reach the root within n steps.
        for start in 0..n {
            let mut cur = start + 1;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(NlpError::CyclicHeads { line });
                }
            }
        }
        Ok(())
    }
}

/// Reads 10-column CoNLL-U; multiword ranges (`3-4`) and empty nodes (`5.1`)
/// are skipped. `# passage_id = ...` / `# sentence_id = ...` comments bind a
/// block to the segment manifest.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencySentence>> {
    let mut out = Vec::new();
    let mut cur = DependencySentence::default();
    let mut has_lines = false;

    let mut finish = |cur: &mut DependencySentence, has_lines: &mut bool, line: usize| -> Result<()> {
        if !cur.tokens.is_empty() {
            cur.validate(line)?;
            out.push(std::mem::take(cur));
        } else {
            *cur = DependencySentence::default();
        }
        *has_lines = false;
        Ok(())
    };

    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if has_lines {
                finish(&mut cur, &mut has_lines, line_no)?;
            }
            continue;
        }
        has_lines = true;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                match k.trim() {
                    "passage_id" => cur.passage_id = Some(v.trim().to_string()),
                    "sentence_id" => {
                        let id = v.trim().parse().map_err(|_| NlpError::MalformedLine {
                            line: line_no,
                            msg: format!("bad sentence_id `{}`", v.trim()),
                        })?;
                        cur.sentence_id = Some(id);
                    }
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| NlpError::MalformedLine { line: line_no, msg };
        if cols.len() != 10 {
            return Err(bad(format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0].parse().map_err(|_| bad(format!("bad id `{}`", cols[0])))?;
        if index != cur.tokens.len() + 1 {
            return Err(bad(format!("id {index} breaks the 1..n sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| bad(format!("bad head `{}`", cols[6])))?;
        cur.tokens.push(DepToken {
            index,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    if has_lines {
        finish(&mut cur, &mut has_lines, last_line)?;
    }
    Ok(out)
}

pub fn format_conllu(sentences: &[DependencySentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        if let Some(p) = &s.passage_id {
            let _ = writeln!(out, "# passage_id = {p}");
        }
        if let Some(id) = s.sentence_id {
            let _ = writeln!(out, "# sentence_id = {id}");
        }
        for t in &s.tokens {
            let _ = writeln!(out, "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_", t.index, t.form, t.upos, t.head, t.deprel);
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DepOptions {
    /// Drop punctuation dependents and their word count.
    pub exclude_punct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DependencyMetrics {
    pub total: usize,
    pub normalized: f64,
    pub max: usize,
    pub avg: f64,
}

pub fn dependency_metrics(sent: &DependencySentence) -> DependencyMetrics {
    dependency_metrics_with(sent, DepOptions::default())
}

/// Distances `|index - head|` over non-root arcs.
pub fn dependency_metrics_with(sent: &DependencySentence, opts: DepOptions) -> DependencyMetrics {
    let kept = sent.tokens.iter().filter(|t| !(opts.exclude_punct && t.is_punct()));
    let mut n_words = 0usize;
    let mut total = 0usize;
    let mut max = 0usize;
    let mut arcs = 0usize;
    for t in kept {
        n_words += 1;
        if t.head == 0 {
            continue;
        }
        let d = t.index.abs_diff(t.head);
        total += d;
        max = max.max(d);
        arcs += 1;
    }
    DependencyMetrics {
        total,
        normalized: if n_words == 0 { 0.0 } else { total as f64 / n_words as f64 },
        max,
        avg: if arcs == 0 { 0.0 } else { total as f64 / arcs as f64 },
    }
}

pub const NLP_FEATURE_NAMES: [&str; 5] =
    ["subtree_count", "total_dep_len", "normalized_dep_len", "max_dep_dist", "avg_dep_dist"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlpFeatures {
    pub subtree_count: usize,
    pub total_dep_len: usize,
    pub normalized_dep_len: f64,
    pub max_dep_dist: usize,
    pub avg_dep_dist: f64,
}

impl NlpFeatures {
    /// Order of [`NLP_FEATURE_NAMES`].
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.subtree_count as f64,
            self.total_dep_len as f64,
            self.normalized_dep_len,
            self.max_dep_dist as f64,
            self.avg_dep_dist,
        ]
    }
}

/// Leaf count of the tree disagrees with the dependency token count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenCountMismatch {
    pub tree_leaves: usize,
    pub dep_tokens: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentenceFeatures {
    pub features: NlpFeatures,
    pub warning: Option<TokenCountMismatch>,
}

pub fn sentence_features(tree: &ConstituencyTree, sent: &DependencySentence, opts: DepOptions) -> SentenceFeatures {
    let dm = dependency_metrics_with(sent, opts);
    let leaves = tree.leaf_count();
    let warning = (leaves != sent.tokens.len())
        .then_some(TokenCountMismatch { tree_leaves: leaves, dep_tokens: sent.tokens.len() });
    SentenceFeatures {
        features: NlpFeatures {
            subtree_count: subtree_count(tree),
            total_dep_len: dm.total,
            normalized_dep_len: dm.normalized,
            max_dep_dist: dm.max,
            avg_dep_dist: dm.avg,
        },
        warning,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeRecord {
    pub passage_id: String,
    pub sentence_id: u32,
    pub tree: ConstituencyTree,
}

/// `passage_id<TAB>sentence_id<TAB>(tree)` per line.
pub fn parse_tree_file(text: &str) -> Result<Vec<TreeRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| NlpError::MalformedLine { line: i + 1, msg };
        let mut parts = line.splitn(3, '\t');
        let (Some(p), Some(s), Some(t)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected passage_id<TAB>sentence_id<TAB>tree".into()));
        };
        let sentence_id = s.trim().parse().map_err(|_| bad(format!("bad sentence_id `{s}`")))?;
        let tree = parse_bracketed_tree(t).map_err(|e| bad(e.to_string()))?;
        out.push(TreeRecord { passage_id: p.trim().to_string(), sentence_id, tree });
    }
    Ok(out)
}

pub fn format_tree_file(records: &[TreeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.passage_id, r.sentence_id, r.tree);
    }
    out
}

pub fn load_tree_file(path: &Path) -> Result<Vec<TreeRecord>> {
    parse_tree_file(&fs::read_to_string(path)?)
}

pub fn load_conllu(path: &Path) -> Result<Vec<DependencySentence>> {
    parse_conllu(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG: &str = "(S (NP (DT the) (NN dog)) (VP (VBZ barks)))";

    #[test]
    fn parses_preterminal() {
        let t = parse_bracketed_tree("(NN dog)").unwrap();
        assert_eq!(t, ConstituencyTree::leaf("NN", "dog"));
        assert_eq!(subtree_count(&t), 1);
    }

    #[test]
    fn parses_sentence_tree() {
        let t = parse_bracketed_tree(DOG).unwrap();
        assert_eq!(t.node_count(), 6);
        assert_eq!(t.tokens(), vec!["the", "dog", "barks"]);
        assert_eq!(subtree_count(&t), 6);
        assert_eq!(t.to_string(), DOG);
        assert_eq!(subtree_count(&parse_bracketed_tree("(A (B (C x)))").unwrap()), 3);
    }

    #[test]
    fn whitespace_is_normalized() {
        let t = parse_bracketed_tree("  (S\n\t(NP (DT the)  (NN dog))\n (VP (VBZ barks)))  ").unwrap();
        assert_eq!(t.to_string(), DOG);
        let ptb = parse_bracketed_tree("( (S (NN x)))").unwrap();
        assert_eq!(ptb.label, "");
        assert_eq!(parse_bracketed_tree(&ptb.to_string()).unwrap(), ptb);
    }

    #[test]
    fn tree_errors() {
        assert!(matches!(parse_bracketed_tree("((S"), Err(NlpError::UnbalancedParens(_))));
        assert!(matches!(parse_bracketed_tree("(S (NN x)))"), Err(NlpError::UnbalancedParens(_))));
        assert!(matches!(parse_bracketed_tree(""), Err(NlpError::EmptyTree)));
        assert!(matches!(parse_bracketed_tree("(NN)"), Err(NlpError::EmptyTree)));
        assert!(matches!(parse_bracketed_tree("dog"), Err(NlpError::BareToken(_))));
        assert!(matches!(parse_bracketed_tree("(NP dog (NN cat))"), Err(NlpError::BareToken(_))));
        assert!(matches!(parse_bracketed_tree("(NP (NN cat) dog)"), Err(NlpError::BareToken(_))));
        assert!(matches!(parse_bracketed_tree("(A x) (B y)"), Err(NlpError::TrailingInput(_))));
    }

    fn block(heads: &[&str]) -> String {
        let mut s = String::from("# passage_id = P1\n# sentence_id = 4\n");
        for (i, h) in heads.iter().enumerate() {
            s.push_str(&format!("{}\tw{}\t_\tNOUN\t_\t_\t{}\tdep\t_\t_\n", i + 1, i + 1, h));
        }
        s.push('\n');
        s
    }

    #[test]
    fn conllu_basic_block() {
        let sents = parse_conllu(&block(&["2", "0", "2"])).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].heads(), vec![2, 0, 2]);
        assert_eq!(sents[0].passage_id.as_deref(), Some("P1"));
        assert_eq!(sents[0].sentence_id, Some(4));
        assert_eq!(sents[0].tokens.iter().find(|t| t.head == 0).unwrap().index, 2);
        assert_eq!(parse_conllu(&format_conllu(&sents)).unwrap(), sents);
    }

    #[test]
    fn conllu_errors() {
        assert!(matches!(parse_conllu(&block(&["2", "0", "7"])), Err(NlpError::HeadOutOfRange { head: 7, n: 3, .. })));
        assert!(matches!(parse_conllu(&block(&["2", "3", "1"])), Err(NlpError::CyclicHeads { .. })));
        assert!(matches!(parse_conllu("1\tx\t_\n\n"), Err(NlpError::MalformedLine { line: 1, .. })));
        assert!(matches!(parse_conllu(&block(&["0", "x"])), Err(NlpError::MalformedLine { .. })));
    }

    #[test]
    fn conllu_skips_ranges_and_empty_nodes() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\t_\tAUX\t_\t_\t0\troot\t_\t_\n\
                    2\tn't\t_\tPART\t_\t_\t1\tadvmod\t_\t_\n\
                    2.1\tx\t_\tX\t_\t_\t_\t_\t_\t_\n\
                    3\t.\t_\tPUNCT\t_\t_\t1\tpunct\t_\t_\n";
        let s = parse_conllu(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].heads(), vec![0, 1, 1]);
        let all = dependency_metrics(&s[0]);
        assert_eq!((all.total, all.max), (3, 2));
        let no_punct = dependency_metrics_with(&s[0], DepOptions { exclude_punct: true });
        assert_eq!((no_punct.total, no_punct.max), (1, 1));
        assert_eq!(no_punct.normalized, 0.5);
    }

    #[test]
    fn metrics_worked_examples() {
        let m = dependency_metrics(&DependencySentence::from_heads(&[2, 0, 2]).unwrap());
        assert_eq!((m.total, m.max), (2, 1));
        assert_eq!(m.normalized, 2.0 / 3.0);
        assert_eq!(m.avg, 1.0);
        let m = dependency_metrics(&DependencySentence::from_heads(&[0]).unwrap());
        assert_eq!((m.total, m.normalized, m.max, m.avg), (0, 0.0, 0, 0.0));
        let m = dependency_metrics(&DependencySentence::from_heads(&[0, 1, 1]).unwrap());
        assert_eq!((m.total, m.normalized, m.max, m.avg), (3, 1.0, 2, 1.5));
    }

    #[test]
    fn combined_features() {
        let tree = parse_bracketed_tree(DOG).unwrap();
        let dep = DependencySentence::from_heads(&[2, 0, 2]).unwrap();
        let f = sentence_features(&tree, &dep, DepOptions::default());
        assert!(f.warning.is_none());
        assert_eq!(f.features.subtree_count, 6);
        assert_eq!(f.features.total_dep_len, 2);

        let one = sentence_features(
            &parse_bracketed_tree("(NN dog)").unwrap(),
            &DependencySentence::from_heads(&[0]).unwrap(),
            DepOptions::default(),
        );
        assert_eq!(one.features.to_array(), [1.0, 0.0, 0.0, 0.0, 0.0]);

        let four = DependencySentence::from_heads(&[2, 0, 2, 3]).unwrap();
        let f = sentence_features(&tree, &four, DepOptions::default());
        assert_eq!(f.warning, Some(TokenCountMismatch { tree_leaves: 3, dep_tokens: 4 }));
        assert_eq!(f.features.total_dep_len, 3);
    }

    #[test]
    fn tree_file_round_trip() {
        let recs = vec![TreeRecord { passage_id: "P2".into(), sentence_id: 7, tree: parse_bracketed_tree(DOG).unwrap() }];
        assert_eq!(parse_tree_file(&format_tree_file(&recs)).unwrap(), recs);
        assert!(parse_tree_file("P1\tx\t(NN a)\n").is_err());
    }
}
