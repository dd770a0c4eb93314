//! Class balancing for the training partitions: SMOTE oversampling,
//! Tomek-link cleaning and graph label spreading for missing labels.
//!
//! All neighbor searches are exact, Euclidean, with ties resolved towards
//! the lower row index, so results never depend on iteration order.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::{squared_distance, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("minority class has {0} samples; SMOTE needs at least 2")]
    MinorityTooSmall(usize),
    #[error("class {0} has no labeled point")]
    MissingClassInLabels(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
}

pub type Result<T, E = BalanceError> = std::result::Result<T, E>;

/// Per-class counts, indexed `[negative, positive]`.
pub type ClassCounts = [usize; 2];

pub fn class_counts(y: &[bool]) -> ClassCounts {
    let pos = y.iter().filter(|&&v| v).count();
    [y.len() - pos, pos]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResampleReport {
    pub counts_before: ClassCounts,
    pub counts_after: ClassCounts,
    pub n_synthetic: usize,
    pub n_removed: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resampled<T> {
    pub x: Matrix<T>,
    pub y: Vec<bool>,
    pub report: ResampleReport,
}

/// Indices of the `k` nearest rows of `x` to row `i` among `candidates`
/// (excluding `i`), by distance then index.
fn k_nearest<T: Real>(x: &Matrix<T>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(T, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (squared_distance(x.row(i), x.row(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

fn check_len<T: Real>(x: &Matrix<T>, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(BalanceError::LengthMismatch { rows: x.nrows(), labels: n });
    }
    Ok(())
}

/// Synthetic minority oversampling.
///
/// New points `x_i + u (x_nn - x_i)` with `u ~ U[0, 1)` and `x_nn` one of
/// the `k` nearest minority neighbours of a uniformly drawn minority row
/// `x_i`, appended after the original rows until
/// `minority / majority >= target_ratio`.
pub fn smote<T: Real>(x: &Matrix<T>, y: &[bool], k: usize, target_ratio: f64, seed: u64) -> Result<Resampled<T>> {
    check_len(x, y.len())?;
    if k == 0 || !(target_ratio > 0.0) {
        return Err(BalanceError::InvalidConfig(format!("k={k}, target_ratio={target_ratio}")));
    }
    let counts = class_counts(y);
    let minority_class = counts[1] < counts[0];
    let (n_min, n_maj) = if minority_class { (counts[1], counts[0]) } else { (counts[0], counts[1]) };
    let target = (target_ratio * n_maj as f64).ceil() as usize;
    let needed = target.saturating_sub(n_min);
    let mut out_x = x.clone();
    let mut out_y = y.to_vec();
    if needed > 0 {
        if n_min < 2 {
            return Err(BalanceError::MinorityTooSmall(n_min));
        }
        let k_eff = k.min(n_min - 1);
        if k_eff < k {
            log::warn!("SMOTE k={k} clamped to {k_eff} for a minority of {n_min}");
        }
        let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_class).collect();
        let neighbours: Vec<Vec<usize>> = minority.iter().map(|&i| k_nearest(x, i, &minority, k_eff)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = vec![T::zero(); x.ncols()];
        for _ in 0..needed {
            let b = rng.random_range(0..minority.len());
            let nn = neighbours[b][rng.random_range(0..k_eff)];
            let u = T::lit(rng.random::<f64>());
            let (xi, xn) = (x.row(minority[b]), x.row(nn));
            for ((r, &a), &c) in row.iter_mut().zip(xi).zip(xn) {
                *r = a + u * (c - a);
            }
            out_x.push_row(&row);
            out_y.push(minority_class);
        }
    }
    let report = ResampleReport {
        counts_before: counts,
        counts_after: class_counts(&out_y),
        n_synthetic: needed,
        n_removed: 0,
        seed,
    };
    Ok(Resampled { x: out_x, y: out_y, report })
}

/// Nearest other row of every row.
fn nearest_neighbours<T: Real>(x: &Matrix<T>) -> Vec<Option<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut best: Option<(T, usize)> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = squared_distance(x.row(i), x.row(j));
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            best.map(|(_, j)| j)
        })
        .collect()
}

/// Mutual nearest-neighbour pairs `(a, b)`, `a < b`, with opposite labels.
pub fn tomek_links<T: Real>(x: &Matrix<T>, y: &[bool]) -> Vec<(usize, usize)> {
    let nn = nearest_neighbours(x);
    (0..x.nrows())
        .filter_map(|a| {
            let b = nn[a]?;
            (a < b && nn[b] == Some(a) && y[a] != y[b]).then_some((a, b))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomekResult<T> {
    pub x: Matrix<T>,
    pub y: Vec<bool>,
    /// Row indices of the input that were dropped, ascending.
    pub removed: Vec<usize>,
}

/// Removes the majority member of every Tomek link (one pass). The
/// majority is the larger class; on equal counts the negative class.
pub fn tomek_clean<T: Real>(x: &Matrix<T>, y: &[bool]) -> Result<TomekResult<T>> {
    let c = class_counts(y);
    tomek_clean_with_majority(x, y, c[1] > c[0])
}

/// As [`tomek_clean`] with the majority class given explicitly, e.g. the
/// majority before oversampling.
pub fn tomek_clean_with_majority<T: Real>(x: &Matrix<T>, y: &[bool], majority: bool) -> Result<TomekResult<T>> {
    check_len(x, y.len())?;
    let mut removed: Vec<usize> = tomek_links(x, y)
        .into_iter()
        .map(|(a, b)| if y[a] == majority { a } else { b })
        .collect();
    removed.sort_unstable();
    let keep: Vec<usize> = {
        let mut it = removed.iter().peekable();
        (0..y.len())
            .filter(|i| {
                if it.peek() == Some(&i) {
                    it.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    Ok(TomekResult { x: x.select_rows(&keep), y: keep.iter().map(|&i| y[i]).collect(), removed })
}

/// SMOTE followed by Tomek cleaning of the pre-oversampling majority class.
pub fn smote_tomek<T: Real>(x: &Matrix<T>, y: &[bool], k: usize, target_ratio: f64, seed: u64) -> Result<Resampled<T>> {
    let counts = class_counts(y);
    let majority = counts[1] > counts[0];
    let s = smote(x, y, k, target_ratio, seed)?;
    let t = tomek_clean_with_majority(&s.x, &s.y, majority)?;
    let report = ResampleReport {
        counts_before: counts,
        counts_after: class_counts(&t.y),
        n_synthetic: s.report.n_synthetic,
        n_removed: t.removed.len(),
        seed,
    };
    Ok(Resampled { x: t.x, y: t.y, report })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Affinity {
    /// Symmetrized k-nearest-neighbour connectivity.
    Knn { k: usize },
    /// `exp(-gamma * |xi - xj|^2)`.
    Rbf { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelSpreadConfig {
    pub graph: Affinity,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LabelSpreadConfig {
    fn default() -> Self {
        Self { graph: Affinity::Knn { k: 7 }, alpha: 0.2, max_iter: 30, tol: 1e-3 }
    }
}

impl LabelSpreadConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_graph = match self.graph {
            Affinity::Knn { k } => k >= 1,
            Affinity::Rbf { gamma } => gamma > 0.0,
        };
        if !ok_graph || !(self.alpha > 0.0 && self.alpha < 1.0) || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(BalanceError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadResult {
    pub labels: Vec<usize>,
    /// Unlabeled rows whose top two class scores tied.
    pub ambiguous: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

/// Sparse symmetric affinity rows `(j, w_ij)`, no self loops.
fn affinity_rows<T: Real>(x: &Matrix<T>, graph: Affinity) -> Vec<Vec<(usize, T)>> {
    let n = x.nrows();
    match graph {
        Affinity::Knn { k } => {
            let all: Vec<usize> = (0..n).collect();
            let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
            for i in 0..n {
                for j in k_nearest(x, i, &all, k) {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
            adj.into_iter()
                .map(|mut a| {
                    a.sort_unstable();
                    a.dedup();
                    a.into_iter().map(|j| (j, T::one())).collect()
                })
                .collect()
        }
        Affinity::Rbf { gamma } => {
            let g = T::lit(gamma);
            (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (j, (-g * squared_distance(x.row(i), x.row(j))).exp()))
                        .filter(|&(_, w)| w > T::zero())
                        .collect()
                })
                .collect()
        }
    }
}

/// Hop distance from the labeled set to the farthest reachable node.
fn reach_depth<T>(rows: &[Vec<(usize, T)>], labeled: &[bool]) -> usize {
    let mut dist = vec![usize::MAX; rows.len()];
    let mut queue = VecDeque::new();
    for (i, &l) in labeled.iter().enumerate() {
        if l {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    let mut depth = 0;
    while let Some(i) = queue.pop_front() {
        depth = depth.max(dist[i]);
        for &(j, _) in &rows[i] {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    depth
}

/// Label spreading with `S = D^-1/2 W D^-1/2` and `F <- alpha S F + (1 - alpha) Y`.
///
/// Iteration stops once the largest entry change drops below `tol`, but
/// never before every node reachable from a labeled point has received
/// mass (at least the graph's hop depth from the labeled set). Rows that
/// were labeled on input keep their label.
pub fn label_spread<T: Real>(
    x: &Matrix<T>,
    y: &[Option<usize>],
    n_classes: usize,
    cfg: &LabelSpreadConfig,
) -> Result<SpreadResult> {
    check_len(x, y.len())?;
    cfg.validate()?;
    let n = y.len();
    if let Some(bad) = y.iter().flatten().find(|&&c| c >= n_classes) {
        return Err(BalanceError::InvalidConfig(format!("label {bad} >= n_classes {n_classes}")));
    }
    for c in 0..n_classes {
        if !y.contains(&Some(c)) {
            return Err(BalanceError::MissingClassInLabels(c));
        }
    }
    if y.iter().all(Option::is_some) {
        return Ok(SpreadResult {
            labels: y.iter().map(|l| l.unwrap()).collect(),
            ambiguous: vec![false; n],
            iterations: 0,
            converged: true,
        });
    }

    let rows = affinity_rows(x, cfg.graph);
    let deg: Vec<T> = rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();
    let inv_sqrt: Vec<T> = deg.iter().map(|&d| if d > T::zero() { T::one() / d.sqrt() } else { T::zero() }).collect();
    let s: Vec<Vec<(usize, T)>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().map(|&(j, w)| (j, w * inv_sqrt[i] * inv_sqrt[j])).collect())
        .collect();
    let labeled: Vec<bool> = y.iter().map(Option::is_some).collect();
    let min_iter = reach_depth(&rows, &labeled).min(cfg.max_iter);

    let alpha = T::lit(cfg.alpha);
    let keep = T::one() - alpha;
    let mut y0 = vec![T::zero(); n * n_classes];
    for (i, l) in y.iter().enumerate() {
        if let Some(c) = l {
            y0[i * n_classes + c] = keep;
        }
    }
    let mut f: Vec<T> = y0.clone();
    let mut next = vec![T::zero(); n * n_classes];
    let tol = T::lit(cfg.tol);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        for i in 0..n {
            let out = &mut next[i * n_classes..(i + 1) * n_classes];
            out.copy_from_slice(&y0[i * n_classes..(i + 1) * n_classes]);
            for &(j, w) in &s[i] {
                for c in 0..n_classes {
                    out[c] += alpha * w * f[j * n_classes + c];
                }
            }
        }
        let change = f.iter().zip(&next).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
        std::mem::swap(&mut f, &mut next);
        iterations += 1;
        if change < tol && iterations >= min_iter {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("label spreading did not converge in {} iterations", cfg.max_iter);
    }

    let rel = T::lit(1e-12);
    let mut labels = Vec::with_capacity(n);
    let mut ambiguous = vec![false; n];
    for i in 0..n {
        if let Some(c) = y[i] {
            labels.push(c);
            continue;
        }
        let row = &f[i * n_classes..(i + 1) * n_classes];
        let mut best = 0;
        for c in 1..n_classes {
            if row[c] > row[best] {
                best = c;
            }
        }
        ambiguous[i] = (0..n_classes).any(|c| {
            c != best && (row[best] - row[c]).abs() <= rel * row[best].abs().max(row[c].abs())
        });
        labels.push(best);
    }
    Ok(SpreadResult { labels, ambiguous, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smote_interpolates_on_segment() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [5.0, 5.0], [6.0, 5.0], [7.0, 5.0], [8.0, 5.0]], 2);
        let y = [true, true, false, false, false, false];
        let r = smote(&x, &y, 1, 1.0, 11).unwrap();
        assert_eq!(r.report.n_synthetic, 2);
        assert_eq!(r.report.counts_after, [4, 4]);
        for i in 6..r.x.nrows() {
            let p: &[f64] = r.x.row(i);
            assert!(r.y[i]);
            assert!((p[0] - p[1]).abs() < 1e-12 && (0.0..=1.0).contains(&p[0]));
        }
        assert_eq!(r.x.select_rows(&[0, 1, 2, 3, 4, 5]), x);
    }

    #[test]
    fn smote_reaches_majority_count() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            rows.push([i as f64, (i * 7 % 11) as f64]);
            y.push(i < 10);
        }
        let x = Matrix::from_rows(&rows, 2);
        let r = smote(&x, &y, 5, 1.0, 3).unwrap();
        assert_eq!(r.report.counts_before, [40, 10]);
        assert_eq!(r.report.counts_after, [40, 40]);
        let again = smote(&x, &y, 5, 1.0, 3).unwrap();
        assert_eq!(r, again);
        let bits: Vec<u64> = r.x.as_slice().iter().map(|v| v.to_bits()).collect();
        let bits2: Vec<u64> = again.x.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, bits2);
    }

    #[test]
    fn smote_guards() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]], 1);
        assert_eq!(smote(&x, &[true, false, false], 5, 1.0, 0).unwrap_err(), BalanceError::MinorityTooSmall(1));
        // Already balanced enough: nothing to do even with a single minority row.
        let r = smote(&x, &[true, false, false], 5, 0.5, 0).unwrap();
        assert_eq!(r.report.n_synthetic, 0);
    }

    #[test]
    fn tomek_removes_majority_member() {
        let x = Matrix::from_rows(&[[0.0], [5.0], [0.1]], 1);
        let y = [false, false, true];
        assert_eq!(tomek_links(&x, &y), vec![(0, 2)]);
        let r = tomek_clean(&x, &y).unwrap();
        assert_eq!(r.removed, vec![0]);
        assert_eq!(r.y, vec![false, true]);
        assert_eq!(r.x.as_slice(), &[5.0, 0.1]);
    }

    #[test]
    fn separated_clusters_have_no_links() {
        let x = Matrix::from_rows(&[[0.0], [0.2], [0.4], [10.0], [10.2]], 1);
        let r = tomek_clean(&x, &[false, false, false, true, true]).unwrap();
        assert!(r.removed.is_empty());
    }

    #[test]
    fn spreading_two_clusters() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..10 {
            rows.push([i as f64 * 0.01]);
            y.push(if i == 0 { Some(0) } else { None });
        }
        for i in 0..10 {
            rows.push([10.0 + i as f64 * 0.01]);
            y.push(if i == 9 { Some(1) } else { None });
        }
        let x = Matrix::from_rows(&rows, 1);
        let r = label_spread(&x, &y, 2, &LabelSpreadConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(&r.labels[..10], &[0; 10]);
        assert_eq!(&r.labels[10..], &[1; 10]);
        // Scaling the features leaves k-NN neighbour sets unchanged.
        let scaled = label_spread(&x.map(|v| v * 37.0), &y, 2, &LabelSpreadConfig::default()).unwrap();
        assert_eq!(scaled.labels, r.labels);
    }

    #[test]
    fn spreading_all_labeled_and_missing_class() {
        let x = Matrix::from_rows(&[[0.0], [1.0]], 1);
        let r = label_spread(&x, &[Some(1), Some(0)], 2, &LabelSpreadConfig::default()).unwrap();
        assert_eq!(r.labels, vec![1, 0]);
        assert_eq!(
            label_spread(&x, &[Some(1), None], 2, &LabelSpreadConfig::default()).unwrap_err(),
            BalanceError::MissingClassInLabels(0)
        );
        let bad = LabelSpreadConfig { alpha: 1.0, ..Default::default() };
        assert!(label_spread(&x, &[Some(1), Some(0)], 2, &bad).is_err());
    }

    #[test]
    fn spreading_tie_goes_to_lower_class() {
        let x = Matrix::from_rows(&[[-1.0], [0.0], [1.0]], 1);
        for graph in [Affinity::Knn { k: 1 }, Affinity::Rbf { gamma: 0.5 }] {
            let cfg = LabelSpreadConfig { graph, ..Default::default() };
            let r = label_spread(&x, &[Some(1), None, Some(0)], 2, &cfg).unwrap();
            assert_eq!(r.labels, vec![1, 0, 0]);
            assert_eq!(r.ambiguous, vec![false, true, false]);
        }
    }
}
