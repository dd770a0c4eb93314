//! Exact greedy tree growth shared by the forest and the booster.
//!
//! Features are presorted once per fit and growth proceeds level by level
//! over per-node ranges of the presorted orders, so a level costs
//! `O(n * d)` for the partition plus `O(n * m)` for scanning `m` candidate
//! features.

use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { value: T },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree<T> {
    /// Node 0 is the root; children always follow their parent.
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn constant(value: T) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    pub fn leaf_index(&self, row: &[T]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, row: &[T]) -> T {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub(crate) fn set_leaf(&mut self, i: usize, value: T) {
        self.nodes[i] = Node::Leaf { value };
    }
}

/// Row indices sorted by value (then index) for every column.
pub(crate) fn presort<T: Real>(x: &Matrix<T>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| {
                x.get(a, f).partial_cmp(&x.get(b, f)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Split quality bookkeeping for one growth strategy.
pub(crate) trait Criterion<T: Real> {
    type Stats: Copy + Default;
    fn add(&self, s: &mut Self::Stats, row: usize);
    fn sub(&self, total: &Self::Stats, left: &Self::Stats) -> Self::Stats;
    /// Whether a node is worth scanning at all.
    fn splittable(&self, total: &Self::Stats) -> bool;
    fn admissible(&self, left: &Self::Stats, right: &Self::Stats) -> bool;
    fn gain(&self, left: &Self::Stats, right: &Self::Stats, total: &Self::Stats) -> T;
    /// A split is made only when its gain is strictly above this.
    fn min_gain(&self, total: &Self::Stats) -> T;
}

pub(crate) struct Grown<T> {
    pub tree: Tree<T>,
    /// Leaf node reached by each active row (`usize::MAX` for inactive rows).
    pub leaf_of: Vec<usize>,
}

const NONE: usize = usize::MAX;

/// Grows a tree over `active` rows. Leaves carry placeholder values that
/// the caller fills in. `candidates()` returns the per-feature mask of
/// features a node may split on; it is called once per open node in
/// creation order.
///
/// Every open node owns the same contiguous range in each per-feature
/// order; splitting a node stably partitions that range, so each node is
/// scanned in presorted order over its candidate features only.
pub(crate) fn grow<T: Real, C: Criterion<T>>(
    x: &Matrix<T>,
    sorted: &[Vec<usize>],
    crit: &C,
    active: &[usize],
    max_depth: Option<usize>,
    mut candidates: impl FnMut() -> Vec<bool>,
) -> Grown<T> {
    let n = x.nrows();
    let d = x.ncols();
    let mut is_active = vec![false; n];
    for &i in active {
        is_active[i] = true;
    }
    let mut order: Vec<Vec<usize>> =
        sorted.iter().map(|s| s.iter().copied().filter(|&i| is_active[i]).collect()).collect();
    let m = order.first().map_or(0, Vec::len);
    let mut node_of = vec![NONE; n];
    let mut nodes = vec![Node::Leaf { value: T::zero() }];
    // (node, start, end) into every `order[f]`
    let mut open = vec![(0usize, 0usize, m)];
    let mut go_left = vec![false; n];
    let mut scratch: Vec<usize> = Vec::with_capacity(m);
    let mut depth = 0;
    while d > 0 && !open.is_empty() && max_depth.is_none_or(|md| depth < md) {
        let mut next_open = Vec::new();
        for &(j, s, e) in &open {
            let mut total = C::Stats::default();
            for &i in &order[0][s..e] {
                crit.add(&mut total, i);
            }
            let mut best: Option<(T, usize, T)> = None;
            if crit.splittable(&total) {
                let mask = candidates();
                for f in (0..d).filter(|&f| mask[f]) {
                    let mut left = C::Stats::default();
                    let mut last: Option<T> = None;
                    for &i in &order[f][s..e] {
                        let v = x.get(i, f);
                        if let Some(lv) = last {
                            if v > lv {
                                let right = crit.sub(&total, &left);
                                if crit.admissible(&left, &right) {
                                    let g = crit.gain(&left, &right, &total);
                                    if best.is_none_or(|(bg, _, _)| g > bg) {
                                        let mut thr = lv + (v - lv) / T::lit(2.0);
                                        if !(thr >= lv && thr < v) {
                                            thr = lv;
                                        }
                                        best = Some((g, f, thr));
                                    }
                                }
                            }
                        }
                        crit.add(&mut left, i);
                        last = Some(v);
                    }
                }
            }
            let split = best.filter(|&(g, _, _)| g > crit.min_gain(&total));
            let Some((_, f, thr)) = split else {
                for &i in &order[0][s..e] {
                    node_of[i] = j;
                }
                continue;
            };
            let l = nodes.len();
            nodes.push(Node::Leaf { value: T::zero() });
            nodes.push(Node::Leaf { value: T::zero() });
            nodes[j] = Node::Split { feature: f, threshold: thr, left: l, right: l + 1 };
            let mut nl = 0;
            for &i in &order[0][s..e] {
                let gl = x.get(i, f) <= thr;
                go_left[i] = gl;
                nl += gl as usize;
            }
            for ord in order.iter_mut() {
                scratch.clear();
                let mut w = s;
                for k in s..e {
                    let i = ord[k];
                    if go_left[i] {
                        ord[w] = i;
                        w += 1;
                    } else {
                        scratch.push(i);
                    }
                }
                ord[w..e].copy_from_slice(&scratch);
            }
            next_open.push((l, s, s + nl));
            next_open.push((l + 1, s + nl, e));
        }
        open = next_open;
        depth += 1;
    }
    if let Some(o) = order.first() {
        for &(j, s, e) in &open {
            for &i in &o[s..e] {
                node_of[i] = j;
            }
        }
    }
    if d == 0 {
        for &i in active {
            node_of[i] = 0;
        }
    }
    Grown { tree: Tree { nodes }, leaf_of: node_of }
}

/// Weighted Gini impurity decrease.
pub(crate) struct Gini<'a, T> {
    pub weights: &'a [T],
    pub y: &'a [bool],
    pub min_leaf: T,
}

impl<T: Real> Gini<'_, T> {
    fn impurity_mass(s: &(T, T)) -> T {
        // n * gini = n * (1 - p^2 - q^2) = 2 * pos * neg / n
        if s.0 <= T::zero() {
            return T::zero();
        }
        T::lit(2.0) * s.1 * (s.0 - s.1) / s.0
    }
}

impl<T: Real> Criterion<T> for Gini<'_, T> {
    /// (total weight, positive weight)
    type Stats = (T, T);

    fn add(&self, s: &mut (T, T), row: usize) {
        let w = self.weights[row];
        s.0 += w;
        if self.y[row] {
            s.1 += w;
        }
    }

    fn sub(&self, total: &(T, T), left: &(T, T)) -> (T, T) {
        (total.0 - left.0, total.1 - left.1)
    }

    fn splittable(&self, t: &(T, T)) -> bool {
        t.0 >= self.min_leaf + self.min_leaf && t.1 > T::zero() && t.1 < t.0
    }

    fn admissible(&self, l: &(T, T), r: &(T, T)) -> bool {
        l.0 >= self.min_leaf && r.0 >= self.min_leaf
    }

    fn gain(&self, l: &(T, T), r: &(T, T), t: &(T, T)) -> T {
        Self::impurity_mass(t) - Self::impurity_mass(l) - Self::impurity_mass(r)
    }

    /// Zero-gain splits are allowed (XOR-like parents have none better).
    fn min_gain(&self, t: &(T, T)) -> T {
        -T::epsilon() * t.0
    }
}

/// Second-order boosting gain on log-loss gradients and Hessians.
pub(crate) struct Newton<'a, T> {
    pub g: &'a [T],
    pub h: &'a [T],
    pub lambda: T,
    pub gamma: T,
    pub min_child_weight: T,
}

impl<T: Real> Criterion<T> for Newton<'_, T> {
    /// (G, H, rows)
    type Stats = (T, T, usize);

    fn add(&self, s: &mut (T, T, usize), row: usize) {
        s.0 += self.g[row];
        s.1 += self.h[row];
        s.2 += 1;
    }

    fn sub(&self, t: &(T, T, usize), l: &(T, T, usize)) -> (T, T, usize) {
        (t.0 - l.0, t.1 - l.1, t.2 - l.2)
    }

    fn splittable(&self, t: &(T, T, usize)) -> bool {
        t.2 >= 2
    }

    fn admissible(&self, l: &(T, T, usize), r: &(T, T, usize)) -> bool {
        l.1 >= self.min_child_weight && r.1 >= self.min_child_weight
    }

    fn gain(&self, l: &(T, T, usize), r: &(T, T, usize), t: &(T, T, usize)) -> T {
        let half = T::lit(0.5);
        half * (l.0 * l.0 / (l.1 + self.lambda) + r.0 * r.0 / (r.1 + self.lambda) - t.0 * t.0 / (t.1 + self.lambda))
            - self.gamma
    }

    fn min_gain(&self, _t: &(T, T, usize)) -> T {
        T::zero()
    }
}

/// `1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l)] - gamma`.
pub fn split_gain<T: Real>(gl: T, hl: T, gr: T, hr: T, lambda: T, gamma: T) -> T {
    let half = T::lit(0.5);
    let (g, h) = (gl + gr, hl + hr);
    half * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// Optimal leaf weight `-G/(H+lambda)`.
pub fn leaf_weight<T: Real>(g: T, h: T, lambda: T) -> T {
    -g / (h + lambda)
}
