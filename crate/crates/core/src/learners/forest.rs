//! Random forest of Gini CART trees and the second-order boosted ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{grow, leaf_weight, presort, Gini, Newton, Node, Tree};
use super::{check_binary, GbtConfig, LearnerError, MaxFeatures, RfConfig};
use crate::matrix::Matrix;
use crate::scalar::{derive_seed, sigmoid, softplus, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Forest<T> {
    pub trees: Vec<Tree<T>>,
}

impl<T: Real> Forest<T> {
    /// Mean of the trees' leaf positive fractions.
    pub fn predict_proba_row(&self, row: &[T]) -> T {
        let s: T = self.trees.iter().map(|t| t.predict(row)).sum();
        s / T::from_usize_lossy(self.trees.len())
    }
}

fn feature_mask(rng: &mut impl Rng, d: usize, m: usize) -> Vec<bool> {
    let mut mask = vec![m >= d; d];
    if m < d {
        for f in rand::seq::index::sample(rng, d, m) {
            mask[f] = true;
        }
    }
    mask
}

/// One Gini tree. Structure is grown on the rows with positive weight;
/// every leaf then stores the positive fraction among all rows of `x`
/// that reach it.
fn fit_tree<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    sorted: &[Vec<usize>],
    weights: &[T],
    max_depth: Option<usize>,
    min_leaf: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Tree<T> {
    let active: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > T::zero()).collect();
    let crit = Gini { weights, y, min_leaf: T::from_usize_lossy(min_leaf) };
    let d = x.ncols();
    let mut tree = grow(x, sorted, &crit, &active, max_depth, || feature_mask(rng, d, m)).tree;
    let mut pos = vec![0usize; tree.nodes.len()];
    let mut tot = vec![0usize; tree.nodes.len()];
    for (i, &yi) in y.iter().enumerate() {
        let l = tree.leaf_index(x.row(i));
        tot[l] += 1;
        pos[l] += yi as usize;
    }
    for l in 0..tree.nodes.len() {
        if matches!(tree.nodes[l], Node::Leaf { .. }) && tot[l] > 0 {
            tree.set_leaf(l, T::from_usize_lossy(pos[l]) / T::from_usize_lossy(tot[l]));
        }
    }
    tree
}

/// Single CART tree on all rows (no bootstrap).
pub fn train_decision_tree<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    max_depth: Option<usize>,
    min_leaf: usize,
    max_features: MaxFeatures,
    seed: u64,
) -> Result<Tree<T>, LearnerError> {
    check_binary(x, y)?;
    let sorted = presort(x);
    let w = vec![T::one(); x.nrows()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_features.resolve(x.ncols());
    Ok(fit_tree(x, y, &sorted, &w, max_depth, min_leaf.max(1), m, &mut rng))
}

/// Tree `t` uses the stream `derive_seed(seed, t)`, so the forest does not
/// depend on how trees are scheduled across threads.
pub fn train_random_forest<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &RfConfig,
    seed: u64,
) -> Result<Forest<T>, LearnerError> {
    check_binary(x, y)?;
    cfg.validate()?;
    let sorted = presort(x);
    let n = x.nrows();
    let m = cfg.max_features.resolve(x.ncols());
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let mut w = vec![T::zero(); n];
            if cfg.bootstrap {
                for _ in 0..n {
                    w[rng.random_range(0..n)] += T::one();
                }
            } else {
                w.iter_mut().for_each(|v| *v = T::one());
            }
            fit_tree(x, y, &sorted, &w, cfg.max_depth, cfg.min_leaf, m, &mut rng)
        })
        .collect();
    Ok(Forest { trees })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbtModel<T> {
    /// Prior log-odds.
    pub base: T,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree<T>>,
}

impl<T: Real> GbtModel<T> {
    pub fn decision(&self, row: &[T]) -> T {
        self.base + self.trees.iter().map(|t| t.predict(row)).sum::<T>()
    }

    pub fn predict_proba_row(&self, row: &[T]) -> T {
        sigmoid(self.decision(row))
    }
}

/// Mean log-loss of raw scores `f` against `y`.
pub fn log_loss_from_scores<T: Real>(f: &[T], y: &[bool]) -> T {
    let s: T = f.iter().zip(y).map(|(&z, &yi)| softplus(z) - if yi { z } else { T::zero() }).sum();
    s / T::from_usize_lossy(f.len())
}

pub fn train_gradient_boosted_trees<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &GbtConfig,
    seed: u64,
) -> Result<GbtModel<T>, LearnerError> {
    train_gbt_traced(x, y, cfg, seed).map(|(m, _)| m)
}

/// Also returns the training log-loss before the first round and after
/// every round.
pub fn train_gbt_traced<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &GbtConfig,
    seed: u64,
) -> Result<(GbtModel<T>, Vec<T>), LearnerError> {
    check_binary(x, y)?;
    cfg.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    let sorted = presort(x);
    let prior = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let base = T::lit((prior / (1.0 - prior)).ln());
    let rate = T::lit(cfg.learning_rate);
    let lambda = T::lit(cfg.lambda);
    let mut f = vec![base; n];
    let mut g = vec![T::zero(); n];
    let mut h = vec![T::zero(); n];
    let mut losses = vec![log_loss_from_scores(&f, y)];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.rounds {
        for i in 0..n {
            let p = sigmoid(f[i]);
            g[i] = p - if y[i] { T::one() } else { T::zero() };
            h[i] = p * (T::one() - p);
        }
        let active: Vec<usize> = if cfg.subsample < 1.0 {
            let a: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < cfg.subsample).collect();
            if a.is_empty() { all.clone() } else { a }
        } else {
            all.clone()
        };
        let crit = Newton {
            g: &g,
            h: &h,
            lambda,
            gamma: T::lit(cfg.gamma),
            min_child_weight: T::lit(cfg.min_child_weight),
        };
        let grown = grow(x, &sorted, &crit, &active, Some(cfg.max_depth), || vec![true; d]);
        let mut tree = grown.tree;
        let mut gs = vec![T::zero(); tree.nodes.len()];
        let mut hs = vec![T::zero(); tree.nodes.len()];
        for &i in &active {
            let l = grown.leaf_of[i];
            gs[l] += g[i];
            hs[l] += h[i];
        }
        for l in 0..tree.nodes.len() {
            if matches!(tree.nodes[l], Node::Leaf { .. }) {
                tree.set_leaf(l, rate * leaf_weight(gs[l], hs[l], lambda));
            }
        }
        for i in 0..n {
            f[i] += tree.predict(x.row(i));
        }
        losses.push(log_loss_from_scores(&f, y));
        trees.push(tree);
    }
    Ok((GbtModel { base, trees }, losses))
}
