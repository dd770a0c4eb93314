//! Logistic regression and the linear SVM with Platt calibration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_binary, LearnerError, LrConfig, SvmConfig};
use crate::matrix::{dot, Matrix};
use crate::scalar::{sigmoid, softplus, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Real> LogisticModel<T> {
    pub fn decision(&self, row: &[T]) -> T {
        dot(&self.weights, row) + self.bias
    }

    pub fn predict_proba_row(&self, row: &[T]) -> T {
        sigmoid(self.decision(row))
    }
}

/// Mean cross-entropy against soft targets plus `l2/2 |w|^2` (bias not
/// penalized). Returns `(loss, dloss/dw, dloss/db)`.
pub fn logistic_objective<T: Real>(w: &[T], b: T, x: &Matrix<T>, targets: &[T], l2: T) -> (T, Vec<T>, T) {
    let n = T::from_usize_lossy(x.nrows());
    let mut loss = T::zero();
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = T::zero();
    for (row, &t) in x.rows().zip(targets) {
        let z = dot(w, row) + b;
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        gb += r;
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
    }
    let half = T::lit(0.5);
    loss = loss / n + half * l2 * dot(w, w);
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (loss, gw, gb / n)
}

fn objective_only<T: Real>(w: &[T], b: T, x: &Matrix<T>, targets: &[T], l2: T) -> T {
    let n = T::from_usize_lossy(x.nrows());
    let mut loss = T::zero();
    for (row, &t) in x.rows().zip(targets) {
        let z = dot(w, row) + b;
        loss += softplus(z) - t * z;
    }
    loss / n + T::lit(0.5) * l2 * dot(w, w)
}

/// Gradient descent with Armijo backtracking on [`logistic_objective`],
/// from `w = 0` and `b = logit(mean target)`.
pub(crate) fn fit_logistic_targets<T: Real>(
    x: &Matrix<T>,
    targets: &[T],
    l2: T,
    max_iter: usize,
    tol: T,
) -> LogisticModel<T> {
    // Canonical row order: floating-point sums then depend only on the
    // multiset of (row, target) pairs, so shuffling the input changes nothing.
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .chain(std::iter::once(&targets[a]))
            .zip(x.row(b).iter().chain(std::iter::once(&targets[b])))
            .map(|(p, q)| p.as_f64().total_cmp(&q.as_f64()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let x = &x.select_rows(&order);
    let targets: &[T] = &order.iter().map(|&i| targets[i]).collect::<Vec<_>>();
    let d = x.ncols();
    let tbar = crate::scalar::mean(targets);
    let eps = T::lit(1e-12);
    let tc = tbar.max(eps).min(T::one() - eps);
    let mut w = vec![T::zero(); d];
    let mut b = (tc / (T::one() - tc)).ln();
    let mut step = T::one();
    let c = T::lit(1e-4);
    let min_step = T::lit(1e-20);
    let noise = T::lit(16.0) * T::epsilon();
    let mut converged = false;
    for _ in 0..max_iter {
        let (f, gw, gb) = logistic_objective(&w, b, x, targets, l2);
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < tol {
            converged = true;
            break;
        }
        step *= T::lit(2.0);
        loop {
            let wn: Vec<T> = w.iter().zip(&gw).map(|(&wi, &g)| wi - step * g).collect();
            let bn = b - step * gb;
            let fnew = objective_only(&wn, bn, x, targets, l2);
            let accept = fnew <= f - c * step * gnorm2
                // Near the optimum the decrease drops below rounding noise
                // (early for f32); fall back to requiring a smaller gradient.
                || ((f - fnew).abs() <= noise * f.abs().max(T::one()) && {
                    let (_, gwn, gbn) = logistic_objective(&wn, bn, x, targets, l2);
                    dot(&gwn, &gwn) + gbn * gbn < gnorm2
                });
            if accept {
                w = wn;
                b = bn;
                break;
            }
            step *= T::lit(0.5);
            if step < min_step {
                break;
            }
        }
        if step < min_step {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("logistic regression stopped at max_iter={max_iter}");
    }
    LogisticModel { weights: w, bias: b }
}

pub fn train_logistic_regression<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &LrConfig,
) -> Result<LogisticModel<T>, LearnerError> {
    check_binary(x, y)?;
    cfg.validate()?;
    let t: Vec<T> = y.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
    Ok(fit_logistic_targets(x, &t, T::lit(cfg.l2), cfg.max_iter, T::lit(cfg.tol)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    /// Platt slope, strictly positive.
    pub platt_a: T,
    pub platt_b: T,
}

impl<T: Real> SvmModel<T> {
    pub fn margin(&self, row: &[T]) -> T {
        dot(&self.weights, row) + self.bias
    }

    pub fn proba_from_margin(&self, m: T) -> T {
        sigmoid(self.platt_a * m + self.platt_b)
    }

    pub fn predict_proba_row(&self, row: &[T]) -> T {
        self.proba_from_margin(self.margin(row))
    }
}

fn sign<T: Real>(v: bool) -> T {
    if v { T::one() } else { -T::one() }
}

/// `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))` with `y` in {-1, +1}.
pub fn svm_objective<T: Real>(w: &[T], b: T, x: &Matrix<T>, y: &[bool], lambda: T) -> T {
    let n = T::from_usize_lossy(x.nrows());
    let hinge: T = x.rows().zip(y).map(|(row, &yi)| (T::one() - sign::<T>(yi) * (dot(w, row) + b)).max(T::zero())).sum();
    T::lit(0.5) * lambda * dot(w, w) + hinge / n
}

/// Subgradient of [`svm_objective`]; exact wherever no margin equals 1.
pub fn svm_subgradient<T: Real>(w: &[T], b: T, x: &Matrix<T>, y: &[bool], lambda: T) -> (Vec<T>, T) {
    let n = T::from_usize_lossy(x.nrows());
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = T::zero();
    for (row, &yi) in x.rows().zip(y) {
        let s = sign::<T>(yi);
        if s * (dot(w, row) + b) < T::one() {
            gb -= s;
            for (g, &v) in gw.iter_mut().zip(row) {
                *g -= s * v;
            }
        }
    }
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * wi;
    }
    (gw, gb / n)
}

const SVM_ETA0: f64 = 0.5;

/// Averaged stochastic subgradient descent on [`svm_objective`] with
/// `lambda = 1/(penalty * n)` and step `eta0 / (1 + lambda eta0 t)`.
/// Averaging starts with the second epoch (from the first when there is
/// only one).
pub fn train_linear_svm<T: Real>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &SvmConfig,
    seed: u64,
) -> Result<SvmModel<T>, LearnerError> {
    check_binary(x, y)?;
    cfg.validate()?;
    let (n, d) = (x.nrows(), x.ncols());
    let lambda = 1.0 / (cfg.penalty * n as f64);
    let lam = T::lit(lambda);
    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let mut avg_w = vec![T::zero(); d];
    let mut avg_b = T::zero();
    let mut n_avg = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let avg_from = if cfg.epochs > 1 { 1 } else { 0 };
    let mut t = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = T::lit(SVM_ETA0 / (1.0 + lambda * SVM_ETA0 * t as f64));
            let row = x.row(i);
            let s = sign::<T>(y[i]);
            let active = s * (dot(&w, row) + b) < T::one();
            let shrink = T::one() - eta * lam;
            for (wj, &v) in w.iter_mut().zip(row) {
                *wj *= shrink;
                if active {
                    *wj += eta * s * v;
                }
            }
            if active {
                b += eta * s;
            }
            t += 1;
            if epoch >= avg_from {
                n_avg += 1;
                let k = T::from_usize_lossy(n_avg);
                for (a, &wj) in avg_w.iter_mut().zip(&w) {
                    *a += (wj - *a) / k;
                }
                avg_b += (b - avg_b) / k;
            }
        }
    }
    let margins = Matrix::from_vec(n, 1, x.rows().map(|r| dot(&avg_w, r) + avg_b).collect());
    let (a, pb) = platt_fit(&margins, y);
    Ok(SvmModel { weights: avg_w, bias: avg_b, platt_a: a, platt_b: pb })
}

const PLATT_L2: f64 = 1e-3;
const PLATT_MIN_SLOPE: f64 = 1e-6;

/// Sigmoid on margins fitted with the logistic trainer against the usual
/// smoothed targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.
fn platt_fit<T: Real>(margins: &Matrix<T>, y: &[bool]) -> (T, T) {
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let neg = y.len() as f64 - pos;
    let hi = T::lit((pos + 1.0) / (pos + 2.0));
    let lo = T::lit(1.0 / (neg + 2.0));
    let t: Vec<T> = y.iter().map(|&v| if v { hi } else { lo }).collect();
    let m = fit_logistic_targets(margins, &t, T::lit(PLATT_L2), 500, T::lit(1e-8));
    let a = m.weights[0];
    if a > T::lit(PLATT_MIN_SLOPE) {
        (a, m.bias)
    } else {
        log::warn!("Platt slope {a} not positive; clamped");
        let p = T::lit(pos / y.len() as f64);
        (T::lit(PLATT_MIN_SLOPE), (p / (T::one() - p)).ln())
    }
}
