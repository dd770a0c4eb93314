//! Per-column z-scaling fitted on one matrix and applied to others.

use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub means: Vec<T>,
    /// Population standard deviations; zero-variance columns store 1.
    pub stds: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    /// Panics on an empty matrix.
    pub fn fit(x: &Matrix<T>) -> Self {
        assert!(x.nrows() > 0, "cannot standardize an empty matrix");
        let n = T::from_usize_lossy(x.nrows());
        let mut means = vec![T::zero(); x.ncols()];
        for row in x.rows() {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![T::zero(); x.ncols()];
        for row in x.rows() {
            for ((s, &v), &m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > T::epsilon() { sd } else { T::one() }
            })
            .collect();
        Self { means, stds }
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        row.iter().zip(&self.means).zip(&self.stds).map(|((&v, &m), &s)| (v - m) / s).collect()
    }

    pub fn transform(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.ncols(), self.means.len(), "standardizer width mismatch");
        let mut out = x.clone();
        for r in 0..x.nrows() {
            let t = self.transform_row(x.row(r));
            out.row_mut(r).copy_from_slice(&t);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_columns_are_unit_scaled() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [8.0, 5.0]], 2);
        let s = Standardizer::fit(&x);
        let z = s.transform(&x);
        let c0 = z.column(0);
        let m: f64 = c0.iter().sum::<f64>() / 3.0;
        let v: f64 = c0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert_eq!(s.stds[1], 1.0);
        assert_eq!(z.column(1), vec![0.0; 3]);
    }
}
