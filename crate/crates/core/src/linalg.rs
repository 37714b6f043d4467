//! Dense symmetric positive-definite solves. Thin adapter from `ndarray`
//! to nalgebra's Cholesky factorization.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        debug_assert_eq!(r, c);
        let m = DMatrix::from_fn(r, c, |i, j| a[[i, j]]);
        let chol = m.cholesky().ok_or(Error::Singular)?;
        Ok(Self { chol })
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let rhs = DVector::from_iterator(b.len(), b.iter().copied());
        let sol = self.chol.solve(&rhs);
        Array1::from_iter(sol.iter().copied())
    }

    pub fn inverse(&self) -> ndarray::Array2<f64> {
        let inv = self.chol.inverse();
        let n = inv.nrows();
        ndarray::Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)])
    }
}

pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(SpdFactor::new(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let b = array![1.0, 2.0];
        let x = solve_spd(a.view(), b.view()).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-14));
        let inv = SpdFactor::new(a.view()).unwrap().inverse();
        let eye = a.dot(&inv);
        assert!((eye[[0, 0]] - 1.0).abs() < 1e-14 && eye[[0, 1]].abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(SpdFactor::new(a.view()), Err(Error::Singular)));
    }
}
