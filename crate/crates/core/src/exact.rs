//! Exact empirical risk minimization and brute-force leave-one-out scores.
//!
//! Ridge is solved through the normal equations `(XᵀX + λI)θ = Xᵀy`; Lasso
//! by cyclic coordinate descent with soft-threshold updates. These are the
//! reference ("exact LOO") path every approximation is checked against.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{GlmSpec, Regularizer};
use crate::linalg::SpdFactor;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ErmSolution {
    pub theta: Array1<f64>,
    /// `Σ ½(y_i − θᵀx_i)² + Σ r(θ_μ)` at `theta`.
    pub objective: f64,
    /// Linear solves for Ridge (always 1), coordinate sweeps for Lasso.
    pub iterations: usize,
}

pub fn objective(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &GlmSpec, theta: &Array1<f64>) -> f64 {
    let resid = &y - &x.dot(theta);
    0.5 * resid.dot(&resid) + spec.penalty(theta.iter().copied())
}

pub fn erm_solve(ds: &Dataset, spec: &GlmSpec, tol: f64, max_iter: usize) -> Result<ErmSolution> {
    spec.validate()?;
    let (theta, iterations) = match spec.regularizer {
        Regularizer::Ridge => (ridge_solve(ds.x(), ds.y(), spec.lambda)?, 1),
        Regularizer::Lasso => {
            let mut cd = LassoCd::new(ds.x(), spec.lambda);
            let theta0 = Array1::zeros(ds.d());
            cd.solve(ds.y(), None, theta0, tol, max_iter)?
        }
    };
    let objective = objective(ds.x(), ds.y(), spec, &theta);
    Ok(ErmSolution { theta, objective, iterations })
}

fn gram(x: ArrayView2<f64>, lambda: f64) -> Array2<f64> {
    let mut g = x.t().dot(&x);
    g.diag_mut().mapv_inplace(|v| v + lambda);
    g
}

fn ridge_solve(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    let g = gram(x, lambda);
    Ok(SpdFactor::new(g.view())?.solve(x.t().dot(&y).view()))
}

/// Cyclic coordinate descent for `½‖y − Xθ‖² + λ‖θ‖₁`, optionally with one
/// row excluded. Columns are stored contiguously.
struct LassoCd {
    cols: Array2<f64>,
    col_sq: Array1<f64>,
    lambda: f64,
}

impl LassoCd {
    fn new(x: ArrayView2<f64>, lambda: f64) -> Self {
        let cols = x.t().as_standard_layout().into_owned();
        let col_sq = cols.map_axis(Axis(1), |c| c.dot(&c));
        Self { cols, col_sq, lambda }
    }

    fn n(&self) -> usize {
        self.cols.ncols()
    }

    /// Runs full sweeps, and between them sweeps restricted to the nonzero
    /// coordinates, until a full sweep moves no coordinate by `tol` or more.
    fn solve(
        &mut self,
        y: ArrayView1<f64>,
        skip: Option<usize>,
        mut theta: Array1<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Result<(Array1<f64>, usize)> {
        let n = self.n();
        let mut resid = y.to_owned();
        for (mu, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                resid.scaled_add(-t, &self.cols.row(mu));
            }
        }
        if let Some(i) = skip {
            resid[i] = 0.0;
        }
        let norms: Vec<f64> = match skip {
            Some(i) => (0..theta.len())
                .map(|mu| self.col_sq[mu] - self.cols[[mu, i]].powi(2))
                .collect(),
            None => self.col_sq.to_vec(),
        };

        let mut sweeps = 0;
        let mut active: Vec<usize> = Vec::new();
        loop {
            sweeps += 1;
            let change = self.sweep(0..theta.len(), &norms, &mut theta, &mut resid, skip);
            if change < tol {
                return Ok((theta, sweeps));
            }
            if sweeps >= max_iter {
                break;
            }
            active.clear();
            active.extend(theta.iter().enumerate().filter(|(_, t)| **t != 0.0).map(|(mu, _)| mu));
            loop {
                sweeps += 1;
                let change = self.sweep(active.iter().copied(), &norms, &mut theta, &mut resid, skip);
                if change < tol || sweeps >= max_iter {
                    break;
                }
            }
            if sweeps >= max_iter {
                break;
            }
        }
        debug_assert!(resid.len() == n);
        Err(Error::NotConverged { solver: "lasso coordinate descent", iterations: sweeps })
    }

    fn sweep(
        &self,
        coords: impl Iterator<Item = usize>,
        norms: &[f64],
        theta: &mut Array1<f64>,
        resid: &mut Array1<f64>,
        skip: Option<usize>,
    ) -> f64 {
        let mut max_change = 0.0f64;
        for mu in coords {
            let sq = norms[mu];
            let old = theta[mu];
            let new = if sq <= 0.0 {
                0.0
            } else {
                let col = self.cols.row(mu);
                let rho = col.dot(&*resid) + sq * old;
                soft_threshold(rho, self.lambda) / sq
            };
            let delta = new - old;
            if delta != 0.0 {
                resid.scaled_add(-delta, &self.cols.row(mu));
                if let Some(i) = skip {
                    resid[i] = 0.0;
                }
                theta[mu] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Brute-force conformity scores on `𝒟⁺`: refit without each row `i` and
/// return `σ_i = |y_i − θ̂_{−i}ᵀx_i|` for all `n + 1` rows.
pub fn exact_loo_scores(ds_augmented: &Dataset, spec: &GlmSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    let x = ds_augmented.x();
    let y = ds_augmented.y();
    let m = ds_augmented.n();
    let mut scores = Array1::zeros(m);
    match spec.regularizer {
        Regularizer::Ridge => {
            let g = gram(x, spec.lambda);
            let xty = x.t().dot(&y);
            for i in 0..m {
                let xi = x.row(i);
                let mut gi = g.clone();
                for a in 0..xi.len() {
                    for b in 0..xi.len() {
                        gi[[a, b]] -= xi[a] * xi[b];
                    }
                }
                let rhs = &xty - &(&xi * y[i]);
                let theta = SpdFactor::new(gi.view())?.solve(rhs.view());
                scores[i] = (y[i] - theta.dot(&xi)).abs();
            }
        }
        Regularizer::Lasso => {
            let mut cd = LassoCd::new(x, spec.lambda);
            let (full, _) =
                cd.solve(y, None, Array1::zeros(ds_augmented.d()), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            for i in 0..m {
                let (theta, _) = cd.solve(y, Some(i), full.clone(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                scores[i] = (y[i] - theta.dot(&x.row(i))).abs();
            }
        }
    }
    Ok(scores)
}

/// Exact LOO scores on `𝒟⁺(y)` for many candidate labels `y` of the last
/// row, with work shared across labels.
///
/// Ridge: every LOO solution is linear in the last label,
/// `θ̂_{−i}(y) = H_i⁻¹(c_i + y·x_{n+1})`, so each `H_i` is factored once and
/// solved for both right-hand sides. Lasso: a fresh coordinate-descent refit
/// per (label, row), warm-started from the full fit at that label, which is
/// itself warm-started from the previous label.
pub struct ExactLooSweep {
    x: Array2<f64>,
    y: Array1<f64>,
    spec: GlmSpec,
    kind: SweepKind,
}

enum SweepKind {
    Ridge {
        /// `x_iᵀ H_i⁻¹ c_i` and `x_iᵀ H_i⁻¹ x_{n+1}` for each row.
        offset: Array1<f64>,
        slope: Array1<f64>,
    },
    Lasso {
        cd: LassoCd,
        warm: Array1<f64>,
        /// Prediction of the last row when it is left out; independent of its label.
        last_loo: f64,
    },
}

impl ExactLooSweep {
    pub fn new(ds_augmented: &Dataset, spec: &GlmSpec) -> Result<Self> {
        spec.validate()?;
        let x = ds_augmented.x().to_owned();
        let y = ds_augmented.y().to_owned();
        let m = x.nrows();
        let last = m - 1;
        let kind = match spec.regularizer {
            Regularizer::Ridge => {
                let g = gram(x.view(), spec.lambda);
                let x_last = x.row(last).to_owned();
                // c_i = Σ_{j ≠ i, j < last} x_j y_j
                let base = x.slice(ndarray::s![..last, ..]).t().dot(&y.slice(ndarray::s![..last]));
                let mut offset = Array1::zeros(m);
                let mut slope = Array1::zeros(m);
                for i in 0..m {
                    let xi = x.row(i);
                    let mut gi = g.clone();
                    for a in 0..xi.len() {
                        let xa = xi[a];
                        if xa != 0.0 {
                            gi.row_mut(a).scaled_add(-xa, &xi);
                        }
                    }
                    let factor = SpdFactor::new(gi.view())?;
                    if i == last {
                        offset[i] = factor.solve(base.view()).dot(&xi);
                        slope[i] = 0.0;
                    } else {
                        let ci = &base - &(&xi * y[i]);
                        offset[i] = factor.solve(ci.view()).dot(&xi);
                        slope[i] = factor.solve(x_last.view()).dot(&xi);
                    }
                }
                SweepKind::Ridge { offset, slope }
            }
            Regularizer::Lasso => {
                let mut cd = LassoCd::new(x.view(), spec.lambda);
                let zeros = Array1::zeros(x.ncols());
                let (warm, _) = cd.solve(y.view(), None, zeros, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                let (without_last, _) =
                    cd.solve(y.view(), Some(last), warm.clone(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                let last_loo = without_last.dot(&x.row(last));
                SweepKind::Lasso { cd, warm, last_loo }
            }
        };
        Ok(Self { x, y, spec: *spec, kind })
    }

    pub fn spec(&self) -> &GlmSpec {
        &self.spec
    }

    /// All `n + 1` scores with the last label set to `y_last`.
    pub fn scores(&mut self, y_last: f64) -> Result<Array1<f64>> {
        let m = self.x.nrows();
        let last = m - 1;
        self.y[last] = y_last;
        let mut scores = Array1::zeros(m);
        match &mut self.kind {
            SweepKind::Ridge { offset, slope } => {
                for i in 0..m {
                    scores[i] = (self.y[i] - (offset[i] + y_last * slope[i])).abs();
                }
            }
            SweepKind::Lasso { cd, warm, last_loo } => {
                let (full, _) =
                    cd.solve(self.y.view(), None, warm.clone(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                for i in 0..last {
                    let (theta, _) =
                        cd.solve(self.y.view(), Some(i), full.clone(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                    scores[i] = (self.y[i] - theta.dot(&self.x.row(i))).abs();
                }
                scores[last] = (y_last - *last_loo).abs();
                *warm = full;
            }
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig, TeacherPrior};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn synth(n: usize, d: usize, noise: f64, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n,
            d,
            teacher_prior: TeacherPrior::Gaussian,
            noise_variance: noise,
            seed,
        })
        .unwrap()
        .0
    }

    fn grad(ds: &Dataset, theta: &Array1<f64>) -> Array1<f64> {
        ds.x().t().dot(&(&ds.y() - &ds.x().dot(theta)))
    }

    #[test]
    fn scalar_ridge() {
        let ds = Dataset::new(array![[1.0]], array![1.0]).unwrap();
        let sol = erm_solve(&ds, &GlmSpec::ridge(1.0), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_abs_diff_eq!(sol.theta[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.objective, 0.125 + 0.125, epsilon = 1e-15);
    }

    #[test]
    fn ridge_gradient_residual() {
        let ds = synth(80, 120, 1.0, 1);
        let sol = erm_solve(&ds, &GlmSpec::ridge(0.7), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let r = &sol.theta * 0.7 - grad(&ds, &sol.theta);
        let ymax = ds.y().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r.iter().all(|v| v.abs() <= 1e-10 * (1.0 + ymax)));
        assert_abs_diff_eq!(
            sol.objective,
            objective(ds.x(), ds.y(), &GlmSpec::ridge(0.7), &sol.theta),
            epsilon = 1e-12
        );
    }

    #[test]
    fn lasso_kkt() {
        let ds = synth(100, 60, 1.0, 2);
        let lambda = 0.4;
        let sol = erm_solve(&ds, &GlmSpec::lasso(lambda), 1e-12, DEFAULT_MAX_ITER).unwrap();
        let g = grad(&ds, &sol.theta);
        for (t, gr) in sol.theta.iter().zip(&g) {
            if *t != 0.0 {
                assert!((gr - lambda * t.signum()).abs() <= 1e-8);
            } else {
                assert!(gr.abs() <= lambda + 1e-8);
            }
        }
    }

    #[test]
    fn lasso_large_lambda_is_zero() {
        let ds = synth(50, 20, 1.0, 3);
        let lam = ds.x().t().dot(&ds.y()).fold(0.0f64, |m, v| m.max(v.abs())) * 1.01;
        let sol = erm_solve(&ds, &GlmSpec::lasso(lam), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn lasso_orthonormal_design() {
        // columns of a scaled Hadamard matrix are orthonormal
        let h = array![
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0]
        ] * 0.5;
        let y = array![3.0, -1.0, 0.5, 2.0];
        let ds = Dataset::new(h.clone(), y.clone()).unwrap();
        let lambda = 0.8;
        let sol = erm_solve(&ds, &GlmSpec::lasso(lambda), 1e-14, DEFAULT_MAX_ITER).unwrap();
        let xty = h.t().dot(&y);
        for mu in 0..4 {
            assert_abs_diff_eq!(sol.theta[mu], soft_threshold(xty[mu], lambda), epsilon = 1e-12);
        }
    }

    #[test]
    fn lasso_iteration_cap() {
        let ds = synth(50, 40, 1.0, 4);
        assert!(matches!(
            erm_solve(&ds, &GlmSpec::lasso(0.01), 1e-14, 2),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn duplicate_rows_share_scores() {
        let ds = synth(30, 10, 1.0, 5);
        let mut rows: Vec<usize> = (0..30).collect();
        rows.push(3);
        let dup = ds.select_rows(&rows).unwrap();
        for spec in [GlmSpec::ridge(1.0), GlmSpec::lasso(0.3)] {
            let s = exact_loo_scores(&dup, &spec).unwrap();
            assert_abs_diff_eq!(s[3], s[30], epsilon = 1e-8);
        }
    }

    #[test]
    fn interpolating_regime_scores_vanish() {
        let ds = synth(200, 10, 0.0, 6);
        let s = exact_loo_scores(&ds, &GlmSpec::ridge(1e-6)).unwrap();
        assert!(s.iter().all(|&v| v < 1e-4));
    }

    #[test]
    fn loo_scores_permute_with_rows() {
        let ds = synth(25, 8, 1.0, 7);
        let perm = crate::data::shuffled_order(25, 1);
        let pds = ds.select_rows(&perm).unwrap();
        for spec in [GlmSpec::ridge(0.5), GlmSpec::lasso(0.2)] {
            let s = exact_loo_scores(&ds, &spec).unwrap();
            let sp = exact_loo_scores(&pds, &spec).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                assert_abs_diff_eq!(s[i], sp[k], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn loo_matches_refit_without_row() {
        let ds = synth(15, 6, 1.0, 8);
        for spec in [GlmSpec::ridge(1.0), GlmSpec::lasso(0.2)] {
            let s = exact_loo_scores(&ds, &spec).unwrap();
            for i in [0, 7, 14] {
                let rows: Vec<usize> = (0..15).filter(|&j| j != i).collect();
                let sub = ds.select_rows(&rows).unwrap();
                let sol = erm_solve(&sub, &spec, 1e-13, DEFAULT_MAX_ITER).unwrap();
                let want = (ds.y()[i] - sol.theta.dot(&ds.row(i))).abs();
                assert_abs_diff_eq!(s[i], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sweep_matches_per_label_refits() {
        let ds = synth(40, 15, 1.0, 9);
        for spec in [GlmSpec::ridge(1.0), GlmSpec::lasso(0.3)] {
            let mut sweep = ExactLooSweep::new(&ds, &spec).unwrap();
            for y_last in [-2.0, 0.3, 1.7, 4.0] {
                let fast = sweep.scores(y_last).unwrap();
                let slow = exact_loo_scores(&ds.with_last_label(y_last), &spec).unwrap();
                for i in 0..40 {
                    assert_abs_diff_eq!(fast[i], slow[i], epsilon = 1e-8);
                }
            }
        }
    }
}
