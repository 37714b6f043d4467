//! Taylor-AMP: the derivative of the AMP fixed point with respect to the
//! label of the last (test) row, obtained by iterating the linearized AMP
//! map. Scores for any candidate label then follow from one base fit.
//!
//! Differentiating every AMP update at the fixed point gives
//!
//! ```text
//! ΔV = X² Δv̂                     Δω = XΔθ̂ − ΔV ⊙ g − V ⊙ Δg
//! Δg  = ∂_ω g Δω + ∂_V g ΔV + ∂_y g e_{n+1}
//! Δ∂g = ∂²_ω g Δω + ∂_V∂_ω g ΔV + ∂_y∂_ω g e_{n+1}
//! ΔA = −X²ᵀ Δ∂g                   Δb = XᵀΔg + A ⊙ Δθ̂ + ΔA ⊙ θ̂
//! Δθ̂ = ∂_b f Δb + ∂_A f ΔA        Δv̂ = ∂²_b f Δb + ∂_A∂_b f ΔA
//! ```
//!
//! with all partials at the base fixed point. The `A ⊙ Δθ̂ + ΔA ⊙ θ̂` terms in
//! `Δb` come from the Onsager term of `b`; dropping them gives the wrong
//! derivative (checked against finite differences in the tests).

use ndarray::{Array1, Array2, Zip};

use crate::amp::{loo_predictions, AmpState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{channel_squared, denoiser, ChannelOutput, DenoiserOutput, GlmSpec, Regularizer};

/// Coordinates with `||b| − λ| below this are treated as inactive for Lasso.
pub const KINK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000 }
    }
}

/// `∂Ω/∂y` at the reference label `y_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorState {
    pub d_theta_hat: Array1<f64>,
    pub d_v_hat: Array1<f64>,
    pub d_omega: Array1<f64>,
    pub d_v: Array1<f64>,
    pub d_g: Array1<f64>,
    pub d_dg: Array1<f64>,
    pub d_b: Array1<f64>,
    pub d_a: Array1<f64>,
    pub y_ref: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lasso coordinates whose `b` sat within `KINK_EPS` of the threshold.
    pub near_kink: usize,
}

/// Iterate the linearized AMP map from zero until neither `Δθ̂` nor `Δg`
/// moves by `tol` or more in a sweep.
pub fn taylor_fit(
    base: &AmpState,
    ds_augmented: &Dataset,
    spec: &GlmSpec,
    opts: &TaylorOptions,
) -> Result<TaylorState> {
    spec.validate()?;
    base.ensure_converged("taylor_fit base state")?;
    let (m, d) = (ds_augmented.n(), ds_augmented.d());
    if base.n() != m || base.d() != d {
        return Err(Error::InvalidData(format!(
            "base state shape (n={}, d={}) does not match dataset (n={m}, d={d})",
            base.n(),
            base.d()
        )));
    }
    let x = ds_augmented.x();
    let y = ds_augmented.y();
    let x2 = x.mapv(|v| v * v);
    let xt = x.t().as_standard_layout().into_owned();
    let x2t = x2.t().as_standard_layout().into_owned();
    let last = m - 1;

    let ch: Vec<ChannelOutput> = (0..m)
        .map(|i| channel_squared(y[i], base.omega[i], base.v[i]))
        .collect::<Result<_>>()?;
    let mut near_kink = 0;
    let den: Vec<DenoiserOutput> = (0..d)
        .map(|mu| {
            let (b, a) = (base.b[mu], base.a[mu]);
            if spec.regularizer == Regularizer::Lasso && (b.abs() - spec.lambda).abs() < KINK_EPS {
                near_kink += 1;
                return Ok(DenoiserOutput::default());
            }
            denoiser(spec, b, a)
        })
        .collect::<Result<_>>()?;

    let mut d_theta = Array1::<f64>::zeros(d);
    let mut d_vhat = Array1::<f64>::zeros(d);
    let mut d_g = Array1::<f64>::zeros(m);
    let mut d_dg = Array1::<f64>::zeros(m);

    for iteration in 1..=opts.max_iter {
        let d_v = x2.dot(&d_vhat);
        let d_omega = x.dot(&d_theta) - &d_v * &base.g - &base.v * &d_g;

        let mut g_change = 0.0f64;
        for i in 0..m {
            let c = &ch[i];
            let mut new_g = c.dg_domega * d_omega[i] + c.dg_dv * d_v[i];
            let mut new_dg = c.d2g_domega2 * d_omega[i] + c.d2g_dv_domega * d_v[i];
            if i == last {
                new_g += c.dg_dy;
                new_dg += c.d2g_dy_domega;
            }
            g_change = g_change.max((new_g - d_g[i]).abs());
            d_g[i] = new_g;
            d_dg[i] = new_dg;
        }

        let d_a = -x2t.dot(&d_dg);
        let d_b = xt.dot(&d_g) + &base.a * &d_theta + &d_a * &base.theta_hat;

        let mut theta_change = 0.0f64;
        for mu in 0..d {
            let p = &den[mu];
            let new_theta = p.df_db * d_b[mu] + p.df_da * d_a[mu];
            theta_change = theta_change.max((new_theta - d_theta[mu]).abs());
            d_theta[mu] = new_theta;
            d_vhat[mu] = p.d2f_db2 * d_b[mu] + p.d2f_da_db * d_a[mu];
        }

        if !(theta_change.is_finite() && g_change.is_finite()) {
            return Err(Error::Divergence { solver: "taylor-amp", iteration });
        }
        let done = iteration > 1 && theta_change < opts.tol && g_change < opts.tol;
        if done || iteration == opts.max_iter {
            return Ok(TaylorState {
                d_theta_hat: d_theta,
                d_v_hat: d_vhat,
                d_omega,
                d_v,
                d_g,
                d_dg,
                d_b,
                d_a,
                y_ref: y[last],
                iterations: iteration,
                converged: done,
                near_kink,
            });
        }
    }
    Err(Error::InvalidConfig("taylor max_iter must be >= 1".into()))
}

/// `dp_i = (∂θ̂_{−i}/∂y)ᵀx_i` for every row, using
/// `∂θ̂_{−i}/∂y = Δθ̂ − g_i x_i ⊙ Δv̂ − Δg_i x_i ⊙ v̂`.
pub fn taylor_loo_derivatives(
    base: &AmpState,
    ts: &TaylorState,
    ds_augmented: &Dataset,
) -> Result<Array1<f64>> {
    base.ensure_converged("taylor derivatives")?;
    if !ts.converged {
        return Err(Error::Unconverged("taylor derivatives"));
    }
    let x = ds_augmented.x();
    let mut out = Array1::zeros(ds_augmented.n());
    for (i, row) in x.rows().into_iter().enumerate() {
        let (mut lin, mut lev_d, mut lev) = (0.0, 0.0, 0.0);
        Zip::from(&row)
            .and(&ts.d_theta_hat)
            .and(&ts.d_v_hat)
            .and(&base.v_hat)
            .for_each(|&xi, &dt, &dv, &v| {
                lin += xi * dt;
                lev_d += xi * xi * dv;
                lev += xi * xi * v;
            });
        out[i] = lin - base.g[i] * lev_d - ts.d_g[i] * lev;
    }
    Ok(out)
}

/// Single-row variant of [`taylor_loo_derivatives`].
pub fn taylor_loo_derivative(
    base: &AmpState,
    ts: &TaylorState,
    ds_augmented: &Dataset,
    i: usize,
) -> Result<f64> {
    let n = ds_augmented.n();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    Ok(taylor_loo_derivatives(base, ts, ds_augmented)?[i])
}

/// LOO predictions and their label derivatives: `p_i(y) ≈ p_i + (y − ŷ)·dp_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLoo {
    pub p: Array1<f64>,
    pub dp: Array1<f64>,
    pub y_ref: f64,
}

impl AffineLoo {
    pub fn new(base: &AmpState, ts: &TaylorState, ds_augmented: &Dataset) -> Result<Self> {
        Ok(Self {
            p: loo_predictions(base, ds_augmented)?,
            dp: taylor_loo_derivatives(base, ts, ds_augmented)?,
            y_ref: ts.y_ref,
        })
    }

    /// Scores of all rows at candidate label `y`; the last row uses `y` as its label.
    pub fn scores_at(&self, labels: &Array1<f64>, y: f64, out: &mut Array1<f64>) {
        let last = self.p.len() - 1;
        let shift = y - self.y_ref;
        for i in 0..last {
            out[i] = (labels[i] - (self.p[i] + shift * self.dp[i])).abs();
        }
        out[last] = (y - (self.p[last] + shift * self.dp[last])).abs();
    }
}

/// Score matrix with one row per grid label and one column per sample.
pub fn taylor_scores(
    base: &AmpState,
    ts: &TaylorState,
    ds_augmented: &Dataset,
    y_grid: &[f64],
) -> Result<Array2<f64>> {
    if y_grid.is_empty() {
        return Err(Error::Empty("label grid"));
    }
    let aff = AffineLoo::new(base, ts, ds_augmented)?;
    let labels = ds_augmented.y().to_owned();
    let m = ds_augmented.n();
    let mut out = Array2::zeros((y_grid.len(), m));
    let mut row = Array1::zeros(m);
    for (k, &y) in y_grid.iter().enumerate() {
        aff.scores_at(&labels, y, &mut row);
        out.row_mut(k).assign(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amp::{amp_fit, scores_from_state, AmpOptions};
    use crate::data::{generate_synthetic, SyntheticConfig, TeacherPrior};
    use approx::assert_abs_diff_eq;

    fn synth(n: usize, d: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n,
            d,
            teacher_prior: TeacherPrior::Gaussian,
            noise_variance: 1.0,
            seed,
        })
        .unwrap()
        .0
    }

    fn fit_pair(ds: &Dataset, spec: &GlmSpec) -> (AmpState, TaylorState) {
        let base = amp_fit(ds, spec, &AmpOptions::default()).unwrap();
        let ts = taylor_fit(&base, ds, spec, &TaylorOptions::default()).unwrap();
        assert!(ts.converged);
        (base, ts)
    }

    fn inf_norm(a: &Array1<f64>) -> f64 {
        a.fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn fd_states(ds: &Dataset, spec: &GlmSpec, eps: f64) -> (AmpState, AmpState) {
        let y = ds.y()[ds.n() - 1];
        let opts = AmpOptions { tol: 1e-13, max_iter: 5000, ..Default::default() };
        let plus = amp_fit(&ds.with_last_label(y + eps), spec, &opts).unwrap();
        let minus = amp_fit(&ds.with_last_label(y - eps), spec, &opts).unwrap();
        assert!(plus.converged && minus.converged);
        (plus, minus)
    }

    fn rel_err(analytic: &Array1<f64>, numeric: &Array1<f64>) -> f64 {
        inf_norm(&(analytic - numeric)) / inf_norm(numeric).max(1e-12)
    }

    #[test]
    fn ridge_derivatives_match_finite_differences() {
        let ds = synth(50, 100, 1);
        let spec = GlmSpec::ridge(1.0);
        let (_, ts) = fit_pair(&ds, &spec);
        let eps = 1e-4;
        let (p, m) = fd_states(&ds, &spec, eps);
        let fd = |a: &Array1<f64>, b: &Array1<f64>| (a - b) / (2.0 * eps);
        assert!(rel_err(&ts.d_theta_hat, &fd(&p.theta_hat, &m.theta_hat)) <= 1e-3);
        assert!(rel_err(&ts.d_g, &fd(&p.g, &m.g)) <= 1e-3);
        assert!(rel_err(&ts.d_omega, &fd(&p.omega, &m.omega)) <= 1e-3);
        assert!(rel_err(&ts.d_b, &fd(&p.b, &m.b)) <= 1e-3);
        assert!(inf_norm(&ts.d_v_hat) <= 1e-10);
        assert!(inf_norm(&ts.d_v) <= 1e-10);
        assert!(inf_norm(&ts.d_a) <= 1e-10);
    }

    #[test]
    fn lasso_derivatives_match_finite_differences() {
        let ds = synth(200, 100, 2);
        let spec = GlmSpec::lasso(0.5);
        let (_, ts) = fit_pair(&ds, &spec);
        assert_eq!(ts.near_kink, 0);
        let eps = 1e-5;
        let (p, m) = fd_states(&ds, &spec, eps);
        let fd = |a: &Array1<f64>, b: &Array1<f64>| (a - b) / (2.0 * eps);
        assert!(rel_err(&ts.d_theta_hat, &fd(&p.theta_hat, &m.theta_hat)) <= 1e-3);
        assert!(rel_err(&ts.d_g, &fd(&p.g, &m.g)) <= 1e-3);
        assert!(rel_err(&ts.d_v, &fd(&p.v, &m.v)) <= 1e-3 || inf_norm(&ts.d_v) < 1e-10);
    }

    #[test]
    fn loo_derivatives_match_finite_differences() {
        let ds = synth(50, 100, 3);
        let spec = GlmSpec::ridge(1.0);
        let (base, ts) = fit_pair(&ds, &spec);
        let dp = taylor_loo_derivatives(&base, &ts, &ds).unwrap();
        let eps = 1e-4;
        let y = ds.y()[ds.n() - 1];
        let loo = |label: f64| {
            let shifted = ds.with_last_label(label);
            let opts = AmpOptions { tol: 1e-13, max_iter: 5000, ..Default::default() };
            loo_predictions(&amp_fit(&shifted, &spec, &opts).unwrap(), &shifted).unwrap()
        };
        let fd = (loo(y + eps) - loo(y - eps)) / (2.0 * eps);
        assert!(inf_norm(&(&dp - &fd)) <= 1e-3);
        assert_abs_diff_eq!(
            taylor_loo_derivative(&base, &ts, &ds, 7).unwrap(),
            dp[7],
            epsilon = 0.0
        );
        assert!(taylor_loo_derivative(&base, &ts, &ds, 50).is_err());
    }

    #[test]
    fn zero_test_row_gives_zero_derivative() {
        let ds = synth(40, 20, 4);
        let mut x = ds.x().to_owned();
        x.row_mut(39).fill(0.0);
        let ds = Dataset::new(x, ds.y().to_owned()).unwrap();
        for spec in [GlmSpec::ridge(1.0), GlmSpec::lasso(0.3)] {
            let (base, ts) = fit_pair(&ds, &spec);
            assert!(inf_norm(&ts.d_theta_hat) == 0.0);
            let dp = taylor_loo_derivatives(&base, &ts, &ds).unwrap();
            assert!(inf_norm(&dp) == 0.0);
        }
    }

    #[test]
    fn heavy_regularization_is_insensitive() {
        let ds = synth(40, 40, 5);
        let (_, ts) = fit_pair(&ds, &GlmSpec::ridge(1e3));
        assert!(inf_norm(&ts.d_theta_hat) < 1e-2);
    }

    #[test]
    fn reference_column_reproduces_amp_scores() {
        let ds = synth(60, 30, 6);
        for spec in [GlmSpec::ridge(1.0), GlmSpec::lasso(0.3)] {
            let (base, ts) = fit_pair(&ds, &spec);
            let s = taylor_scores(&base, &ts, &ds, &[ts.y_ref, ts.y_ref + 1.0]).unwrap();
            let amp = scores_from_state(&base, &ds).unwrap();
            for i in 0..ds.n() {
                assert_eq!(s[[0, i]], amp[i]);
            }
            assert!(s.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn self_influence() {
        // The exact LOO prediction of the test row does not depend on its own
        // label, so AMP's dp_{n+1} is an O(1/√d) error of either sign. The
        // in-sample self-influence xᵀΔθ̂ is a ridge leverage and lies in [0, 1).
        let mut negative = 0;
        for seed in 0..50 {
            let ds = synth(50, 100, 100 + seed);
            let (base, ts) = fit_pair(&ds, &GlmSpec::ridge(1.0));
            let dp = taylor_loo_derivatives(&base, &ts, &ds).unwrap();
            let last = ds.n() - 1;
            assert!(dp[last].abs() < 0.2);
            negative += usize::from(dp[last] < 0.0);
            let lev = ds.row(last).dot(&ts.d_theta_hat);
            assert!((0.0..1.0).contains(&lev));
        }
        assert!(negative > 0 && negative < 50);
    }

    #[test]
    fn empty_grid_rejected() {
        let ds = synth(10, 5, 7);
        let (base, ts) = fit_pair(&ds, &GlmSpec::ridge(1.0));
        assert!(matches!(taylor_scores(&base, &ts, &ds, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn unconverged_base_refused() {
        let ds = synth(30, 10, 8);
        let spec = GlmSpec::ridge(1.0);
        let opts = AmpOptions { max_iter: 1, ..Default::default() };
        let base = amp_fit(&ds, &spec, &opts).unwrap();
        assert!(!base.converged);
        assert!(taylor_fit(&base, &ds, &spec, &TaylorOptions::default()).is_err());
    }
}
