//! Relaxed belief propagation over per-(sample, coordinate) cavity messages.
//!
//! This is the O(n·d)-memory ancestor of AMP and serves as a small-scale
//! oracle: the cavity mean `θ̂_{μ→i}` is the mean of coordinate `μ` with
//! sample `i` removed, so `Σ_μ x_{iμ} θ̂_{μ→i}` is a leave-one-out prediction.
//!
//! One iteration:
//!
//! ```text
//! ω_{i→μ} = Σ_{ν≠μ} x_{iν} θ̂_{ν→i}        V_{i→μ} = Σ_{ν≠μ} x²_{iν} v̂_{ν→i}
//! A_{μ→i} = −Σ_{j≠i} x²_{jμ} ∂_ω g(y_j, ω_{j→μ}, V_{j→μ})
//! b_{μ→i} =  Σ_{j≠i} x_{jμ} g(y_j, ω_{j→μ}, V_{j→μ})
//! θ̂_{μ→i} = f_w(b_{μ→i}, A_{μ→i})         v̂_{μ→i} = ∂_b f_w(b_{μ→i}, A_{μ→i})
//! ```
//!
//! Each excluded-index sum is computed as a full sum minus the excluded
//! term, keeping an iteration at O(n·d). The marginal uses the full sums
//! over all samples, `θ̂_μ = f_w(b_μ, A_μ)`.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{Channel, Denoiser, GlmSpec, SquaredLoss};

/// Largest `n·d` accepted by [`rbp_fit`].
pub const MAX_CELLS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RbpState {
    /// `θ̂_{μ→i}`, d × n.
    pub cavity_mean: Array2<f64>,
    /// `v̂_{μ→i}`, d × n.
    pub cavity_var: Array2<f64>,
    /// `ω_{i→μ}`, n × d.
    pub omega_cav: Array2<f64>,
    /// `V_{i→μ}`, n × d.
    pub v_cav: Array2<f64>,
    /// `A_{μ→i}`, d × n.
    pub a_cav: Array2<f64>,
    /// `b_{μ→i}`, d × n.
    pub b_cav: Array2<f64>,
    /// Marginal estimate `θ̂_μ = f_w(b_μ, A_μ)`.
    pub theta_hat: Array1<f64>,
    pub v_hat: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterate from cavity means 0 and variances 1 until no cavity mean moves
/// by `tol` or more.
pub fn rbp_fit(ds: &Dataset, spec: &GlmSpec, tol: f64, max_iter: usize) -> Result<RbpState> {
    rbp_fit_damped(ds, spec, tol, max_iter, 0.0)
}

/// [`rbp_fit`] with the cavity means and variances damped as
/// `new ← (1 − damping)·new + damping·old`. Lasso messages can oscillate
/// undamped.
pub fn rbp_fit_damped(
    ds: &Dataset,
    spec: &GlmSpec,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Result<RbpState> {
    spec.validate()?;
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::InvalidConfig(format!("rbp damping must lie in [0, 1), got {damping}")));
    }
    let (n, d) = (ds.n(), ds.d());
    let cells = n.saturating_mul(d);
    if cells > MAX_CELLS {
        return Err(Error::TooLarge { size: cells, limit: MAX_CELLS });
    }
    if max_iter == 0 {
        return Err(Error::InvalidConfig("rbp max_iter must be >= 1".into()));
    }
    let x = ds.x();
    let y = ds.y();
    let channel = SquaredLoss;

    let mut cavity_mean = Array2::<f64>::zeros((d, n));
    let mut cavity_var = Array2::<f64>::ones((d, n));
    let mut omega_cav = Array2::<f64>::zeros((n, d));
    let mut v_cav = Array2::<f64>::zeros((n, d));
    let mut a_cav = Array2::<f64>::zeros((d, n));
    let mut b_cav = Array2::<f64>::zeros((d, n));
    let mut g = Array2::<f64>::zeros((n, d));
    let mut dg = Array2::<f64>::zeros((n, d));
    let mut a_full = Array1::<f64>::zeros(d);
    let mut b_full = Array1::<f64>::zeros(d);

    for iteration in 1..=max_iter {
        for i in 0..n {
            let (mut om, mut vv) = (0.0, 0.0);
            for nu in 0..d {
                let xv = x[[i, nu]];
                om += xv * cavity_mean[[nu, i]];
                vv += xv * xv * cavity_var[[nu, i]];
            }
            for mu in 0..d {
                let xv = x[[i, mu]];
                let o = om - xv * cavity_mean[[mu, i]];
                let v = vv - xv * xv * cavity_var[[mu, i]];
                omega_cav[[i, mu]] = o;
                v_cav[[i, mu]] = v;
                let (gv, dgv) = channel.eval(y[i], o, v)?;
                g[[i, mu]] = gv;
                dg[[i, mu]] = dgv;
            }
        }

        let mut change = 0.0f64;
        for mu in 0..d {
            let (mut bs, mut as_) = (0.0, 0.0);
            for j in 0..n {
                let xv = x[[j, mu]];
                bs += xv * g[[j, mu]];
                as_ -= xv * xv * dg[[j, mu]];
            }
            b_full[mu] = bs;
            a_full[mu] = as_;
            for i in 0..n {
                let xv = x[[i, mu]];
                let b = bs - xv * g[[i, mu]];
                let a = as_ + xv * xv * dg[[i, mu]];
                b_cav[[mu, i]] = b;
                a_cav[[mu, i]] = a;
                let (mut f, mut df) = spec.eval(b, a)?;
                if damping > 0.0 {
                    f = (1.0 - damping) * f + damping * cavity_mean[[mu, i]];
                    df = (1.0 - damping) * df + damping * cavity_var[[mu, i]];
                }
                change = change.max((f - cavity_mean[[mu, i]]).abs());
                cavity_mean[[mu, i]] = f;
                cavity_var[[mu, i]] = df;
            }
        }
        if !change.is_finite() {
            return Err(Error::Divergence { solver: "rbp", iteration });
        }

        let converged = change < tol;
        if converged || iteration == max_iter {
            let mut theta_hat = Array1::zeros(d);
            let mut v_hat = Array1::zeros(d);
            for mu in 0..d {
                let (f, df) = spec.eval(b_full[mu], a_full[mu])?;
                theta_hat[mu] = f;
                v_hat[mu] = df;
            }
            return Ok(RbpState {
                cavity_mean,
                cavity_var,
                omega_cav,
                v_cav,
                a_cav,
                b_cav,
                theta_hat,
                v_hat,
                iterations: iteration,
                converged,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Cavity prediction `Σ_μ x_{iμ} θ̂_{μ→i}` for sample `i`.
pub fn rbp_loo_prediction(state: &RbpState, ds: &Dataset, i: usize) -> Result<f64> {
    if !state.converged {
        return Err(Error::Unconverged("rbp leave-one-out prediction"));
    }
    if state.cavity_mean.dim() != (ds.d(), ds.n()) {
        return Err(Error::InvalidData("rbp state shape does not match dataset".into()));
    }
    if i >= ds.n() {
        return Err(Error::IndexOutOfRange { index: i, len: ds.n() });
    }
    Ok(ds.row(i).dot(&state.cavity_mean.column(i)))
}

/// All cavity predictions.
pub fn rbp_loo_predictions(state: &RbpState, ds: &Dataset) -> Result<Array1<f64>> {
    (0..ds.n()).map(|i| rbp_loo_prediction(state, ds, i)).collect()
}
