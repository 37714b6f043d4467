//! Scalar channel (`g_out`) and denoiser (`f_w`) functions for squared loss
//! with Ridge or Lasso regularization, with every partial derivative that
//! Taylor-AMP consumes.
//!
//! The loss carries the ½ factor, `ℓ(y, z) = ½(y − z)²`, which is what makes
//! `g_out = (y − ω)/(1 + V)`. Note that the channel depends only on the loss,
//! so Ridge and Lasso share it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `r(θ) = λθ²/2`
    Ridge,
    /// `r(θ) = λ|θ|`
    Lasso,
}

/// Squared loss plus a separable regularizer of strength `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmSpec {
    pub regularizer: Regularizer,
    pub lambda: f64,
}

impl GlmSpec {
    pub fn ridge(lambda: f64) -> Self {
        Self { regularizer: Regularizer::Ridge, lambda }
    }

    pub fn lasso(lambda: f64) -> Self {
        Self { regularizer: Regularizer::Lasso, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `Σ_μ r(θ_μ)`
    pub fn penalty(&self, theta: impl IntoIterator<Item = f64>) -> f64 {
        match self.regularizer {
            Regularizer::Ridge => 0.5 * self.lambda * theta.into_iter().map(|t| t * t).sum::<f64>(),
            Regularizer::Lasso => self.lambda * theta.into_iter().map(f64::abs).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelOutput {
    pub g: f64,
    pub dg_domega: f64,
    pub dg_dv: f64,
    pub d2g_domega2: f64,
    pub d2g_dv_domega: f64,
    pub dg_dy: f64,
    pub d2g_dy_domega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DenoiserOutput {
    pub f: f64,
    pub df_db: f64,
    pub df_da: f64,
    pub d2f_db2: f64,
    pub d2f_da_db: f64,
}

/// Squared-loss channel and all of its partials.
pub fn channel_squared(y: f64, omega: f64, v: f64) -> Result<ChannelOutput> {
    let denom = 1.0 + v;
    if !(denom > 0.0) {
        return Err(Error::domain("channel_squared", format!("need 1 + V > 0, got V = {v}")));
    }
    let resid = y - omega;
    let inv = 1.0 / denom;
    let inv2 = inv * inv;
    Ok(ChannelOutput {
        g: resid * inv,
        dg_domega: -inv,
        dg_dv: -resid * inv2,
        d2g_domega2: 0.0,
        d2g_dv_domega: inv2,
        dg_dy: inv,
        d2g_dy_domega: 0.0,
    })
}

/// Ridge or Lasso denoiser and its partials. At the Lasso kink `|b| = λ`
/// the inactive (all-zero) branch is returned.
pub fn denoiser(spec: &GlmSpec, b: f64, a: f64) -> Result<DenoiserOutput> {
    let lambda = spec.lambda;
    match spec.regularizer {
        Regularizer::Ridge => {
            let denom = lambda + a;
            if !(denom > 0.0) {
                return Err(Error::domain(
                    "denoiser",
                    format!("ridge needs λ + A > 0, got λ = {lambda}, A = {a}"),
                ));
            }
            let inv = 1.0 / denom;
            Ok(DenoiserOutput {
                f: b * inv,
                df_db: inv,
                df_da: -b * inv * inv,
                d2f_db2: 0.0,
                d2f_da_db: -inv * inv,
            })
        }
        Regularizer::Lasso => {
            if b.abs() <= lambda {
                if a < 0.0 || a.is_nan() {
                    return Err(Error::domain("denoiser", format!("lasso needs A > 0, got {a}")));
                }
                return Ok(DenoiserOutput::default());
            }
            if !(a > 0.0) {
                return Err(Error::domain("denoiser", format!("lasso needs A > 0, got {a}")));
            }
            let shifted = if b > lambda { b - lambda } else { b + lambda };
            let inv = 1.0 / a;
            let f = shifted * inv;
            Ok(DenoiserOutput {
                f,
                df_db: inv,
                df_da: -f * inv,
                d2f_db2: 0.0,
                d2f_da_db: -inv * inv,
            })
        }
    }
}

/// Proximal form of the channel for an arbitrary convex loss:
/// `argmin_z ℓ(y, z) + (z − ω)²/(2V)`, found by bracketing followed by
/// golden-section search down to an interval of width `tol`. Comparing
/// function values cannot localize a minimum much below `√ε` relative to
/// its scale, so tolerances under ~1e-8 only cost iterations.
pub fn prox_generic<L>(loss: L, y: f64, omega: f64, v: f64, tol: f64) -> Result<f64>
where
    L: Fn(f64, f64) -> f64,
{
    if !(v > 0.0) {
        return Err(Error::domain("prox_generic", format!("need V > 0, got {v}")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("prox_generic", format!("need tol > 0, got {tol}")));
    }
    const MAX_ITER: usize = 10_000;
    let objective = |z: f64| loss(y, z) + (z - omega).powi(2) / (2.0 * v);

    // Expand a bracket around ω until the objective rises on both sides.
    let mut step = (y - omega).abs().max(v.sqrt()).max(tol);
    let f_mid = objective(omega);
    let (mut lo, mut hi) = (omega - step, omega + step);
    let mut expansions = 0;
    while objective(lo) < f_mid || objective(hi) < f_mid {
        step *= 2.0;
        lo = omega - step;
        hi = omega + step;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::NotConverged { solver: "prox_generic bracket", iterations: expansions });
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..MAX_ITER {
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    Err(Error::NotConverged { solver: "prox_generic", iterations: MAX_ITER })
}

/// First-order channel used inside the AMP loop: returns `(g, ∂_ω g)`.
pub trait Channel: Sync {
    fn eval(&self, y: f64, omega: f64, v: f64) -> Result<(f64, f64)>;
}

/// First-order denoiser used inside the AMP loop: returns `(f, ∂_b f)`.
pub trait Denoiser: Sync {
    fn eval(&self, b: f64, a: f64) -> Result<(f64, f64)>;
}

/// The squared-loss channel as an AMP [`Channel`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl Channel for SquaredLoss {
    #[inline]
    fn eval(&self, y: f64, omega: f64, v: f64) -> Result<(f64, f64)> {
        let denom = 1.0 + v;
        if !(denom > 0.0) {
            return Err(Error::domain("channel_squared", format!("need 1 + V > 0, got V = {v}")));
        }
        Ok(((y - omega) / denom, -1.0 / denom))
    }
}

impl Denoiser for GlmSpec {
    #[inline]
    fn eval(&self, b: f64, a: f64) -> Result<(f64, f64)> {
        denoiser(self, b, a).map(|o| (o.f, o.df_db))
    }
}
