//! Approximate message passing for generalized linear regression, and the
//! extraction of all `n` leave-one-out predictions from a single fit.
//!
//! One iteration, with `X²` the entrywise square of `X`:
//!
//! ```text
//! V = X² v̂            ω = Xθ̂ − V ⊙ g_prev
//! g, ∂g = g_out(y, ω, V)
//! A = −X²ᵀ ∂g          b = Xᵀg + A ⊙ θ̂
//! θ̂ ← f_w(b, A)        v̂ ← ∂_b f_w(b, A)
//! ```
//!
//! The leave-one-out estimator is `θ̂_{−i} = θ̂ − g_i x_i ⊙ v̂`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{Channel, Denoiser, GlmSpec, SquaredLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmpInit {
    /// `θ̂⁰ = 0`, `v̂⁰ = 1`, `g⁻¹ = 0`.
    #[default]
    Zero,
    /// `θ̂⁰ ~ N(0, I)`, otherwise as `Zero`.
    Seeded(u64),
}

#[derive(Debug, Clone)]
pub struct AmpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the previous iterate: `θ̂ ← (1 − damping)·new + damping·old`.
    pub damping: f64,
    pub init: AmpInit,
    pub warm_start: Option<AmpState>,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            damping: 0.0,
            init: AmpInit::Zero,
            warm_start: None,
        }
    }
}

impl AmpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("amp tol must be > 0, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "amp damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }

    pub fn with_warm_start(&self, state: AmpState) -> Self {
        Self { warm_start: Some(state), ..self.clone() }
    }
}

/// The AMP fixed point `(θ̂, v̂, ω, V, g, ∂g, b, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub theta_hat: Array1<f64>,
    pub v_hat: Array1<f64>,
    pub omega: Array1<f64>,
    pub v: Array1<f64>,
    pub g: Array1<f64>,
    pub dg: Array1<f64>,
    pub b: Array1<f64>,
    pub a: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AmpState {
    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn d(&self) -> usize {
        self.theta_hat.len()
    }

    pub(crate) fn ensure_converged(&self, what: &'static str) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Unconverged(what))
        }
    }
}

/// Run AMP for squared loss with a Ridge or Lasso penalty.
pub fn amp_fit(ds: &Dataset, spec: &GlmSpec, opts: &AmpOptions) -> Result<AmpState> {
    spec.validate()?;
    let x2 = ds.x().mapv(|v| v * v);
    run_amp(ds.x(), x2.view(), ds.y(), &SquaredLoss, spec, opts)
}

/// The AMP iteration for any scalar channel and separable denoiser.
/// `x2` must be the entrywise square of `x`.
pub fn run_amp<C: Channel, D: Denoiser>(
    x: ArrayView2<f64>,
    x2: ArrayView2<f64>,
    y: ArrayView1<f64>,
    channel: &C,
    denoiser: &D,
    opts: &AmpOptions,
) -> Result<AmpState> {
    opts.validate()?;
    let (n, d) = x.dim();

    let (mut theta, mut v_hat, mut g_prev) = match &opts.warm_start {
        Some(w) if w.d() == d && w.n() == n => (w.theta_hat.clone(), w.v_hat.clone(), w.g.clone()),
        Some(w) => {
            return Err(Error::InvalidConfig(format!(
                "warm start has shape (n={}, d={}), data has (n={n}, d={d})",
                w.n(),
                w.d()
            )))
        }
        None => {
            let theta = match opts.init {
                AmpInit::Zero => Array1::zeros(d),
                AmpInit::Seeded(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng))
                }
            };
            (theta, Array1::ones(d), Array1::zeros(n))
        }
    };

    // row-major transposes keep the `Xᵀ·` products cache friendly
    let xt = x.t().as_standard_layout().into_owned();
    let x2t = x2.t().as_standard_layout().into_owned();
    let mut g = Array1::zeros(n);
    let mut dg = Array1::zeros(n);
    let mut b = Array1::zeros(d);
    let mut a = Array1::zeros(d);
    let mut theta_new = Array1::zeros(d);
    let mut v_new = Array1::zeros(d);

    for iteration in 1..=opts.max_iter {
        let v = x2.dot(&v_hat);
        let omega = x.dot(&theta) - &v * &g_prev;

        for i in 0..n {
            let (gi, dgi) = channel.eval(y[i], omega[i], v[i])?;
            g[i] = gi;
            dg[i] = dgi;
        }
        a.assign(&x2t.dot(&dg));
        a.mapv_inplace(|v| -v);
        b.assign(&(xt.dot(&g) + &a * &theta));

        for mu in 0..d {
            let (f, df) = denoiser.eval(b[mu], a[mu])?;
            theta_new[mu] = f;
            v_new[mu] = df;
        }
        if opts.damping > 0.0 {
            let keep = opts.damping;
            Zip::from(&mut theta_new).and(&theta).for_each(|new, &old| {
                *new = (1.0 - keep) * *new + keep * old;
            });
            Zip::from(&mut v_new).and(&v_hat).for_each(|new, &old| {
                *new = (1.0 - keep) * *new + keep * old;
            });
        }

        let delta = Zip::from(&theta_new)
            .and(&theta)
            .fold(0.0f64, |m, &p, &q| m.max((p - q).abs()));
        if !delta.is_finite() || theta_new.iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence { solver: "amp", iteration });
        }

        std::mem::swap(&mut theta, &mut theta_new);
        std::mem::swap(&mut v_hat, &mut v_new);
        g_prev.assign(&g);

        if delta < opts.tol {
            return Ok(AmpState {
                theta_hat: theta,
                v_hat,
                omega,
                v,
                g,
                dg,
                b,
                a,
                iterations: iteration,
                converged: true,
            });
        }
        if iteration == opts.max_iter {
            return Ok(AmpState {
                theta_hat: theta,
                v_hat,
                omega,
                v,
                g,
                dg,
                b,
                a,
                iterations: iteration,
                converged: false,
            });
        }
    }
    Err(Error::InvalidConfig("amp max_iter must be >= 1".into()))
}

/// `p_i = θ̂_{−i}ᵀx_i = θ̂ᵀx_i − g_i Σ_μ x_{iμ}² v̂_μ` for every row.
pub fn loo_predictions(state: &AmpState, ds: &Dataset) -> Result<Array1<f64>> {
    state.ensure_converged("leave-one-out predictions")?;
    check_shapes(state, ds)?;
    let x = ds.x();
    let mut out = Array1::zeros(ds.n());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut fit = 0.0;
        let mut lev = 0.0;
        for ((&xi, &t), &v) in row.iter().zip(&state.theta_hat).zip(&state.v_hat) {
            fit += xi * t;
            lev += xi * xi * v;
        }
        out[i] = fit - state.g[i] * lev;
    }
    Ok(out)
}

/// All leave-one-out estimators, one per row: `θ̂ − g_i x_i ⊙ v̂`.
pub fn loo_estimators(state: &AmpState, ds: &Dataset) -> Result<Array2<f64>> {
    state.ensure_converged("leave-one-out estimators")?;
    check_shapes(state, ds)?;
    let mut out = Array2::zeros((ds.n(), ds.d()));
    for (i, mut dst) in out.rows_mut().into_iter().enumerate() {
        let gi = state.g[i];
        Zip::from(&mut dst)
            .and(ds.row(i))
            .and(&state.theta_hat)
            .and(&state.v_hat)
            .for_each(|o, &xi, &t, &v| *o = t - gi * xi * v);
    }
    Ok(out)
}

/// `σ_i = |y_i − p_i|` from an existing fit on the augmented dataset.
pub fn scores_from_state(state: &AmpState, ds_augmented: &Dataset) -> Result<Array1<f64>> {
    let p = loo_predictions(state, ds_augmented)?;
    Ok(Zip::from(&ds_augmented.y()).and(&p).map_collect(|&y, &p| (y - p).abs()))
}

/// Conformity scores of all `n + 1` rows of `𝒟⁺(y)` from one AMP fit.
pub fn conformity_scores_amp(
    ds_augmented: &Dataset,
    spec: &GlmSpec,
    opts: &AmpOptions,
) -> Result<Array1<f64>> {
    let state = amp_fit(ds_augmented, spec, opts)?;
    if !state.converged {
        return Err(Error::NotConverged { solver: "amp", iterations: state.iterations });
    }
    scores_from_state(&state, ds_augmented)
}

fn check_shapes(state: &AmpState, ds: &Dataset) -> Result<()> {
    if state.n() != ds.n() || state.d() != ds.d() {
        return Err(Error::InvalidData(format!(
            "state shape (n={}, d={}) does not match dataset (n={}, d={})",
            state.n(),
            state.d(),
            ds.n(),
            ds.d()
        )));
    }
    Ok(())
}
