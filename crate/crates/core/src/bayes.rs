//! Bayes-optimal prediction intervals for the teacher-student model
//! `y = θ⋆ᵀx + ε`, `ε ~ N(0, Δ)`, with a known prior on `θ⋆`.
//!
//! Gaussian prior: the posterior is Gaussian and the interval is closed
//! form. Laplace prior: posterior means and variances come from AMP with the
//! matched channel `(y − ω)/(Δ + V)` and the Laplace posterior-mean denoiser,
//! and the predictive is taken to be `N(θ̂ᵀx, Σ_μ x_μ² v̂_μ + Δ)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::amp::{run_amp, AmpOptions};
use crate::data::{Dataset, TeacherPrior};
use crate::error::{Error, Result};
use crate::glm::{Channel, Denoiser};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub prior: TeacherPrior,
    pub noise_variance: f64,
    pub kappa: f64,
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_variance must be finite and > 0, got {}",
                self.noise_variance
            )));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidConfig(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Symmetric highest-density interval of a normal predictive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesInterval {
    pub mean: f64,
    pub variance: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BayesInterval {
    fn normal(mean: f64, variance: f64, kappa: f64) -> Result<Self> {
        let z = Normal::standard().inverse_cdf(1.0 - kappa / 2.0);
        let half = z * variance.sqrt();
        if !half.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidData("non-finite predictive distribution".into()));
        }
        Ok(Self { mean, variance, lo: mean - half, hi: mean + half })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Posterior predictive mean and variance under a standard normal prior,
/// for any number of rows including none.
pub fn gaussian_predictive(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    x_test: ArrayView1<f64>,
    noise_variance: f64,
) -> Result<(f64, f64)> {
    let d = x.ncols();
    if x.nrows() != y.len() || x_test.len() != d {
        return Err(Error::InvalidData("shape mismatch in gaussian_predictive".into()));
    }
    let mut precision: Array2<f64> = x.t().dot(&x) / noise_variance;
    precision.diag_mut().mapv_inplace(|v| v + 1.0);
    let factor = SpdFactor::new(precision.view())?;
    let post_mean = factor.solve((x.t().dot(&y) / noise_variance).view());
    let sx = factor.solve(x_test);
    Ok((post_mean.dot(&x_test), x_test.dot(&sx) + noise_variance))
}

pub fn bayes_interval_gaussian(ds: &Dataset, x_test: ArrayView1<f64>, cfg: &BayesConfig) -> Result<BayesInterval> {
    cfg.validate()?;
    if cfg.prior != TeacherPrior::Gaussian {
        return Err(Error::InvalidConfig("bayes_interval_gaussian needs the gaussian prior".into()));
    }
    let (mean, var) = gaussian_predictive(ds.x(), ds.y(), x_test, cfg.noise_variance)?;
    BayesInterval::normal(mean, var, cfg.kappa)
}

/// Matched Gaussian-noise channel: `g = (y − ω)/(Δ + V)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNoise {
    pub delta: f64,
}

impl Channel for GaussianNoise {
    fn eval(&self, y: f64, omega: f64, v: f64) -> Result<(f64, f64)> {
        let denom = self.delta + v;
        if !(denom > 0.0) {
            return Err(Error::domain("gaussian noise channel", format!("need Δ + V > 0, got {denom}")));
        }
        Ok(((y - omega) / denom, -1.0 / denom))
    }
}

/// Posterior mean and variance of `θ` under prior `p` given the scalar
/// field `exp(bθ − Aθ²/2)`.
#[derive(Debug, Clone, Copy)]
pub enum PriorDenoiser {
    /// Standard normal prior.
    Gaussian,
    /// Density `½e^{−|θ|}`.
    Laplace,
}

impl Denoiser for PriorDenoiser {
    fn eval(&self, b: f64, a: f64) -> Result<(f64, f64)> {
        match self {
            PriorDenoiser::Gaussian => {
                if !(1.0 + a > 0.0) {
                    return Err(Error::domain("gaussian prior denoiser", format!("need 1 + A > 0, got A = {a}")));
                }
                Ok((b / (1.0 + a), 1.0 / (1.0 + a)))
            }
            PriorDenoiser::Laplace => laplace_denoiser(b, a),
        }
    }
}

/// `erfc(x)·exp(x²)` for `x ≥ 0`.
fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        erfc(x) * (x * x).exp()
    } else {
        let inv2 = 1.0 / (x * x);
        (1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2 - 1.875 * inv2 * inv2 * inv2)
            / (x * std::f64::consts::PI.sqrt())
    }
}

/// `t²/2 + ln Φ(t)` and the Mills ratio `φ(t)/Φ(t)`, both stable for t ≪ 0.
fn log_weight_and_mills(t: f64) -> (f64, f64) {
    let s2 = std::f64::consts::SQRT_2;
    if t < 0.0 {
        let e = erfcx(-t / s2);
        ((0.5 * e).ln(), (2.0 / std::f64::consts::PI).sqrt() / e)
    } else {
        let cdf = 0.5 * erfc(-t / s2);
        let pdf = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0.5 * t * t + cdf.ln(), pdf / cdf)
    }
}

/// Laplace-prior posterior mean `f` and variance `∂_b f`.
///
/// The tilted density `½e^{−|θ|+bθ−Aθ²/2}` is a mixture of `N((b−1)/A, 1/A)`
/// truncated to `θ > 0` and `N((b+1)/A, 1/A)` truncated to `θ < 0`.
pub fn laplace_denoiser(b: f64, a: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::domain("laplace denoiser", format!("need finite b and A > 0, got b = {b}, A = {a}")));
    }
    let sigma = 1.0 / a.sqrt();
    // positive part: mean m₊, truncation point in standard units t₊ = m₊/σ
    let mp = (b - 1.0) / a;
    let tp = mp / sigma;
    let (lwp, rp) = log_weight_and_mills(tp);
    let mean_p = mp + sigma * rp;
    let var_p = sigma * sigma * (1.0 - rp * (rp + tp));
    // negative part, mirrored: θ < 0 with mean m₋ is −(θ' > 0 with mean −m₋)
    let mn = (b + 1.0) / a;
    let tn = -mn / sigma;
    let (lwn, rn) = log_weight_and_mills(tn);
    let mean_n = mn - sigma * rn;
    let var_n = sigma * sigma * (1.0 - rn * (rn + tn));

    let top = lwp.max(lwn);
    let (wp, wn) = ((lwp - top).exp(), (lwn - top).exp());
    let (wp, wn) = (wp / (wp + wn), wn / (wp + wn));
    let f = wp * mean_p + wn * mean_n;
    let second = wp * (var_p + mean_p * mean_p) + wn * (var_n + mean_n * mean_n);
    let var = (second - f * f).max(0.0);
    Ok((f, var))
}

/// Laplace-prior predictive interval from MMSE AMP.
pub fn bayes_interval_laplace(
    ds: &Dataset,
    x_test: ArrayView1<f64>,
    cfg: &BayesConfig,
    opts: &AmpOptions,
) -> Result<BayesInterval> {
    bayes_interval_amp(ds, x_test, cfg, PriorDenoiser::Laplace, opts)
}

/// Predictive interval from MMSE AMP with the given prior denoiser.
pub fn bayes_interval_amp(
    ds: &Dataset,
    x_test: ArrayView1<f64>,
    cfg: &BayesConfig,
    prior: PriorDenoiser,
    opts: &AmpOptions,
) -> Result<BayesInterval> {
    cfg.validate()?;
    if x_test.len() != ds.d() {
        return Err(Error::InvalidData("x_test length does not match the data".into()));
    }
    let x2 = ds.x().mapv(|v| v * v);
    let channel = GaussianNoise { delta: cfg.noise_variance };
    let state = run_amp(ds.x(), x2.view(), ds.y(), &channel, &prior, opts)?;
    if !state.converged {
        return Err(Error::NotConverged { solver: "mmse amp", iterations: state.iterations });
    }
    let mean = state.theta_hat.dot(&x_test);
    let var = x_test.iter().zip(&state.v_hat).map(|(x, v)| x * x * v).sum::<f64>() + cfg.noise_variance;
    BayesInterval::normal(mean, var, cfg.kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Posterior mean and variance by composite Simpson quadrature on each
    /// side of the kink, in log space relative to the peak.
    fn laplace_quadrature(b: f64, a: f64) -> (f64, f64) {
        let log_density = |t: f64| -t.abs() + b * t - 0.5 * a * t * t;
        let sigma = 1.0 / a.sqrt();
        let lo = ((b - 1.0) / a).min((b + 1.0) / a).min(0.0) - 40.0 * sigma;
        let hi = ((b - 1.0) / a).max((b + 1.0) / a).max(0.0) + 40.0 * sigma;
        let peak = [lo, hi, 0.0, (b - 1.0) / a, (b + 1.0) / a]
            .iter()
            .copied()
            .filter(|t| (lo..=hi).contains(t))
            .map(log_density)
            .fold(f64::NEG_INFINITY, f64::max);
        let simpson = |l: f64, r: f64, f: &dyn Fn(f64) -> f64| {
            let m = 200_000;
            let h = (r - l) / m as f64;
            let mut s = f(l) + f(r);
            for k in 1..m {
                s += f(l + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let moments = |p: i32| {
            let f = |t: f64| t.powi(p) * (log_density(t) - peak).exp();
            simpson(lo, 0.0, &f) + simpson(0.0, hi, &f)
        };
        let z = moments(0);
        let mean = moments(1) / z;
        (mean, moments(2) / z - mean * mean)
    }

    #[test]
    fn laplace_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = 10f64.powf(rng.random_range(-1.0..2.0));
            let b = rng.random_range(-5.0..5.0) * (1.0 + a);
            let (f, v) = laplace_denoiser(b, a).unwrap();
            let (qf, qv) = laplace_quadrature(b, a);
            assert!((f - qf).abs() <= 1e-8 * (1.0 + qf.abs()), "b={b} a={a} {f} {qf}");
            assert!((v - qv).abs() <= 1e-8 * (1.0 + qv.abs()), "b={b} a={a} {v} {qv}");
        }
    }

    #[test]
    fn laplace_variance_is_mean_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let a = rng.random_range(0.1..50.0);
            let b = rng.random_range(-20.0..20.0);
            let h = 1e-6;
            let fd = (laplace_denoiser(b + h, a).unwrap().0 - laplace_denoiser(b - h, a).unwrap().0) / (2.0 * h);
            let (_, v) = laplace_denoiser(b, a).unwrap();
            assert!((fd - v).abs() <= 1e-5 * (1.0 + v), "{fd} {v}");
        }
    }

    #[test]
    fn laplace_limits() {
        assert_eq!(laplace_denoiser(0.0, 3.0).unwrap().0, 0.0);
        for (b, a) in [(0.7, 2.0), (5.0, 0.3), (-40.0, 1.0)] {
            let (f, _) = laplace_denoiser(b, a).unwrap();
            let (g, _) = laplace_denoiser(-b, a).unwrap();
            assert_abs_diff_eq!(f, -g, epsilon = 1e-12);
        }
        let a = 1e6;
        for ratio in [-2.0, 0.5, 3.0] {
            let (f, v) = laplace_denoiser(ratio * a, a).unwrap();
            assert_abs_diff_eq!(f, ratio, epsilon = 1e-5);
            assert!(v < 2e-6);
        }
        // extreme fields stay finite
        for (b, a) in [(1e4, 1e-3), (-1e4, 1e-3), (1.0, 1e-8), (1e3, 1e8)] {
            let (f, v) = laplace_denoiser(b, a).unwrap();
            assert!(f.is_finite() && v.is_finite() && v >= 0.0);
        }
        assert!(laplace_denoiser(1.0, 0.0).is_err());
    }

    #[test]
    fn prior_only_interval() {
        let x = Array2::<f64>::zeros((0, 1));
        let y = Array1::<f64>::zeros(0);
        let (mean, var) = gaussian_predictive(x.view(), y.view(), array![1.0].view(), 1.0).unwrap();
        assert_eq!(mean, 0.0);
        assert_abs_diff_eq!(var, 2.0, epsilon = 1e-15);
        let iv = BayesInterval::normal(mean, var, 0.1).unwrap();
        assert_abs_diff_eq!(iv.length(), 2.0 * 1.6448536269514722 * 2f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(iv.length(), 4.652, epsilon = 1e-3);
    }

    fn teacher_data(prior: TeacherPrior, n: usize, d: usize, seed: u64) -> (Dataset, Array1<f64>) {
        generate_synthetic(&SyntheticConfig { n, d, teacher_prior: prior, noise_variance: 1.0, seed }).unwrap()
    }

    #[test]
    fn gaussian_interval_is_symmetric() {
        let (ds, _) = teacher_data(TeacherPrior::Gaussian, 50, 20, 1);
        let cfg = BayesConfig { prior: TeacherPrior::Gaussian, noise_variance: 1.0, kappa: 0.1 };
        let iv = bayes_interval_gaussian(&ds, ds.row(0), &cfg).unwrap();
        assert_abs_diff_eq!(iv.mean - iv.lo, iv.hi - iv.mean, epsilon = 1e-12);
        let wrong = BayesConfig { prior: TeacherPrior::Laplace, ..cfg };
        assert!(bayes_interval_gaussian(&ds, ds.row(0), &wrong).is_err());
    }

    #[test]
    fn gaussian_length_shrinks_with_n() {
        let cfg = BayesConfig { prior: TeacherPrior::Gaussian, noise_variance: 1.0, kappa: 0.1 };
        let mean_length = |n: usize| {
            (0..50)
                .map(|seed| {
                    let (ds, _) = teacher_data(TeacherPrior::Gaussian, n + 1, 40, seed);
                    let train = ds.select_rows(&(0..n).collect::<Vec<_>>()).unwrap();
                    bayes_interval_gaussian(&train, ds.row(n), &cfg).unwrap().length()
                })
                .sum::<f64>()
                / 50.0
        };
        let lengths: Vec<f64> = [10, 40, 160].iter().map(|&n| mean_length(n)).collect();
        assert!(lengths[0] > lengths[1] && lengths[1] > lengths[2], "{lengths:?}");
    }

    #[test]
    fn mmse_amp_matches_gaussian_closed_form() {
        let (full, _) = teacher_data(TeacherPrior::Gaussian, 201, 100, 2);
        let ds = full.select_rows(&(0..200).collect::<Vec<_>>()).unwrap();
        let x = full.row(200);
        let cfg = BayesConfig { prior: TeacherPrior::Gaussian, noise_variance: 1.0, kappa: 0.1 };
        let exact = bayes_interval_gaussian(&ds, x, &cfg).unwrap();
        let amp = bayes_interval_amp(&ds, x, &cfg, PriorDenoiser::Gaussian, &AmpOptions::default()).unwrap();
        assert!((amp.mean - exact.mean).abs() <= 1e-4 * exact.mean.abs().max(1e-3));
        assert!((amp.variance - exact.variance).abs() <= 0.05 * exact.variance, "{} {}", amp.variance, exact.variance);
    }

    #[test]
    fn laplace_interval_runs() {
        let (ds, _) = teacher_data(TeacherPrior::Laplace, 125, 250, 3);
        let cfg = BayesConfig { prior: TeacherPrior::Laplace, noise_variance: 1.0, kappa: 0.1 };
        let iv = bayes_interval_laplace(&ds, ds.row(0), &cfg, &AmpOptions::default()).unwrap();
        assert!(iv.length() > 2.0 * 1.6448 && iv.length() < 12.0, "{}", iv.length());
    }
}
