//! Prediction sets: full conformal prediction over a label grid with exact,
//! AMP, or Taylor-AMP conformity scores; split conformal prediction; and the
//! metrics used to compare sets (coverage, length, Jaccard index).

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::amp::{amp_fit, scores_from_state, AmpOptions, AmpState};
use crate::data::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::exact::{erm_solve, ExactLooSweep, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::glm::GlmSpec;
use crate::taylor::{taylor_fit, AffineLoo, TaylorOptions};

pub const DEFAULT_GRID_POINTS: usize = 200;

/// How conformity scores are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ExactLoo,
    Amp,
    TaylorAmp,
    Scp,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::ExactLoo => "exact_loo",
            Backend::Amp => "amp",
            Backend::TaylorAmp => "taylor_amp",
            Backend::Scp => "scp",
        }
    }
}

/// Uniform candidate labels `center ± half_width`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub center: f64,
    pub half_width: f64,
    pub num_points: usize,
}

impl LabelGrid {
    pub fn new(center: f64, half_width: f64, num_points: usize) -> Result<Self> {
        let grid = Self { center, half_width, num_points };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid needs finite center and half_width > 0, got {} ± {}",
                self.center, self.half_width
            )));
        }
        if self.num_points < 2 {
            return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.num_points - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.num_points {
            self.center + self.half_width
        } else {
            self.center - self.half_width + k as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.num_points).map(|k| self.point(k)).collect()
    }
}

/// Either a fixed grid, or the default data-driven grid: centered on the
/// point prediction of the n-sample fit, half width `5·(1 + std of training
/// residuals)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    Auto { num_points: usize },
    Fixed(LabelGrid),
}

impl Default for GridChoice {
    fn default() -> Self {
        GridChoice::Auto { num_points: DEFAULT_GRID_POINTS }
    }
}

#[derive(Debug, Clone)]
pub struct ConformalConfig {
    /// Target miscoverage; sets aim for coverage `1 − κ`.
    pub kappa: f64,
    pub grid: GridChoice,
    pub backend: Backend,
    pub amp: AmpOptions,
    pub taylor: TaylorOptions,
}

impl ConformalConfig {
    pub fn new(kappa: f64, backend: Backend) -> Self {
        Self {
            kappa,
            grid: GridChoice::default(),
            backend,
            amp: AmpOptions::default(),
            taylor: TaylorOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_kappa(self.kappa)?;
        if let GridChoice::Fixed(g) = &self.grid {
            g.validate()?;
        }
        if let GridChoice::Auto { num_points } = self.grid {
            if num_points < 2 {
                return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
            }
        }
        self.amp.validate()
    }
}

fn validate_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidConfig(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    Ok(())
}

/// A set of labels as sorted, disjoint closed intervals. Grid-based sets
/// also keep the grid and per-point inclusion mask they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub grid: Option<LabelGrid>,
    pub included: Vec<bool>,
    pub intervals: Vec<(f64, f64)>,
}

impl PredictionSet {
    /// Each maximal run of included grid points becomes `[first, last]`.
    pub fn from_mask(grid: LabelGrid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.num_points {
            return Err(Error::InvalidData(format!(
                "mask has {} entries for a {}-point grid",
                included.len(),
                grid.num_points
            )));
        }
        let mut intervals = Vec::new();
        let mut start: Option<usize> = None;
        for (k, &inc) in included.iter().enumerate() {
            match (inc, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    intervals.push((grid.point(s), grid.point(k - 1)));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            intervals.push((grid.point(s), grid.point(grid.num_points - 1)));
        }
        Ok(Self { grid: Some(grid), included, intervals })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidData(format!("interval needs lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Self { grid: None, included: Vec::new(), intervals: vec![(lo, hi)] })
    }

    pub fn empty() -> Self {
        Self { grid: None, included: Vec::new(), intervals: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= y && y <= b)
    }

    /// True when an end point of the grid is included, i.e. the set may
    /// extend past the grid.
    pub fn touches_grid_boundary(&self) -> bool {
        matches!((self.included.first(), self.included.last()), (Some(true), _) | (_, Some(true)))
    }
}

/// The k-th smallest score with `k = min(m, ⌈(1 − κ)·m⌉)`.
pub fn conformal_threshold(scores: ArrayView1<f64>, kappa: f64) -> Result<f64> {
    validate_kappa(kappa)?;
    let m = scores.len();
    if m == 0 {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("scores must be finite".into()));
    }
    Ok(kth_smallest(scores, rank(kappa, m, m)))
}

/// `min(cap, max(1, ⌈(1 − κ)·m⌉))`, with the product nudged down so that
/// float noise in e.g. `0.9·10` does not bump the rank.
fn rank(kappa: f64, m: usize, cap: usize) -> usize {
    let k = ((1.0 - kappa) * m as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(cap)
}

fn kth_smallest(scores: ArrayView1<f64>, k: usize) -> f64 {
    let mut buf: Vec<f64> = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Whether the last score passes the conformal test: `σ_last ≤ threshold`.
pub fn includes_last(scores: ArrayView1<f64>, kappa: f64) -> Result<bool> {
    let t = conformal_threshold(scores, kappa)?;
    Ok(scores[scores.len() - 1] <= t)
}

fn residual_std(ds: &Dataset, theta: &Array1<f64>) -> f64 {
    let r = &ds.y() - &ds.x().dot(theta);
    r.std(0.0)
}

fn auto_grid(ds: &Dataset, theta: &Array1<f64>, x_test: ArrayView1<f64>, num_points: usize) -> Result<LabelGrid> {
    LabelGrid::new(theta.dot(&x_test), 5.0 * (1.0 + residual_std(ds, theta)), num_points)
}

fn fit_amp(ds: &Dataset, spec: &GlmSpec, opts: &AmpOptions) -> Result<AmpState> {
    let state = amp_fit(ds, spec, opts)?;
    if !state.converged {
        return Err(Error::NotConverged { solver: "amp", iterations: state.iterations });
    }
    Ok(state)
}

/// Full conformal prediction set for `x_test`.
pub fn fcp_predict(
    train: &Dataset,
    x_test: ArrayView1<f64>,
    spec: &GlmSpec,
    cfg: &ConformalConfig,
) -> Result<PredictionSet> {
    cfg.validate()?;
    spec.validate()?;
    if x_test.len() != train.d() {
        return Err(Error::InvalidData(format!(
            "x_test has {} features, training data has {}",
            x_test.len(),
            train.d()
        )));
    }
    let choose_grid = |theta: &Array1<f64>| match cfg.grid {
        GridChoice::Fixed(g) => Ok(g),
        GridChoice::Auto { num_points } => auto_grid(train, theta, x_test, num_points),
    };

    let mut mask = Vec::new();
    let grid = match cfg.backend {
        Backend::Scp => {
            return Err(Error::InvalidConfig("fcp_predict does not take the scp backend; use scp_predict".into()))
        }
        Backend::ExactLoo => {
            let fit = erm_solve(train, spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let grid = choose_grid(&fit.theta)?;
            let aug = train.augmented(x_test, grid.center)?;
            let mut sweep = ExactLooSweep::new(&aug, spec)?;
            for y in grid.points() {
                mask.push(includes_last(sweep.scores(y)?.view(), cfg.kappa)?);
            }
            grid
        }
        Backend::Amp => {
            let fit = fit_amp(train, spec, &cfg.amp)?;
            let grid = choose_grid(&fit.theta_hat)?;
            let mut aug = train.augmented(x_test, grid.center)?;
            let mut warm: Option<AmpState> = None;
            for y in grid.points() {
                aug = aug.with_last_label(y);
                let opts = match warm.take() {
                    Some(w) => cfg.amp.with_warm_start(w),
                    None => cfg.amp.clone(),
                };
                let state = fit_amp(&aug, spec, &opts)?;
                mask.push(includes_last(scores_from_state(&state, &aug)?.view(), cfg.kappa)?);
                warm = Some(state);
            }
            grid
        }
        Backend::TaylorAmp => {
            let fit = fit_amp(train, spec, &cfg.amp)?;
            let grid = choose_grid(&fit.theta_hat)?;
            let y_ref = fit.theta_hat.dot(&x_test);
            let aug = train.augmented(x_test, y_ref)?;
            let base = fit_amp(&aug, spec, &cfg.amp)?;
            let ts = taylor_fit(&base, &aug, spec, &cfg.taylor)?;
            if !ts.converged {
                return Err(Error::NotConverged { solver: "taylor-amp", iterations: ts.iterations });
            }
            let affine = AffineLoo::new(&base, &ts, &aug)?;
            let labels = aug.y().to_owned();
            let mut scores = Array1::zeros(aug.n());
            for y in grid.points() {
                affine.scores_at(&labels, y, &mut scores);
                mask.push(includes_last(scores.view(), cfg.kappa)?);
            }
            grid
        }
    };
    PredictionSet::from_mask(grid, mask)
}

/// A split conformal model: fit on one part, calibrated on the other.
/// Every prediction interval has the same half width `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScpModel {
    pub theta: Array1<f64>,
    pub q: f64,
}

impl ScpModel {
    pub fn fit(ds: &Dataset, spec: &GlmSpec, kappa: f64, split_spec: &SplitSpec) -> Result<Self> {
        validate_kappa(kappa)?;
        let (train, cal) = split(ds, split_spec)?;
        let theta = erm_solve(&train, spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?.theta;
        let scores = (&cal.y() - &cal.x().dot(&theta)).mapv(f64::abs);
        let n_cal = scores.len();
        if n_cal == 0 {
            return Err(Error::Empty("calibration set"));
        }
        let q = kth_smallest(scores.view(), rank(kappa, n_cal + 1, n_cal));
        Ok(Self { theta, q })
    }

    pub fn predict(&self, x_test: ArrayView1<f64>) -> Result<PredictionSet> {
        if x_test.len() != self.theta.len() {
            return Err(Error::InvalidData("x_test length does not match the model".into()));
        }
        let center = self.theta.dot(&x_test);
        PredictionSet::interval(center - self.q, center + self.q)
    }
}

/// Split conformal interval `[θ̂ᵀx − Q, θ̂ᵀx + Q]`.
pub fn scp_predict(
    ds: &Dataset,
    x_test: ArrayView1<f64>,
    spec: &GlmSpec,
    kappa: f64,
    split_spec: &SplitSpec,
) -> Result<PredictionSet> {
    ScpModel::fit(ds, spec, kappa, split_spec)?.predict(x_test)
}

fn overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// `|A ∩ B| / |A ∪ B|` in Lebesgue measure. Two sets of measure zero score
/// 1 when they are equal and 0 otherwise, so two empty sets score 1.
pub fn jaccard(a: &PredictionSet, b: &PredictionSet) -> f64 {
    let inter = overlap(&a.intervals, &b.intervals);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return if a.intervals == b.intervals { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub coverage: f64,
    pub mean_length: f64,
    /// Sample standard deviation (0 for a single set).
    pub std_length: f64,
}

pub fn evaluate(sets: &[PredictionSet], y_true: &[f64]) -> Result<Metrics> {
    if sets.len() != y_true.len() {
        return Err(Error::InvalidData(format!(
            "{} sets but {} labels",
            sets.len(),
            y_true.len()
        )));
    }
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let m = sets.len() as f64;
    let covered = sets.iter().zip(y_true).filter(|(s, &y)| s.contains(y)).count();
    let lengths: Array1<f64> = sets.iter().map(PredictionSet::length).collect();
    let ddof = if sets.len() > 1 { 1.0 } else { 0.0 };
    Ok(Metrics {
        coverage: covered as f64 / m,
        mean_length: lengths.mean().unwrap_or(0.0),
        std_length: lengths.std(ddof),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig, TeacherPrior};
    use crate::taylor::taylor_scores;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn synth(n: usize, d: usize, noise: f64, seed: u64) -> (Dataset, Array1<f64>) {
        generate_synthetic(&SyntheticConfig {
            n,
            d,
            teacher_prior: TeacherPrior::Gaussian,
            noise_variance: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn threshold_examples() {
        let s: Array1<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(conformal_threshold(s.view(), 0.1).unwrap(), 9.0);
        assert_eq!(conformal_threshold(s.view(), 1e-9).unwrap(), 10.0);
        let c = Array1::from_elem(7, 2.5);
        for kappa in [0.01, 0.3, 0.9] {
            assert_eq!(conformal_threshold(c.view(), kappa).unwrap(), 2.5);
        }
        assert!(conformal_threshold(Array1::<f64>::zeros(0).view(), 0.1).is_err());
        assert!(conformal_threshold(s.view(), 0.0).is_err());
        assert!(conformal_threshold(array![1.0, f64::NAN].view(), 0.1).is_err());
    }

    proptest! {
        #[test]
        fn threshold_matches_sort_oracle(
            scores in prop::collection::vec(0.0f64..100.0, 1..60),
            kappa in 0.001f64..0.999,
        ) {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            let m = scores.len();
            let k = (((1.0 - kappa) * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
            let t = conformal_threshold(Array1::from(scores).view(), kappa).unwrap();
            prop_assert_eq!(t, sorted[k - 1]);
        }

        #[test]
        fn monotone_in_kappa(seed in 0u64..1000, k1 in 0.01f64..0.5, gap in 0.0f64..0.4) {
            let (ds, _) = synth(30, 10, 1.0, seed);
            let spec = GlmSpec::ridge(1.0);
            let base = amp_fit(&ds, &spec, &AmpOptions::default()).unwrap();
            let ts = taylor_fit(&base, &ds, &spec, &TaylorOptions::default()).unwrap();
            let grid = LabelGrid::new(ts.y_ref, 4.0, 50).unwrap();
            let s = taylor_scores(&base, &ts, &ds, &grid.points()).unwrap();
            for row in s.rows() {
                let tight = includes_last(row, k1 + gap).unwrap();
                let loose = includes_last(row, k1).unwrap();
                prop_assert!(!tight || loose);
            }
        }

        #[test]
        fn mask_lengths(mask in prop::collection::vec(any::<bool>(), 2..80)) {
            let grid = LabelGrid::new(0.0, 3.0, mask.len()).unwrap();
            let set = PredictionSet::from_mask(grid, mask.clone()).unwrap();
            let count = mask.iter().filter(|&&b| b).count() as f64;
            let runs = set.intervals.len() as f64;
            let h = grid.spacing();
            prop_assert!((count * h - set.length() - runs * h).abs() < 1e-9);
            for w in set.intervals.windows(2) {
                prop_assert!(w[0].1 < w[1].0);
            }
        }
    }

    #[test]
    fn grid_points() {
        let g = LabelGrid::new(1.0, 2.0, 5).unwrap();
        assert_eq!(g.points(), vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(LabelGrid::new(0.0, 0.0, 5).is_err());
        assert!(LabelGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn mask_to_intervals() {
        let g = LabelGrid::new(2.0, 2.0, 5).unwrap();
        let s = PredictionSet::from_mask(g, vec![true, true, false, true, false]).unwrap();
        assert_eq!(s.intervals, vec![(0.0, 1.0), (3.0, 3.0)]);
        assert!(s.touches_grid_boundary());
        assert!(s.contains(0.5) && !s.contains(2.0) && s.contains(3.0));
        let e = PredictionSet::from_mask(g, vec![false; 5]).unwrap();
        assert!(e.is_empty() && !e.touches_grid_boundary());
    }

    #[test]
    fn jaccard_examples() {
        let a = PredictionSet::interval(0.0, 2.0).unwrap();
        let b = PredictionSet::interval(1.0, 3.0).unwrap();
        assert_abs_diff_eq!(jaccard(&a, &b), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(jaccard(&a, &a), 1.0);
        let c = PredictionSet::interval(5.0, 6.0).unwrap();
        assert_eq!(jaccard(&a, &c), 0.0);
        assert_eq!(jaccard(&PredictionSet::empty(), &PredictionSet::empty()), 1.0);
        assert_eq!(jaccard(&a, &PredictionSet::empty()), 0.0);
        let g = LabelGrid::new(2.0, 2.0, 5).unwrap();
        let multi = PredictionSet::from_mask(g, vec![true, true, false, true, true]).unwrap();
        let whole = PredictionSet::interval(0.0, 4.0).unwrap();
        assert_abs_diff_eq!(jaccard(&multi, &whole), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_examples() {
        let whole = PredictionSet::interval(-10.0, 10.0).unwrap();
        let m = evaluate(&[whole.clone(), whole.clone()], &[0.0, 3.0]).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.mean_length, 20.0);
        assert_eq!(m.std_length, 0.0);
        let m = evaluate(&[PredictionSet::empty(), PredictionSet::empty()], &[0.0, 3.0]).unwrap();
        assert_eq!(m.coverage, 0.0);
        assert!(evaluate(&[whole], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn scp_constant_residuals() {
        // zero features force θ̂ = 0, so every calibration residual is |±c| = c
        let c = 0.7;
        let x = Array1::from_elem(40, 0.0).insert_axis(ndarray::Axis(1));
        let y: Array1<f64> = (0..40).map(|i| if i % 2 == 0 { c } else { -c }).collect();
        let ds = Dataset::new(x, y).unwrap();
        let model = ScpModel::fit(&ds, &GlmSpec::ridge(1.0), 0.1, &SplitSpec { train_fraction: 0.5, seed: 3 })
            .unwrap();
        let set = model.predict(array![2.0].view()).unwrap();
        assert_eq!(set.intervals, vec![(-c, c)]);
        assert_abs_diff_eq!(set.length(), 2.0 * c, epsilon = 1e-15);
    }

    #[test]
    fn scp_length_is_test_point_independent() {
        let (ds, _) = synth(100, 20, 1.0, 1);
        let model = ScpModel::fit(&ds, &GlmSpec::ridge(1.0), 0.1, &SplitSpec { train_fraction: 0.5, seed: 3 })
            .unwrap();
        let a = model.predict(ds.row(0)).unwrap();
        let b = model.predict(ds.row(1)).unwrap();
        assert_eq!(a.length(), b.length());
        assert_abs_diff_eq!(a.intervals[0].0 + a.intervals[0].1, 2.0 * model.theta.dot(&ds.row(0)), epsilon = 1e-12);
    }

    #[test]
    fn scp_rank_uses_n_plus_one() {
        // 10 calibration scores 1..10; ⌈0.9·11⌉ = 10 → largest score.
        let x = Array1::from_elem(20, 0.0).insert_axis(ndarray::Axis(1));
        let mut y = Array1::zeros(20);
        let spec = SplitSpec { train_fraction: 0.5, seed: 0 };
        let order = crate::data::shuffled_order(20, 0);
        for (k, &row) in order[10..].iter().enumerate() {
            y[row] = (k + 1) as f64;
        }
        let ds = Dataset::new(x, y).unwrap();
        let set = scp_predict(&ds, array![0.0].view(), &GlmSpec::ridge(1.0), 0.1, &spec).unwrap();
        assert_eq!(set.intervals, vec![(-10.0, 10.0)]);
        let set = scp_predict(&ds, array![0.0].view(), &GlmSpec::ridge(1.0), 0.3, &spec).unwrap();
        assert_eq!(set.intervals, vec![(-8.0, 8.0)]);
    }

    #[test]
    fn noiseless_recovery() {
        let (ds, teacher) = synth(201, 10, 0.0, 2);
        let train = ds.select_rows(&(0..200).collect::<Vec<_>>()).unwrap();
        let x = ds.row(200);
        let truth = teacher.dot(&x);
        for backend in [Backend::ExactLoo, Backend::Amp, Backend::TaylorAmp] {
            // odd point count puts the grid center θ̂ᵀx on the grid
            let mut cfg = ConformalConfig::new(0.1, backend);
            cfg.grid = GridChoice::Auto { num_points: 201 };
            let set = fcp_predict(&train, x, &GlmSpec::ridge(1e-6), &cfg).unwrap();
            assert_eq!(set.intervals.len(), 1, "{backend:?}");
            let (lo, hi) = set.intervals[0];
            assert!(lo - 1e-4 <= truth && truth <= hi + 1e-4, "{backend:?} {lo} {hi} {truth}");
            assert!(set.length() < 0.5, "{backend:?} {}", set.length());
        }
    }

    #[test]
    fn backends_agree_on_ridge() {
        let (ds, _) = synth(81, 40, 1.0, 3);
        let train = ds.select_rows(&(0..80).collect::<Vec<_>>()).unwrap();
        let x = ds.row(80);
        let spec = GlmSpec::ridge(1.0);
        let sets: Vec<PredictionSet> = [Backend::ExactLoo, Backend::Amp, Backend::TaylorAmp]
            .iter()
            .map(|&b| fcp_predict(&train, x, &spec, &ConformalConfig::new(0.1, b)).unwrap())
            .collect();
        assert!(!sets[0].touches_grid_boundary());
        // For Ridge, Taylor-AMP is exact in the label, so it matches AMP.
        assert!(jaccard(&sets[1], &sets[2]) > 0.99);
        assert!(jaccard(&sets[0], &sets[2]) > 0.8);
    }

    #[test]
    fn grid_refinement_is_stable() {
        let (ds, _) = synth(61, 30, 1.0, 4);
        let train = ds.select_rows(&(0..60).collect::<Vec<_>>()).unwrap();
        let x = ds.row(60);
        let spec = GlmSpec::lasso(0.3);
        let mut cfg = ConformalConfig::new(0.1, Backend::TaylorAmp);
        let coarse = fcp_predict(&train, x, &spec, &cfg).unwrap();
        let spacing = coarse.grid.unwrap().spacing();
        cfg.grid = GridChoice::Auto { num_points: 2 * DEFAULT_GRID_POINTS };
        let fine = fcp_predict(&train, x, &spec, &cfg).unwrap();
        assert!((coarse.length() - fine.length()).abs() <= 2.0 * spacing);
    }

    #[test]
    fn config_errors() {
        let (ds, _) = synth(20, 5, 1.0, 5);
        let x = ds.row(0);
        let spec = GlmSpec::ridge(1.0);
        assert!(fcp_predict(&ds, x, &spec, &ConformalConfig::new(0.1, Backend::Scp)).is_err());
        assert!(fcp_predict(&ds, x, &spec, &ConformalConfig::new(1.0, Backend::Amp)).is_err());
        assert!(fcp_predict(&ds, array![1.0].view(), &spec, &ConformalConfig::new(0.1, Backend::Amp)).is_err());
    }
}
