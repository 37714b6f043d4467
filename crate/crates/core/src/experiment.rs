//! End-to-end experiments: configuration, execution, and reports.
//!
//! Every synthetic trial draws a fresh teacher, `n` training rows and
//! `test_samples` test rows from a seed derived from the config seed, so a
//! rerun with the same config reproduces every non-timing metric exactly.
//! Trials run on the rayon pool; timing runs stay on the calling thread.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::AmpOptions;
use crate::bayes::{bayes_interval_gaussian, bayes_interval_laplace, BayesConfig};
use crate::conformal::{
    evaluate, fcp_predict, jaccard, Backend, ConformalConfig, GridChoice, PredictionSet, ScpModel,
};
use crate::data::{generate_synthetic, load_csv, split, Dataset, SplitSpec, SyntheticConfig, TeacherPrior};
use crate::error::{Error, Result};
use crate::glm::GlmSpec;

/// Fixed CSV column order of [`emit_report`].
pub const CSV_HEADER: [&str; 6] =
    ["method", "coverage", "mean_length", "std_length", "mean_jaccard", "wall_time_seconds"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Interval length and coverage per backend.
    Length,
    /// Overlap of each backend's sets with the exact-LOO sets.
    Jaccard,
    /// Conformal lengths next to the Bayes-optimal predictive interval.
    BayesCompare,
    /// Wall time of one prediction set across a dimension sweep.
    Timing,
    /// Coverage and length on random splits of a CSV dataset.
    RealData,
    /// Empirical coverage with many trials.
    Coverage,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Length => "length",
            ExperimentKind::Jaccard => "jaccard",
            ExperimentKind::BayesCompare => "bayes_compare",
            ExperimentKind::Timing => "timing",
            ExperimentKind::RealData => "real_data",
            ExperimentKind::Coverage => "coverage",
        }
    }
}

/// Teacher-student data; the per-trial seed comes from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub n: usize,
    pub d: usize,
    pub teacher_prior: TeacherPrior,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv { path: PathBuf, target_column: String },
}

/// The serializable subset of [`AmpOptions`]. `max_iter` also caps the
/// Taylor-AMP derivative iteration, which converges at a similar rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for AmpSettings {
    /// Small-λ Lasso fits with nearly `n` active coordinates can need a few
    /// thousand iterations, so the cap is higher than the library default.
    fn default() -> Self {
        let o = AmpOptions::default();
        Self { tol: o.tol, max_iter: 5000, damping: o.damping }
    }
}

impl AmpSettings {
    pub fn options(&self) -> AmpOptions {
        AmpOptions { tol: self.tol, max_iter: self.max_iter, damping: self.damping, ..AmpOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub glm: GlmSpec,
    pub data: DataSource,
    pub kappa: f64,
    pub trials: usize,
    /// Test points per trial. For real data, a cap on the evaluated test rows.
    pub test_samples: usize,
    pub seed: u64,
    /// Output directory for `report.json` and `report.csv`.
    pub output: Option<PathBuf>,
    pub backends: Vec<Backend>,
    pub grid_points: usize,
    /// Train share of each real-data split.
    pub train_fraction: f64,
    /// Fit share of the training data inside split conformal prediction.
    pub scp_train_fraction: f64,
    /// Timing sweep dimensions, with `n = round(alpha·d)`.
    pub dims: Vec<usize>,
    pub alpha: f64,
    pub timing_repetitions: usize,
    pub amp: AmpSettings,
}

impl ExperimentConfig {
    /// Defaults for each experiment, sized after the published settings.
    pub fn preset(kind: ExperimentKind) -> Self {
        let synth = |n, d| {
            DataSource::Synthetic(SyntheticSource { n, d, teacher_prior: TeacherPrior::Gaussian, noise_variance: 1.0 })
        };
        let mut cfg = Self {
            experiment: kind,
            glm: GlmSpec::ridge(1.0),
            data: synth(100, 50),
            kappa: 0.1,
            trials: 200,
            test_samples: 1,
            seed: 0,
            output: None,
            backends: vec![Backend::TaylorAmp, Backend::ExactLoo, Backend::Scp],
            grid_points: 200,
            train_fraction: 0.8,
            scp_train_fraction: 0.5,
            dims: vec![250, 1000],
            alpha: 0.5,
            timing_repetitions: 5,
            amp: AmpSettings::default(),
        };
        match kind {
            ExperimentKind::Length => {}
            ExperimentKind::Coverage => {
                cfg.trials = 1000;
                cfg.backends = vec![Backend::TaylorAmp];
            }
            ExperimentKind::Jaccard => {
                cfg.data = synth(200, 100);
                cfg.trials = 1;
                cfg.test_samples = 20;
                cfg.backends = vec![Backend::ExactLoo, Backend::TaylorAmp, Backend::Scp];
            }
            ExperimentKind::BayesCompare => {
                cfg.data = synth(125, 250);
                cfg.backends = vec![Backend::TaylorAmp];
            }
            ExperimentKind::Timing => {
                cfg.glm = GlmSpec::lasso(1.0);
                cfg.trials = 1;
                cfg.grid_points = 100;
                cfg.backends = vec![Backend::ExactLoo, Backend::TaylorAmp];
            }
            ExperimentKind::RealData => {
                cfg.glm = GlmSpec::lasso(1.0);
                cfg.data = DataSource::Csv { path: PathBuf::from("data.csv"), target_column: "target".into() };
                cfg.trials = 10;
                cfg.test_samples = 1000;
                cfg.backends = vec![Backend::TaylorAmp, Backend::Scp];
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.glm.validate()?;
        self.amp.options().validate()?;
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if self.trials == 0 || self.test_samples == 0 {
            return bad("trials and test_samples must be >= 1".into());
        }
        if self.grid_points < 2 {
            return bad("grid_points must be >= 2".into());
        }
        if self.backends.is_empty() {
            return bad("at least one backend is required".into());
        }
        for (i, b) in self.backends.iter().enumerate() {
            if self.backends[..i].contains(b) {
                return bad(format!("backend {} listed twice", b.name()));
            }
        }
        for (name, f) in [("train_fraction", self.train_fraction), ("scp_train_fraction", self.scp_train_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        match (&self.data, self.experiment) {
            (DataSource::Csv { path, .. }, ExperimentKind::RealData) => {
                if !path.is_file() {
                    return bad(format!("data file {} does not exist", path.display()));
                }
            }
            (DataSource::Csv { .. }, kind) => {
                return bad(format!("experiment {} needs synthetic data", kind.name()));
            }
            (DataSource::Synthetic(_), ExperimentKind::RealData) => {
                return bad("experiment real_data needs a csv data source".into());
            }
            (DataSource::Synthetic(s), kind) => {
                if kind != ExperimentKind::Timing && (s.n == 0 || s.d == 0) {
                    return bad(format!("synthetic sizes must be positive, got n={} d={}", s.n, s.d));
                }
                let positive = kind == ExperimentKind::BayesCompare;
                if !(s.noise_variance.is_finite() && (s.noise_variance > 0.0 || !positive && s.noise_variance == 0.0)) {
                    return bad(format!("invalid noise_variance {}", s.noise_variance));
                }
            }
        }
        match self.experiment {
            ExperimentKind::Jaccard if !self.backends.contains(&Backend::ExactLoo) => {
                bad("the jaccard experiment needs the exact_loo backend as reference".into())
            }
            ExperimentKind::Timing => {
                if self.dims.is_empty() || self.dims.contains(&0) {
                    return bad("timing needs a nonempty list of positive dims".into());
                }
                if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                    return bad(format!("alpha must be > 0, got {}", self.alpha));
                }
                if self.timing_repetitions == 0 {
                    return bad("timing_repetitions must be >= 1".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn conformal(&self, backend: Backend) -> ConformalConfig {
        let mut c = ConformalConfig::new(self.kappa, backend);
        c.grid = GridChoice::Auto { num_points: self.grid_points };
        c.amp = self.amp.options();
        c.taylor.max_iter = self.amp.max_iter;
        c
    }

    fn synthetic(&self) -> SyntheticSource {
        match &self.data {
            DataSource::Synthetic(s) => *s,
            DataSource::Csv { .. } => unreachable!("validated as synthetic"),
        }
    }
}

/// Metrics of one method. Fields are `None` when they do not apply or no
/// prediction succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    /// Feature dimension, for timing rows.
    pub dimension: Option<usize>,
    pub coverage: Option<f64>,
    pub mean_length: Option<f64>,
    pub std_length: Option<f64>,
    /// Mean Jaccard index against the exact-LOO set of the same test point.
    pub mean_jaccard: Option<f64>,
    /// Mean seconds per prediction set (median over repetitions for timing).
    pub wall_time_seconds: Option<f64>,
    /// Successful predictions.
    pub samples: usize,
    /// Predictions that raised a solver error.
    pub failures: usize,
    pub empty_sets: usize,
    /// Sets reaching the end of the label grid, so possibly truncated.
    pub boundary_hits: usize,
}

impl MethodMetrics {
    fn named(method: &str) -> Self {
        Self {
            method: method.to_owned(),
            dimension: None,
            coverage: None,
            mean_length: None,
            std_length: None,
            mean_jaccard: None,
            wall_time_seconds: None,
            samples: 0,
            failures: 0,
            empty_sets: 0,
            boundary_hits: 0,
        }
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.samples + self.failures;
        if total == 0 {
            0.0
        } else {
            self.failures as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub notes: Vec<String>,
    pub methods: Vec<MethodMetrics>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// One prediction that succeeded.
struct Record {
    set: PredictionSet,
    y: f64,
    seconds: f64,
    jaccard: Option<f64>,
}

#[derive(Default)]
struct Tally {
    records: Vec<Record>,
    failures: usize,
}

impl Tally {
    fn metrics(self, name: &str) -> Result<MethodMetrics> {
        let mut m = MethodMetrics::named(name);
        m.failures = self.failures;
        m.samples = self.records.len();
        if self.records.is_empty() {
            return Ok(m);
        }
        m.empty_sets = self.records.iter().filter(|r| r.set.is_empty()).count();
        m.boundary_hits = self.records.iter().filter(|r| r.set.touches_grid_boundary()).count();
        let jac: Vec<f64> = self.records.iter().filter_map(|r| r.jaccard).collect();
        if !jac.is_empty() {
            m.mean_jaccard = Some(jac.iter().sum::<f64>() / jac.len() as f64);
        }
        m.wall_time_seconds = Some(self.records.iter().map(|r| r.seconds).sum::<f64>() / m.samples as f64);
        let ys: Vec<f64> = self.records.iter().map(|r| r.y).collect();
        let sets: Vec<PredictionSet> = self.records.into_iter().map(|r| r.set).collect();
        let e = evaluate(&sets, &ys)?;
        m.coverage = Some(e.coverage);
        m.mean_length = Some(e.mean_length);
        m.std_length = Some(e.std_length);
        Ok(m)
    }
}

/// Run the configured experiment. Solver errors on individual predictions
/// are counted as failures; the run errors only on an invalid config or
/// when no prediction of any method succeeded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let methods = match cfg.experiment {
        ExperimentKind::Length | ExperimentKind::Coverage | ExperimentKind::Jaccard => run_synthetic_conformal(cfg)?,
        ExperimentKind::BayesCompare => run_bayes_compare(cfg)?,
        ExperimentKind::Timing => run_timing(cfg)?,
        ExperimentKind::RealData => {
            notes.push("features and target are standardized before splitting".into());
            run_real_data(cfg)?
        }
    };
    if methods.iter().all(|m| m.samples == 0) {
        let failures: usize = methods.iter().map(|m| m.failures).sum();
        return Err(Error::ExperimentFailed(format!(
            "{}: all {failures} predictions failed",
            cfg.experiment.name()
        )));
    }
    Ok(Report {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        config: cfg.clone(),
        notes,
        methods,
    })
}

fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| rng.random()).collect()
}

/// Training rows then test rows of one synthetic trial.
fn synthetic_trial(src: &SyntheticSource, test_samples: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (all, _) = generate_synthetic(&SyntheticConfig {
        n: src.n + test_samples,
        d: src.d,
        teacher_prior: src.teacher_prior,
        noise_variance: src.noise_variance,
        seed,
    })?;
    let train: Vec<usize> = (0..src.n).collect();
    let test: Vec<usize> = (src.n..all.n()).collect();
    Ok((all.select_rows(&train)?, all.select_rows(&test)?))
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Per-backend outcomes on every test row, Jaccard against exact LOO filled in.
fn conformal_trial(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    split_seed: u64,
) -> Vec<Vec<Option<Record>>> {
    let scp = cfg.backends.contains(&Backend::Scp).then(|| {
        let spec = SplitSpec { train_fraction: cfg.scp_train_fraction, seed: split_seed };
        timed(|| ScpModel::fit(train, &cfg.glm, cfg.kappa, &spec))
    });
    let mut out: Vec<Vec<Option<Record>>> = cfg
        .backends
        .iter()
        .map(|&backend| {
            (0..test.n())
                .map(|t| {
                    let x = test.row(t);
                    let (set, seconds) = match (backend, &scp) {
                        (Backend::Scp, Some((Ok(model), fit_secs))) => {
                            let (s, secs) = timed(|| model.predict(x));
                            (s, secs + fit_secs)
                        }
                        (Backend::Scp, _) => return None,
                        _ => timed(|| fcp_predict(train, x, &cfg.glm, &cfg.conformal(backend))),
                    };
                    set.ok().map(|set| Record { set, y: test.y()[t], seconds, jaccard: None })
                })
                .collect()
        })
        .collect();
    if let Some(r) = cfg.backends.iter().position(|&b| b == Backend::ExactLoo) {
        let reference: Vec<Option<PredictionSet>> =
            out[r].iter().map(|o| o.as_ref().map(|rec| rec.set.clone())).collect();
        for (k, row) in out.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            for (rec, refset) in row.iter_mut().zip(&reference) {
                if let (Some(rec), Some(refset)) = (rec, refset) {
                    rec.jaccard = Some(jaccard(refset, &rec.set));
                }
            }
        }
    }
    out
}

fn collect(names: &[&str], trials: Vec<Vec<Vec<Option<Record>>>>) -> Result<Vec<MethodMetrics>> {
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();
    for trial in trials {
        for (tally, outcomes) in tallies.iter_mut().zip(trial) {
            for o in outcomes {
                match o {
                    Some(rec) => tally.records.push(rec),
                    None => tally.failures += 1,
                }
            }
        }
    }
    tallies.into_iter().zip(names).map(|(t, name)| t.metrics(name)).collect()
}

fn run_synthetic_conformal(cfg: &ExperimentConfig) -> Result<Vec<MethodMetrics>> {
    let src = cfg.synthetic();
    let trials = trial_seeds(cfg.seed, cfg.trials)
        .into_par_iter()
        .map(|seed| {
            let (train, test) = synthetic_trial(&src, cfg.test_samples, seed)?;
            Ok(conformal_trial(cfg, &train, &test, seed))
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = cfg.backends.iter().map(|b| b.name()).collect();
    collect(&names, trials)
}

fn run_real_data(cfg: &ExperimentConfig) -> Result<Vec<MethodMetrics>> {
    let DataSource::Csv { path, target_column } = &cfg.data else {
        unreachable!("validated as csv")
    };
    let ds = load_csv(path, target_column)?;
    let trials = trial_seeds(cfg.seed, cfg.trials)
        .into_par_iter()
        .map(|seed| {
            let (train, test) = split(&ds, &SplitSpec { train_fraction: cfg.train_fraction, seed })?;
            let rows: Vec<usize> = (0..test.n().min(cfg.test_samples)).collect();
            let test = test.select_rows(&rows)?;
            Ok(conformal_trial(cfg, &train, &test, seed.wrapping_add(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = cfg.backends.iter().map(|b| b.name()).collect();
    collect(&names, trials)
}

/// Bayes-optimal interval for the teacher prior: closed form for a
/// Gaussian prior, MMSE AMP for a Laplace prior.
fn bayes_set(cfg: &ExperimentConfig, train: &Dataset, x: ArrayView1<f64>) -> Result<PredictionSet> {
    let src = cfg.synthetic();
    let bc = BayesConfig { prior: src.teacher_prior, noise_variance: src.noise_variance, kappa: cfg.kappa };
    let iv = match src.teacher_prior {
        TeacherPrior::Gaussian => bayes_interval_gaussian(train, x, &bc)?,
        TeacherPrior::Laplace => bayes_interval_laplace(train, x, &bc, &cfg.amp.options())?,
    };
    PredictionSet::interval(iv.lo, iv.hi)
}

fn run_bayes_compare(cfg: &ExperimentConfig) -> Result<Vec<MethodMetrics>> {
    let src = cfg.synthetic();
    let trials = trial_seeds(cfg.seed, cfg.trials)
        .into_par_iter()
        .map(|seed| {
            let (train, test) = synthetic_trial(&src, cfg.test_samples, seed)?;
            let mut out = conformal_trial(cfg, &train, &test, seed);
            out.push(
                (0..test.n())
                    .map(|t| {
                        let (set, seconds) = timed(|| bayes_set(cfg, &train, test.row(t)));
                        set.ok().map(|set| Record { set, y: test.y()[t], seconds, jaccard: None })
                    })
                    .collect(),
            );
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = cfg.backends.iter().map(|b| b.name()).collect();
    names.push("bayes");
    collect(&names, trials)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One prediction set per repetition on a single thread; the reported time
/// is the median. Coverage and length describe the first repetition.
fn run_timing(cfg: &ExperimentConfig) -> Result<Vec<MethodMetrics>> {
    let src = cfg.synthetic();
    let mut rows = Vec::new();
    for (k, &d) in cfg.dims.iter().enumerate() {
        let n = ((cfg.alpha * d as f64).round() as usize).max(1);
        let seed = trial_seeds(cfg.seed.wrapping_add(k as u64), 1)[0];
        let (train, test) = synthetic_trial(&SyntheticSource { n, d, ..src }, 1, seed)?;
        let x = test.row(0);
        for &backend in &cfg.backends {
            let mut times = Vec::with_capacity(cfg.timing_repetitions);
            let mut tally = Tally::default();
            for rep in 0..cfg.timing_repetitions {
                let (set, secs) = match backend {
                    Backend::Scp => timed(|| {
                        let spec = SplitSpec { train_fraction: cfg.scp_train_fraction, seed };
                        ScpModel::fit(&train, &cfg.glm, cfg.kappa, &spec)?.predict(x)
                    }),
                    _ => timed(|| fcp_predict(&train, x, &cfg.glm, &cfg.conformal(backend))),
                };
                match set {
                    Ok(set) => {
                        times.push(secs);
                        if rep == 0 {
                            tally.records.push(Record { set, y: test.y()[0], seconds: secs, jaccard: None });
                        }
                    }
                    Err(_) => tally.failures += 1,
                }
            }
            let mut m = tally.metrics(backend.name())?;
            m.dimension = Some(d);
            m.samples = times.len();
            m.wall_time_seconds = (!times.is_empty()).then(|| median(times));
            rows.push(m);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}; expected json or csv"))),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Write `report.json` or `report.csv` into `dir` and return the file path.
/// Missing CSV metrics are empty cells; timing rows carry the dimension in
/// the method name (`exact_loo@d=1000`).
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(report)?;
            std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
            Ok(path)
        }
        ReportFormat::Csv => {
            let path = dir.join("report.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(CSV_HEADER)?;
            let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            for m in &report.methods {
                let method = match m.dimension {
                    Some(d) => format!("{}@d={d}", m.method),
                    None => m.method.clone(),
                };
                w.write_record([
                    method,
                    cell(m.coverage),
                    cell(m.mean_length),
                    cell(m.std_length),
                    cell(m.mean_jaccard),
                    cell(m.wall_time_seconds),
                ])?;
            }
            w.flush().map_err(io_err(&path))?;
            Ok(path)
        }
    }
}

/// Overlay `patch` onto `base`: objects merge key by key, anything else is
/// replaced. A single-key object whose key differs from the base's single
/// key replaces it, so an enum variant such as `{"csv": ...}` can swap out
/// `{"synthetic": ...}`.
pub fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let variant_swap = b.len() == 1 && p.len() == 1 && b.keys().next() != p.keys().next();
            if variant_swap {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

impl ExperimentConfig {
    /// The preset for `kind` with the JSON object `overrides` merged on top.
    pub fn from_json_overrides(kind: ExperimentKind, overrides: serde_json::Value) -> Result<Self> {
        if let Some(named) = overrides.get("experiment") {
            if named != &serde_json::to_value(kind)? {
                return Err(Error::InvalidConfig(format!(
                    "config names experiment {named}, but {} was requested",
                    kind.name()
                )));
            }
        }
        let mut value = serde_json::to_value(Self::preset(kind))?;
        merge_json(&mut value, overrides);
        Ok(serde_json::from_value(value)?)
    }
}
