//! Datasets, the Gaussian teacher-student generator, CSV ingestion and
//! random train/test splits.
//!
//! All design matrices follow the convention `Var(x_{iμ}) ≈ 1/d`, which is
//! the scaling AMP is derived under. CSV data is brought to the same scale.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Design matrix `x` (n × d) and labels `y` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidData(format!("need n >= 1 and d >= 1, got {n}x{d}")));
        }
        if y.len() != n {
            return Err(Error::InvalidData(format!(
                "x has {n} rows but y has {} entries",
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("x contains non-finite entries".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("y contains non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Sampling ratio n / d.
    pub fn alpha(&self) -> f64 {
        self.n() as f64 / self.d() as f64
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    /// `𝒟⁺(y)`: this dataset with `(x_test, y_test)` appended as the last row.
    pub fn augmented(&self, x_test: ArrayView1<f64>, y_test: f64) -> Result<Self> {
        if x_test.len() != self.d() {
            return Err(Error::InvalidData(format!(
                "test point has {} features, dataset has {}",
                x_test.len(),
                self.d()
            )));
        }
        let mut x = self.x.clone();
        x.push_row(x_test).expect("row length checked");
        let mut y = self.y.to_vec();
        y.push(y_test);
        Self::new(x, Array1::from(y))
    }

    /// Same dataset with the last label replaced. Used for grid sweeps over `𝒟⁺(y)`.
    pub fn with_last_label(&self, y_last: f64) -> Self {
        let mut out = self.clone();
        let n = out.n();
        out.y[n - 1] = y_last;
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let x = self.x.select(Axis(0), rows);
        let y = self.y.select(Axis(0), rows);
        Self::new(x, y)
    }

    /// Drop the final row (the test row of an augmented dataset).
    pub fn without_last(&self) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n().saturating_sub(1)).collect();
        self.select_rows(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherPrior {
    /// Standard normal entries.
    Gaussian,
    /// Laplace entries with density ½e^{−|z|}.
    Laplace,
}

impl TeacherPrior {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            TeacherPrior::Gaussian => StandardNormal.sample(rng),
            TeacherPrior::Laplace => {
                let magnitude: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub teacher_prior: TeacherPrior,
    /// Label noise variance Δ.
    pub noise_variance: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidConfig(format!(
                "synthetic sizes must be positive, got n={} d={}",
                self.n, self.d
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be finite and >= 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Gaussian teacher-student data: `x_i ~ N(0, I/d)`, `θ⋆_μ ~ prior`,
/// `y_i = θ⋆ᵀx_i + ε_i` with `ε_i ~ N(0, Δ)`. Returns the dataset and θ⋆.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, Array1<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teacher = Array1::from_shape_fn(cfg.d, |_| cfg.teacher_prior.sample(&mut rng));
    let (x, y) = sample_teacher_rows(&teacher, cfg.n, cfg.noise_variance, &mut rng);
    Ok((Dataset::new(x, y)?, teacher))
}

/// Draw `n` fresh rows `(x, y)` from the teacher model.
pub fn sample_teacher_rows<R: Rng + ?Sized>(
    teacher: &Array1<f64>,
    n: usize,
    noise_variance: f64,
    rng: &mut R,
) -> (Array2<f64>, Array1<f64>) {
    let d = teacher.len();
    let feature = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
    let x = Array2::from_shape_fn((n, d), |_| feature.sample(rng));
    let noise_std = noise_variance.sqrt();
    let y = x.dot(teacher).mapv(|z| {
        let eps: f64 = StandardNormal.sample(rng);
        z + noise_std * eps
    });
    (x, y)
}

/// Read a CSV file, standardize and scale it to the `1/d` variance convention.
///
/// Features are z-scored per column with the population (1/n) variance and
/// then multiplied by `1/√d`; constant columns become zero. The target is
/// z-scored. Parse errors report the 1-based file line (header is line 1).
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::InvalidData("csv has no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 2;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                msg: format!("cannot parse {cell:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    msg: "non-finite value".into(),
                });
            }
            if j == target {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("csv has no data rows"));
    }
    let mut x = Array2::from_shape_vec((n, d), features).expect("row lengths checked");
    let mut y = Array1::from(labels);

    let scale = 1.0 / (d as f64).sqrt();
    for mut col in x.columns_mut() {
        let mut values = col.to_vec();
        standardize_slice(&mut values);
        for (dst, v) in col.iter_mut().zip(values) {
            *dst = v * scale;
        }
    }
    standardize_slice(y.as_slice_mut().expect("owned contiguous"));
    Dataset::new(x, y)
}

/// z-score in place with population variance; constant input becomes zeros.
pub(crate) fn standardize_slice(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let constant = std <= 1e-12 * (1.0 + mean.abs());
    for v in values.iter_mut() {
        *v = if constant { 0.0 } else { (*v - mean) / std };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// The seeded row order used by [`split`]. It does not depend on the train fraction.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Random partition: train is the first `round(fraction · n)` rows of the
/// shuffled order (clamped so both parts are nonempty), test is the rest.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidData(format!("cannot split a dataset with {n} row(s)")));
    }
    let order = shuffled_order(n, spec.seed);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let train = ds.select_rows(&order[..n_train])?;
    let test = ds.select_rows(&order[n_train..])?;
    Ok((train, test))
}
