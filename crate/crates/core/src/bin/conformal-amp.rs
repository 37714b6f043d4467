//! `conformal-amp`: run an experiment and write `report.json` / `report.csv`.
//!
//! Exit codes: 0 on success, 1 when the experiment fails, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conformal_amp::conformal::Backend;
use conformal_amp::data::TeacherPrior;
use conformal_amp::experiment::{emit_report, run_experiment, ExperimentConfig, ExperimentKind, Report, ReportFormat};
use conformal_amp::glm::Regularizer;
use conformal_amp::Error;
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "conformal-amp", version, about = "Full conformal prediction benchmarks for Ridge and Lasso")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interval length and coverage per backend
    Length(Opts),
    /// Jaccard index of each backend against exact leave-one-out sets
    Jaccard(Opts),
    /// Conformal interval length next to the Bayes-optimal interval
    BayesCompare(Opts),
    /// Wall time per prediction set over a dimension sweep
    Timing(Opts),
    /// Coverage and length on random splits of a CSV dataset
    RealData(Opts),
    /// Empirical coverage over many trials
    Coverage(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    All,
}

#[derive(Args)]
struct Opts {
    /// JSON config; keys mirror the report's `config` object
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: results]
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    regularizer: Option<RegularizerArg>,
    /// Training samples (synthetic data)
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimension (synthetic data)
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Comma-separated: exact_loo, amp, taylor_amp, scp
    #[arg(long, value_delimiter = ',', value_parser = parse_backend)]
    backends: Option<Vec<Backend>>,
    /// Comma-separated dimensions for timing
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    timing_repetitions: Option<usize>,
    /// CSV dataset (real-data); requires --target
    #[arg(long, requires = "target")]
    csv: Option<PathBuf>,
    /// Target column of the CSV dataset
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    scp_train_fraction: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    amp_max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegularizerArg {
    Ridge,
    Lasso,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Gaussian,
    Laplace,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    serde_json::from_value(Value::String(s.to_owned()))
        .map_err(|_| format!("unknown backend {s:?}; expected exact_loo, amp, taylor_amp or scp"))
}

enum Failure {
    Usage(String),
    Run(String),
}

impl Opts {
    /// Flag overrides as a JSON patch over the config.
    fn patch(&self) -> Value {
        let mut p = Map::new();
        let mut set = |path: &[&str], v: Value| {
            let mut obj = &mut p;
            for key in &path[..path.len() - 1] {
                obj = obj
                    .entry(*key)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("patch keys are objects");
            }
            obj.insert(path[path.len() - 1].to_owned(), v);
        };
        if let Some(v) = &self.output {
            set(&["output"], to(v));
        }
        if let Some(v) = self.seed {
            set(&["seed"], json!(v));
        }
        if let Some(v) = self.trials {
            set(&["trials"], json!(v));
        }
        if let Some(v) = self.test_samples {
            set(&["test_samples"], json!(v));
        }
        if let Some(v) = self.kappa {
            set(&["kappa"], json!(v));
        }
        if let Some(v) = self.lambda {
            set(&["glm", "lambda"], json!(v));
        }
        if let Some(v) = self.regularizer {
            let r = match v {
                RegularizerArg::Ridge => Regularizer::Ridge,
                RegularizerArg::Lasso => Regularizer::Lasso,
            };
            set(&["glm", "regularizer"], to(&r));
        }
        if let Some(v) = self.n {
            set(&["data", "synthetic", "n"], json!(v));
        }
        if let Some(v) = self.d {
            set(&["data", "synthetic", "d"], json!(v));
        }
        if let Some(v) = self.noise_variance {
            set(&["data", "synthetic", "noise_variance"], json!(v));
        }
        if let Some(v) = self.prior {
            let p = match v {
                PriorArg::Gaussian => TeacherPrior::Gaussian,
                PriorArg::Laplace => TeacherPrior::Laplace,
            };
            set(&["data", "synthetic", "teacher_prior"], to(&p));
        }
        if let Some(v) = self.grid_points {
            set(&["grid_points"], json!(v));
        }
        if let Some(v) = &self.backends {
            set(&["backends"], to(v));
        }
        if let Some(v) = &self.dims {
            set(&["dims"], json!(v));
        }
        if let Some(v) = self.alpha {
            set(&["alpha"], json!(v));
        }
        if let Some(v) = self.timing_repetitions {
            set(&["timing_repetitions"], json!(v));
        }
        if let Some(v) = &self.csv {
            set(&["data", "csv", "path"], to(v));
        }
        if let Some(v) = &self.target {
            set(&["data", "csv", "target_column"], json!(v));
        }
        if let Some(v) = self.train_fraction {
            set(&["train_fraction"], json!(v));
        }
        if let Some(v) = self.scp_train_fraction {
            set(&["scp_train_fraction"], json!(v));
        }
        if let Some(v) = self.damping {
            set(&["amp", "damping"], json!(v));
        }
        if let Some(v) = self.amp_max_iter {
            set(&["amp", "max_iter"], json!(v));
        }
        Value::Object(p)
    }

    fn config(&self, kind: ExperimentKind) -> Result<ExperimentConfig, Failure> {
        let usage = |e: &dyn std::fmt::Display| Failure::Usage(e.to_string());
        let mut overrides = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => json!({}),
        };
        if !overrides.is_object() {
            return Err(Failure::Usage("config file must hold a JSON object".into()));
        }
        conformal_amp::experiment::merge_json(&mut overrides, self.patch());
        let cfg = ExperimentConfig::from_json_overrides(kind, overrides).map_err(|e| usage(&e))?;
        cfg.validate().map_err(|e| usage(&e))?;
        Ok(cfg)
    }
}

fn to<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain values serialize")
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CONFORMAL_AMP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Usage(format!("CONFORMAL_AMP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Run(e.to_string()))
}

fn print_summary(report: &Report) {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{:<22} {:>9} {:>11} {:>10} {:>12} {:>12} {:>8}",
        "method", "coverage", "mean_length", "std_length", "mean_jaccard", "seconds", "failed"
    );
    for m in &report.methods {
        let name = match m.dimension {
            Some(d) => format!("{}@d={d}", m.method),
            None => m.method.clone(),
        };
        println!(
            "{:<22} {:>9} {:>11} {:>10} {:>12} {:>12} {:>8}",
            name,
            cell(m.coverage),
            cell(m.mean_length),
            cell(m.std_length),
            cell(m.mean_jaccard),
            cell(m.wall_time_seconds),
            format!("{}/{}", m.failures, m.failures + m.samples),
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (kind, opts) = match &cli.command {
        Command::Length(o) => (ExperimentKind::Length, o),
        Command::Jaccard(o) => (ExperimentKind::Jaccard, o),
        Command::BayesCompare(o) => (ExperimentKind::BayesCompare, o),
        Command::Timing(o) => (ExperimentKind::Timing, o),
        Command::RealData(o) => (ExperimentKind::RealData, o),
        Command::Coverage(o) => (ExperimentKind::Coverage, o),
    };
    configure_threads()?;
    let cfg = opts.config(kind)?;
    let report = run_experiment(&cfg).map_err(|e| match e {
        Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
        other => Failure::Run(other.to_string()),
    })?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("results"));
    let formats: &[ReportFormat] = match opts.format {
        Format::Json => &[ReportFormat::Json],
        Format::Csv => &[ReportFormat::Csv],
        Format::All => &[ReportFormat::Json, ReportFormat::Csv],
    };
    print_summary(&report);
    for &f in formats {
        let path = emit_report(&report, f, &dir).map_err(|e| Failure::Run(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
