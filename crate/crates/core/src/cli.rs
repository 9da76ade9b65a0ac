//! `relkin` command-line front end.
//!
//! Configuration is layered: built-in defaults, then the `--config` file,
//! then trailing `key=value` overrides, then dedicated flags (`--seed`,
//! `--trials`, `--k-sweep`, `--method`).
//!
//! Config files are flat `key = value` lines; `#` starts a comment.
//! Trajectory coefficients are given entry-wise as `Y<l>.<row>.<col>`; when
//! none are given the built-in ten-node scenario is used.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimate::{KinematicEstimate, Method};
use crate::harness::{align_to_truth, run_monte_carlo, time_sweep_csv};
use crate::io::{diagnostics_text, estimate_to_csv, read_bundle, write_bundle};
use crate::linalg::Matrix;
use crate::sim::{simulate_measurements, PolynomialTrajectory, SimConfig};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RELKIN_OUTPUT_DIR";

pub const DEFAULT_K_SWEEP: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Parser)]
#[command(
    name = "relkin",
    version,
    about = "Anchorless relative kinematics from pairwise distances and accelerometers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a measurement bundle from a configuration.
    Simulate(SimulateArgs),
    /// Estimate relative kinematics from a measurement bundle.
    Estimate(EstimateArgs),
    /// Run the Monte-Carlo benchmark and write RMSE tables.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct OutputArg {
    /// Output directory (created if missing).
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArg,
    /// Configuration overrides, e.g. sigma_d=0.02.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Measurement bundle directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Estimator to run.
    #[arg(long, value_parser = parse_method, default_value = "distance")]
    pub method: Method,
    /// Spatial dimension of the estimate.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sample parameters K (K + 1 samples each).
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Option<Vec<usize>>,
    /// Monte-Carlo trials per K.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Estimators to benchmark (comma-separated); both by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Option<Vec<Method>>,
    #[command(flatten)]
    pub output: OutputArg,
    /// Configuration overrides, e.g. sigma_d=0.02.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub k_sweep: Vec<usize>,
    pub methods: Vec<Method>,
    /// `(l, row, col) -> value` trajectory entries; empty means the built-in
    /// scenario.
    pub coefficients: BTreeMap<(usize, usize, usize), f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            k_sweep: DEFAULT_K_SWEEP.to_vec(),
            methods: Method::ALL.to_vec(),
            coefficients: BTreeMap::new(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_coeff_key(key: &str) -> Option<(usize, usize, usize)> {
    let rest = key.strip_prefix('Y')?;
    let mut parts = rest.split('.');
    let l = parts.next()?.parse().ok()?;
    let r = parts.next()?.parse().ok()?;
    let c = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((l, r, c))
}

impl RunConfig {
    /// Applies one `key = value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let s = &mut self.sim;
        match key {
            "nodes" => s.nodes = parse_value(key, value)?,
            "dim" => s.dim = parse_value(key, value)?,
            "k" => s.k = parse_value(key, value)?,
            "t_start" => s.t_start = parse_value(key, value)?,
            "t_end" => s.t_end = parse_value(key, value)?,
            "sigma_d" => s.sigma_d = parse_value(key, value)?,
            "sigma_a" => s.sigma_a = parse_value(key, value)?,
            "seed" => s.seed = parse_value(key, value)?,
            "accel_rotation_angle" => s.accel_rotation_angle = parse_value(key, value)?,
            "n_trials" => s.n_trials = parse_value(key, value)?,
            "k_sweep" => self.k_sweep = parse_list(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            _ => match parse_coeff_key(key) {
                Some(idx) => {
                    self.coefficients.insert(idx, parse_value(key, value)?);
                }
                None => return Err(Error::Config(format!("unknown key {key:?}"))),
            },
        }
        Ok(())
    }

    /// Applies every line of a config file.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: origin.to_string(),
                msg: format!("line {}: expected key = value", no + 1),
            })?;
            self.set(key, value).map_err(|e| Error::Parse {
                file: origin.to_string(),
                msg: format!("line {}: {e}", no + 1),
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` override arguments.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, then the file, then the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::Parse {
                file: p.display().to_string(),
                msg: e.to_string(),
            })?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// Ground-truth trajectory described by the config.
    pub fn trajectory(&self) -> Result<PolynomialTrajectory> {
        let (d, n) = (self.sim.dim, self.sim.nodes);
        if self.coefficients.is_empty() {
            let scenario = PolynomialTrajectory::benchmark_scenario();
            if (scenario.dim(), scenario.nodes()) != (d, n) {
                return Err(Error::Config(format!(
                    "no trajectory coefficients given and the built-in scenario is {}x{}, not {d}x{n}",
                    scenario.dim(),
                    scenario.nodes()
                )));
            }
            return Ok(scenario);
        }
        let order = self.coefficients.keys().map(|k| k.0).max().unwrap_or(0);
        let mut coeffs = vec![Matrix::zeros(d, n); order + 1];
        for (&(l, r, c), &v) in &self.coefficients {
            if r >= d || c >= n {
                return Err(Error::Config(format!(
                    "Y{l}.{r}.{c} is outside a {d}x{n} coefficient matrix"
                )));
            }
            coeffs[l][(r, c)] = v;
        }
        PolynomialTrajectory::new(coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.k_sweep.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("k_sweep and methods must be nonempty".into()));
        }
        Ok(())
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(Error::at(name))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = stage(
        "config",
        RunConfig::load(args.config.as_deref(), &args.overrides),
    )?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    stage("config", cfg.validate())?;
    let traj = stage("config", cfg.trajectory())?;
    let meas = stage("simulate", simulate_measurements(&cfg.sim, &traj))?;
    stage("write output", write_bundle(&args.output.output, &meas))
}

/// Diagnostics plus, when the bundle carries its truth, aligned errors.
fn estimate_diagnostics(
    est: &KinematicEstimate,
    truth: Option<&PolynomialTrajectory>,
) -> Result<String> {
    let mut out = diagnostics_text(est);
    if let Some(truth) = truth {
        let aligned = align_to_truth(est, truth)?;
        let centered = truth.centered();
        for (l, block) in aligned.blocks().iter().enumerate() {
            let t = centered.coeff(l);
            let rel = (*block - &t).norm() / t.norm().max(f64::MIN_POSITIVE);
            let _ = writeln!(out, "aligned_error.Y{l}: {rel:e}");
        }
    }
    Ok(out)
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let meas = stage("read bundle", read_bundle(&args.input))?;
    let est = stage(
        "estimate",
        match args.method {
            Method::Distance => crate::distance::estimate_from_distances(&meas, args.dim),
            Method::Accel => crate::accel::estimate_with_accel(&meas, args.dim),
        },
    )?;
    let diag = stage("estimate", estimate_diagnostics(&est, meas.truth.as_ref()))?;
    let dir = &args.output.output;
    stage(
        "write output",
        write_file(dir, "estimate.csv", &estimate_to_csv(&est)),
    )?;
    stage("write output", write_file(dir, "diagnostics.txt", &diag))
}

fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut cfg = stage(
        "config",
        RunConfig::load(args.config.as_deref(), &args.overrides),
    )?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(k) = &args.k_sweep {
        cfg.k_sweep = k.clone();
    }
    if let Some(t) = args.trials {
        cfg.sim.n_trials = t;
    }
    if let Some(m) = &args.method {
        cfg.methods = m.clone();
    }
    stage("config", cfg.validate())?;
    let traj = stage("config", cfg.trajectory())?;
    let report = stage(
        "benchmark",
        run_monte_carlo(&cfg.sim, &traj, &cfg.methods, &cfg.k_sweep),
    )?;

    let mut summary = String::new();
    let _ = writeln!(summary, "trials_per_k: {}", report.trials);
    let _ = writeln!(summary, "seed: {}", cfg.sim.seed);
    let _ = writeln!(summary, "sigma_d: {}", cfg.sim.sigma_d);
    let _ = writeln!(summary, "sigma_a: {}", cfg.sim.sigma_a);
    for (m, k, w) in &report.warning_counts {
        let failed = report
            .failures
            .iter()
            .filter(|f| f.method == *m && f.k == *k)
            .count();
        let _ = writeln!(summary, "{m} K={k}: failed={failed} warnings={w}");
    }
    for f in &report.failures {
        let _ = writeln!(
            summary,
            "failure: {} K={} trial={}: {}",
            f.method, f.k, f.trial_index, f.message
        );
    }
    let dir = &args.output.output;
    stage(
        "write output",
        write_file(dir, "rmse.csv", &report.table.to_csv()),
    )?;
    stage(
        "write output",
        write_file(dir, "time_sweep.csv", &time_sweep_csv(&report.time_sweep)),
    )?;
    stage("write output", write_file(dir, "summary.txt", &summary))
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit status. Usage errors exit with 2, runtime errors with 1.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
