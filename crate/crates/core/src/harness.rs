//! Monte-Carlo benchmarking: frame alignment, RMSE tables and time sweeps.
//!
//! Estimates are relative, so every trial is first registered to the
//! centered truth with one orthogonal transform shared by all kinematic
//! orders, then differenced.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::accel::estimate_with_accel;
use crate::distance::{analytic_blocks, estimate_from_distances, CONSTANT_ACCEL_DEGREE};
use crate::error::{Error, Result};
use crate::estimate::{KinematicEstimate, Method};
use crate::linalg::{orthogonal_procrustes, vech, Matrix};
use crate::sim::{simulate_trial, MeasurementSet, PolynomialTrajectory, SimConfig};

/// Spacing of the time-sweep grid, s.
pub const TIME_SWEEP_STEP: f64 = 0.5;

/// Largest tolerated fraction of failed trials per `(method, K)`.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Quantities whose error is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Y0,
    Y1,
    Y2,
    B0,
    B1,
    B2,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::Y0,
        Block::Y1,
        Block::Y2,
        Block::B0,
        Block::B1,
        Block::B2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Y0 => "Y0",
            Block::Y1 => "Y1",
            Block::Y2 => "Y2",
            Block::B0 => "B0",
            Block::B1 => "B1",
            Block::B2 => "B2",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Squared error of one block together with its vectorized length `N_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockError {
    pub squared: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub method: Method,
    pub k: usize,
    /// Indexed by [`Block`]; kinematic blocks are aligned first, Grammian
    /// coefficient blocks compare their half-vectorizations.
    pub errors: [BlockError; 6],
    /// `(t, ‖Ŝ(t) − S(t)‖²)` for aligned positions on the sweep grid.
    pub time_errors: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl TrialResult {
    pub fn error(&self, block: Block) -> BlockError {
        self.errors[block.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub method: Method,
    pub k: usize,
    pub block: Block,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmseTable {
    pub rows: Vec<RmseRow>,
}

impl RmseTable {
    pub fn get(&self, method: Method, k: usize, block: Block) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k && r.block == block)
            .map(|r| r.rmse)
    }

    /// `method,K,block,rmse`, one row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,K,block,rmse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.method, r.k, r.block.as_str(), r.rmse);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSweepRow {
    pub method: Method,
    pub k: usize,
    pub t: f64,
    pub rmse: f64,
}

/// `method,K,t,rmse`, one row per grid point.
pub fn time_sweep_csv(rows: &[TimeSweepRow]) -> String {
    let mut out = String::from("method,K,t,rmse\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.method, r.k, r.t, r.rmse);
    }
    out
}

/// A trial that did not produce an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub method: Method,
    pub k: usize,
    pub trial_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub table: RmseTable,
    pub time_sweep: Vec<TimeSweepRow>,
    pub failures: Vec<TrialFailure>,
    /// Trials attempted per `(method, K)`.
    pub trials: usize,
    /// Total warnings raised per `(method, K)`.
    pub warning_counts: Vec<(Method, usize, usize)>,
}

impl MonteCarloReport {
    pub fn time_sweep_for(&self, method: Method, k: usize) -> Vec<(f64, f64)> {
        self.time_sweep
            .iter()
            .filter(|r| r.method == method && r.k == k)
            .map(|r| (r.t, r.rmse))
            .collect()
    }
}

fn stacked(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Registers `est` to the centered truth with one orthogonal transform
/// fitted on `[Ŷ0 Ŷ1 Ŷ2]` jointly, applied to every block and to the
/// rotation.
pub fn align_to_truth(
    est: &KinematicEstimate,
    truth: &PolynomialTrajectory,
) -> Result<KinematicEstimate> {
    let centered = truth.centered();
    let target: Vec<Matrix> = (0..3).map(|l| centered.coeff(l)).collect();
    if target[0].shape() != est.y0.shape() {
        return Err(Error::InvalidDimension(format!(
            "estimate is {:?} but truth is {:?}",
            est.y0.shape(),
            target[0].shape()
        )));
    }
    let a = stacked(&[&est.y0, &est.y1, &est.y2]);
    let b = stacked(&[&target[0], &target[1], &target[2]]);
    let r = orthogonal_procrustes(&a, &b)?.rotation;
    Ok(KinematicEstimate {
        y0: &r * &est.y0,
        y1: &r * &est.y1,
        y2: &r * &est.y2,
        rotation: &r * &est.rotation,
        ..est.clone()
    })
}

/// Position grid `t_start, t_start + step, …` up to and including `t_end`.
pub fn time_grid(t_start: f64, t_end: f64, step: f64) -> Vec<f64> {
    let n = ((t_end - t_start) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| t_start + step * i as f64).collect();
    if let Some(last) = grid.last_mut() {
        if (*last - t_end).abs() < 1e-9 * step {
            *last = t_end;
        }
    }
    grid
}

fn position_at(y: [&Matrix; 3], t: f64) -> Matrix {
    y[0] + y[1] * t + y[2] * (0.5 * t * t)
}

/// Errors of one estimate against the truth.
pub fn evaluate_trial(
    est: &KinematicEstimate,
    truth: &PolynomialTrajectory,
    grid: &[f64],
    trial_index: usize,
    k: usize,
) -> Result<TrialResult> {
    let aligned = align_to_truth(est, truth)?;
    let centered = truth.centered();
    let y_true: Vec<Matrix> = (0..3).map(|l| centered.coeff(l)).collect();
    let b_true = analytic_blocks(&centered, CONSTANT_ACCEL_DEGREE);

    let kin = |est: &Matrix, truth: &Matrix| BlockError {
        squared: (est - truth).norm_squared(),
        len: truth.len(),
    };
    let coeff = |l: usize| -> Result<BlockError> {
        let e = vech(est.coefficients.block(l)?)?;
        let t = vech(&b_true[l])?;
        Ok(BlockError {
            squared: (e - &t).norm_squared(),
            len: t.len(),
        })
    };
    let errors = [
        kin(&aligned.y0, &y_true[0]),
        kin(&aligned.y1, &y_true[1]),
        kin(&aligned.y2, &y_true[2]),
        coeff(0)?,
        coeff(1)?,
        coeff(2)?,
    ];
    let est_blocks = [&aligned.y0, &aligned.y1, &aligned.y2];
    let true_blocks = [&y_true[0], &y_true[1], &y_true[2]];
    let time_errors = grid
        .iter()
        .map(|&t| {
            let d = position_at(est_blocks, t) - position_at(true_blocks, t);
            (t, d.norm_squared())
        })
        .collect();
    if errors.iter().any(|e| !e.squared.is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite estimate".into()));
    }
    Ok(TrialResult {
        trial_index,
        method: est.method,
        k,
        errors,
        time_errors,
        warnings: est.warnings.clone(),
    })
}

fn rmse_value(sum_sq: f64, trials: usize, len: usize) -> f64 {
    (sum_sq / trials as f64).sqrt() / len as f64
}

/// `RMSE(z) = N_z⁻¹ √(N_exp⁻¹ Σ_i ‖ẑ_i − z‖²)` per `(method, K, block)`.
pub fn rmse(trials: &[TrialResult]) -> Result<RmseTable> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("no trials to summarize".into()));
    }
    // (sum of squares, block lengths, trial count) per (method, K)
    let mut groups: BTreeMap<_, ([f64; 6], [usize; 6], usize)> = BTreeMap::new();
    for tr in trials {
        let entry = groups
            .entry((tr.method, tr.k))
            .or_insert(([0.0; 6], [0; 6], 0));
        for (i, e) in tr.errors.iter().enumerate() {
            if entry.2 > 0 && entry.1[i] != e.len {
                return Err(Error::InvalidDimension(format!(
                    "trial {} has a {} block of length {}, expected {}",
                    tr.trial_index,
                    Block::ALL[i].as_str(),
                    e.len,
                    entry.1[i]
                )));
            }
            entry.0[i] += e.squared;
            entry.1[i] = e.len;
        }
        entry.2 += 1;
    }
    let mut rows = Vec::new();
    for ((method, k), (sums, lens, count)) in groups {
        for block in Block::ALL {
            let i = block.index();
            rows.push(RmseRow {
                method,
                k,
                block,
                rmse: rmse_value(sums[i], count, lens[i]),
            });
        }
    }
    Ok(RmseTable { rows })
}

/// Position RMSE on the time grid per `(method, K)`, same normalization as
/// [`rmse`] with `N_z = N·D`.
pub fn time_sweep(trials: &[TrialResult], nodes_times_dim: usize) -> Vec<TimeSweepRow> {
    let mut groups: BTreeMap<_, (Vec<(f64, f64)>, usize)> = BTreeMap::new();
    for tr in trials {
        let entry = groups
            .entry((tr.method, tr.k))
            .or_insert_with(|| (tr.time_errors.iter().map(|&(t, _)| (t, 0.0)).collect(), 0));
        for (acc, &(_, e)) in entry.0.iter_mut().zip(&tr.time_errors) {
            acc.1 += e;
        }
        entry.1 += 1;
    }
    groups
        .into_iter()
        .flat_map(|((method, k), (sums, count))| {
            sums.into_iter().map(move |(t, s)| TimeSweepRow {
                method,
                k,
                t,
                rmse: rmse_value(s, count, nodes_times_dim),
            })
        })
        .collect()
}

fn estimate(method: Method, meas: &MeasurementSet, dim: usize) -> Result<KinematicEstimate> {
    match method {
        Method::Distance => estimate_from_distances(meas, dim),
        Method::Accel => estimate_with_accel(meas, dim),
    }
}

/// Runs `config.n_trials` paired trials for every `K` and method.
///
/// Trial `i` at a given `K` draws its noise from stream `i` of
/// `config.seed`, and all methods consume that same measurement set.
/// Trials run in parallel; results are reduced in trial order, so the
/// output does not depend on scheduling.
pub fn run_monte_carlo(
    config: &SimConfig,
    truth: &PolynomialTrajectory,
    methods: &[Method],
    k_values: &[usize],
) -> Result<MonteCarloReport> {
    config.validate()?;
    if methods.is_empty() || k_values.is_empty() || config.n_trials == 0 {
        return Err(Error::EmptyInput(
            "need at least one method, one K and one trial".into(),
        ));
    }
    let grid = time_grid(config.t_start, config.t_end, TIME_SWEEP_STEP);
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut warning_counts = Vec::new();

    for &k in k_values {
        let cfg = SimConfig {
            k,
            ..config.clone()
        };
        cfg.validate()?;
        let per_trial: Vec<Result<Vec<Result<TrialResult>>>> = (0..cfg.n_trials)
            .into_par_iter()
            .map(|i| {
                let meas = simulate_trial(&cfg, truth, i as u64)?;
                Ok(methods
                    .iter()
                    .map(|&m| {
                        estimate(m, &meas, cfg.dim)
                            .and_then(|est| evaluate_trial(&est, truth, &grid, i, k))
                    })
                    .collect())
            })
            .collect();

        let mut failed = vec![0usize; methods.len()];
        let mut warned = vec![0usize; methods.len()];
        for (i, trial) in per_trial.into_iter().enumerate() {
            for (mi, outcome) in trial?.into_iter().enumerate() {
                match outcome {
                    Ok(r) => {
                        warned[mi] += r.warnings.len();
                        results.push(r);
                    }
                    Err(e) => {
                        failed[mi] += 1;
                        failures.push(TrialFailure {
                            method: methods[mi],
                            k,
                            trial_index: i,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        for (mi, &m) in methods.iter().enumerate() {
            if failed[mi] as f64 > MAX_FAILURE_FRACTION * cfg.n_trials as f64
                || failed[mi] == cfg.n_trials
            {
                return Err(Error::TooManyFailures {
                    failed: failed[mi],
                    total: cfg.n_trials,
                });
            }
            warning_counts.push((m, k, warned[mi]));
        }
    }

    let table = rmse(&results)?;
    let sweep = time_sweep(&results, config.nodes * config.dim);
    Ok(MonteCarloReport {
        table,
        time_sweep: sweep,
        failures,
        trials: config.n_trials,
        warning_counts,
    })
}
