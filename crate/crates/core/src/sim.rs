//! Ground-truth polynomial trajectories and noisy measurement generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{centering_matrix, edm_from_points, rotation_2d, Matrix};

/// Per-node polynomial motion `S(t) = Σ_l Y_l t^l / l!`, one `D x N`
/// coefficient matrix per derivative order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTrajectory {
    coeffs: Vec<Matrix>,
}

impl PolynomialTrajectory {
    pub fn new(coeffs: Vec<Matrix>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::InvalidDimension("trajectory needs at least Y0".into()))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidDimension("empty coefficient matrix".into()));
        }
        if let Some((l, bad)) = coeffs.iter().enumerate().find(|(_, c)| c.shape() != shape) {
            return Err(Error::InvalidDimension(format!(
                "Y{l} has shape {:?}, expected {shape:?}",
                bad.shape()
            )));
        }
        if coeffs.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidDimension(
                "trajectory coefficients must be finite".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    /// The ten-node planar constant-acceleration scenario used by the
    /// default benchmark configuration.
    pub fn benchmark_scenario() -> Self {
        #[rustfmt::skip]
        let y0 = Matrix::from_row_slice(2, 10, &[
            -244., 385., 81., -19., -792., -554., -965., -985., -49., -503.,
            -588., -456., -992., -730., 879., 970., 155., 318., -858., 419.,
        ]);
        #[rustfmt::skip]
        let y1 = Matrix::from_row_slice(2, 10, &[
            -5., -8., -6., 6., -1., 2., 1., -5., 9., -5.,
            -8., -5., -7., -9., -3., -2., -2., -10., 2., -1.,
        ]);
        #[rustfmt::skip]
        let y2 = Matrix::from_row_slice(2, 10, &[
            -0.17, -0.42, 0.22, -0.07, 0.21, -0.15, 0.55, -0.72, -0.49, -0.34,
            0.42, 0.17, 0.98, 0.73, 0.48, 0.08, -0.43, -0.14, 0.56, 0.91,
        ]);
        Self {
            coeffs: vec![y0, y1, y2],
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn nodes(&self) -> usize {
        self.coeffs[0].ncols()
    }

    /// Highest stored derivative order `L`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Matrix] {
        &self.coeffs
    }

    /// `Y_l`, or a zero matrix for `l > L`.
    pub fn coeff(&self, l: usize) -> Matrix {
        self.coeffs
            .get(l)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.dim(), self.nodes()))
    }

    /// Position (`order = 0`), velocity (1) or acceleration (2) at time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Matrix> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        let mut out = Matrix::zeros(self.dim(), self.nodes());
        let mut factor = 1.0; // t^(l-order) / (l-order)!
        for (m, y) in self.coeffs.iter().skip(order).enumerate() {
            if m > 0 {
                factor *= t / m as f64;
            }
            out += y * factor;
        }
        Ok(out)
    }

    /// Coefficients expressed about the network centroid, `Y_l C`.
    pub fn centered(&self) -> Self {
        let c = centering_matrix(self.nodes()).expect("nodes >= 1");
        Self {
            coeffs: self.coeffs.iter().map(|y| y * &c).collect(),
        }
    }

    /// Applies a common linear map to every coefficient.
    pub fn transformed(&self, r: &Matrix) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|y| r * y).collect(),
        }
    }
}

/// Simulation and Monte-Carlo parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: usize,
    pub dim: usize,
    /// Samples are indexed `0..=k`, so there are `k + 1` of them.
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Standard deviation of the (unsquared) range noise, m.
    pub sigma_d: f64,
    /// Standard deviation of the accelerometer noise, m/s².
    pub sigma_a: f64,
    pub seed: u64,
    /// Orientation of the accelerometer frame (planar case), rad.
    pub accel_rotation_angle: f64,
    pub n_trials: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: 10,
            dim: 2,
            k: 40,
            t_start: -5.0,
            t_end: 5.0,
            sigma_d: 0.01,
            sigma_a: 0.001,
            seed: 42,
            accel_rotation_angle: std::f64::consts::FRAC_PI_6,
            n_trials: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nodes == 0 || self.dim == 0 {
            return bad("nodes and dim must be positive".into());
        }
        if self.k + 1 < 5 {
            return bad(format!(
                "K = {} gives {} samples, at least 5 are needed",
                self.k,
                self.k + 1
            ));
        }
        if !(self.sigma_d >= 0.0 && self.sigma_d.is_finite()) {
            return bad(format!("sigma_d must be >= 0, got {}", self.sigma_d));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite()) {
            return bad(format!("sigma_a must be >= 0, got {}", self.sigma_a));
        }
        if !(self.t_start < self.t_end) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return bad(format!(
                "need t_start < t_end, got [{}, {}]",
                self.t_start, self.t_end
            ));
        }
        if !self.accel_rotation_angle.is_finite() {
            return bad("accel_rotation_angle must be finite".into());
        }
        Ok(())
    }

    /// `k + 1` uniformly spaced samples on `[t_start, t_end]`, endpoints included.
    pub fn timestamps(&self) -> Vec<f64> {
        let step = (self.t_end - self.t_start) / self.k as f64;
        (0..=self.k)
            .map(|i| {
                if i == self.k {
                    self.t_end
                } else {
                    self.t_start + step * i as f64
                }
            })
            .collect()
    }

    /// Orientation of the accelerometer frame.
    pub fn accel_rotation(&self) -> Matrix {
        if self.dim == 2 {
            rotation_2d(self.accel_rotation_angle)
        } else {
            Matrix::identity(self.dim, self.dim)
        }
    }
}

/// Noisy distance (and accelerometer) samples plus the truth they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub timestamps: Vec<f64>,
    /// Squared distances, one `N x N` matrix per timestamp.
    pub edms: Vec<Matrix>,
    /// Accelerometer readings, one `D x N` matrix per timestamp.
    pub accels: Option<Vec<Matrix>>,
    pub truth: Option<PolynomialTrajectory>,
    pub q_true: Option<Matrix>,
}

impl MeasurementSet {
    pub fn nodes(&self) -> usize {
        self.edms.first().map_or(0, |e| e.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.edms.len() {
            return Err(Error::InvalidDimension(format!(
                "{} timestamps but {} EDMs",
                self.timestamps.len(),
                self.edms.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidDimension(
                "timestamps must be strictly increasing".into(),
            ));
        }
        let n = self.nodes();
        for (k, e) in self.edms.iter().enumerate() {
            if e.shape() != (n, n) {
                return Err(Error::InvalidDimension(format!(
                    "EDM {k} has shape {:?}, expected ({n}, {n})",
                    e.shape()
                )));
            }
            for i in 0..n {
                if e[(i, i)] != 0.0 {
                    return Err(Error::InvalidDimension(format!(
                        "EDM {k} has nonzero diagonal at {i}"
                    )));
                }
                for j in 0..i {
                    if (e[(i, j)] - e[(j, i)]).abs() > 1e-9 * e[(i, j)].abs().max(1.0) {
                        return Err(Error::InvalidDimension(format!(
                            "EDM {k} is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        if let Some(acc) = &self.accels {
            if acc.len() != self.timestamps.len() {
                return Err(Error::InvalidDimension(format!(
                    "{} accelerometer samples for {} timestamps",
                    acc.len(),
                    self.timestamps.len()
                )));
            }
            if let Some(a) = acc.iter().find(|a| a.ncols() != n) {
                return Err(Error::InvalidDimension(format!(
                    "accelerometer sample has {} nodes, expected {n}",
                    a.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Random stream for one Monte-Carlo trial: same `(seed, trial)` always
/// yields the same stream, independent of evaluation order.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Simulates one measurement set using the config's seed (trial stream 0).
pub fn simulate_measurements(
    config: &SimConfig,
    traj: &PolynomialTrajectory,
) -> Result<MeasurementSet> {
    simulate_trial(config, traj, 0)
}

/// Simulates the measurement set of Monte-Carlo trial `trial`.
///
/// Range noise is added to the unsquared distance of each unordered pair and
/// the result squared. Accelerometer samples are `Q · Ẍ_k C + noise`.
pub fn simulate_trial(
    config: &SimConfig,
    traj: &PolynomialTrajectory,
    trial: u64,
) -> Result<MeasurementSet> {
    config.validate()?;
    if traj.nodes() != config.nodes || traj.dim() != config.dim {
        return Err(Error::Config(format!(
            "trajectory is {}x{} but config says dim={} nodes={}",
            traj.dim(),
            traj.nodes(),
            config.dim,
            config.nodes
        )));
    }
    let mut rng = trial_rng(config.seed, trial);
    let n = config.nodes;
    let timestamps = config.timestamps();
    let c = centering_matrix(n)?;
    let q = config.accel_rotation();

    let mut edms = Vec::with_capacity(timestamps.len());
    for &t in &timestamps {
        let mut edm = edm_from_points(&traj.eval(t, 0)?);
        for j in 0..n {
            for i in (j + 1)..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                if config.sigma_d > 0.0 {
                    let d = edm[(i, j)].sqrt() + config.sigma_d * z;
                    edm[(i, j)] = d * d;
                    edm[(j, i)] = d * d;
                }
            }
        }
        edms.push(edm);
    }

    let mut accels = Vec::with_capacity(timestamps.len());
    for &t in &timestamps {
        let mut a = &q * (traj.eval(t, 2)? * &c);
        for v in a.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += config.sigma_a * z;
        }
        accels.push(a);
    }

    Ok(MeasurementSet {
        timestamps,
        edms,
        accels: Some(accels),
        truth: Some(traj.clone()),
        q_true: Some(q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io;
    use crate::linalg::{gram_from_edm, sorted_symmetric_eigen};

    fn noiseless(k: usize) -> SimConfig {
        SimConfig {
            k,
            sigma_d: 0.0,
            sigma_a: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn eval_at_zero_returns_coefficients() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        assert_eq!(traj.eval(0.0, 0).unwrap(), traj.coeffs()[0]);
        assert_eq!(traj.eval(0.0, 1).unwrap(), traj.coeffs()[1]);
        assert_eq!(traj.eval(0.0, 2).unwrap(), traj.coeffs()[2]);
        assert!(matches!(traj.eval(0.0, 3), Err(Error::UnsupportedOrder(3))));
    }

    #[test]
    fn constant_acceleration_is_time_invariant() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        assert_eq!(traj.eval(1.0, 2).unwrap(), traj.eval(-3.0, 2).unwrap());
    }

    #[test]
    fn eval_matches_taylor_expansion() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let t = 2.5;
        let y = traj.coeffs();
        let pos = &y[0] + &y[1] * t + &y[2] * (t * t / 2.0);
        let vel = &y[1] + &y[2] * t;
        assert!((traj.eval(t, 0).unwrap() - pos).amax() < 1e-12);
        assert!((traj.eval(t, 1).unwrap() - vel).amax() < 1e-12);
    }

    #[test]
    fn centering_examples() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let centered = traj.centered();
        for y in centered.coeffs() {
            for r in 0..2 {
                assert!(y.row(r).sum().abs() < 1e-9);
            }
        }
        let twice = centered.centered();
        for (a, b) in twice.coeffs().iter().zip(centered.coeffs()) {
            assert!((a - b).amax() < 1e-12);
        }
        let col = Matrix::from_row_slice(2, 1, &[3.0, -7.0]);
        let repeated = PolynomialTrajectory::new(vec![Matrix::from_fn(2, 5, |i, _| col[(i, 0)])])
            .unwrap()
            .centered();
        assert!(repeated.coeffs()[0].amax() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let r = PolynomialTrajectory::new(vec![Matrix::zeros(2, 3), Matrix::zeros(2, 4)]);
        assert!(r.is_err());
        assert!(PolynomialTrajectory::new(vec![]).is_err());
    }

    #[test]
    fn timestamps_are_inclusive_and_uniform() {
        let cfg = SimConfig {
            k: 20,
            ..SimConfig::default()
        };
        let ts = cfg.timestamps();
        assert_eq!(ts.len(), 21);
        assert_eq!(ts[0], -5.0);
        assert_eq!(ts[20], 5.0);
        assert!((ts[10]).abs() < 1e-15);
        assert!(ts.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn config_rejects_negative_sigma() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = SimConfig {
            sigma_d: -0.1,
            ..SimConfig::default()
        };
        assert!(matches!(
            simulate_measurements(&cfg, &traj),
            Err(Error::Config(_))
        ));
        let cfg = SimConfig {
            sigma_a: -1.0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            k: 3,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_noise_reproduces_analytic_values() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = noiseless(20);
        let meas = simulate_measurements(&cfg, &traj).unwrap();
        meas.validate().unwrap();
        let c = centering_matrix(10).unwrap();
        let q = cfg.accel_rotation();
        let accels = meas.accels.as_ref().unwrap();
        for (k, &t) in meas.timestamps.iter().enumerate() {
            assert_eq!(meas.edms[k], edm_from_points(&traj.eval(t, 0).unwrap()));
            assert_eq!(accels[k], &q * (traj.eval(t, 2).unwrap() * &c));
        }
    }

    #[test]
    fn zero_noise_grams_have_rank_two() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let meas = simulate_measurements(&noiseless(10), &traj).unwrap();
        for edm in &meas.edms {
            let spec = sorted_symmetric_eigen(&gram_from_edm(edm).unwrap());
            let top = spec.values[0];
            assert!(spec.values[2..].iter().all(|v| v.abs() < 1e-6 * top));
        }
    }

    #[test]
    fn translation_does_not_change_edms() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let mut coeffs = traj.coeffs().to_vec();
        coeffs[0].row_mut(0).add_scalar_mut(123.0);
        coeffs[0].row_mut(1).add_scalar_mut(-45.5);
        let shifted = PolynomialTrajectory::new(coeffs).unwrap();
        let cfg = SimConfig {
            k: 10,
            ..SimConfig::default()
        };
        let a = simulate_measurements(&cfg, &traj).unwrap();
        let b = simulate_measurements(&cfg, &shifted).unwrap();
        for (x, y) in a.edms.iter().zip(&b.edms) {
            assert!((x - y).amax() <= 1e-9 * x.amax());
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = SimConfig {
            k: 10,
            ..SimConfig::default()
        };
        let a = simulate_measurements(&cfg, &traj).unwrap();
        let b = simulate_measurements(&cfg, &traj).unwrap();
        assert_eq!(a, b);
        assert_eq!(io::bundle_to_strings(&a), io::bundle_to_strings(&b));
        let other = simulate_trial(&cfg, &traj, 1).unwrap();
        assert_ne!(a.edms, other.edms);
    }

    #[test]
    fn edm_noise_follows_first_order_propagation() {
        // Var[(d + e)^2] ≈ (2 d σ)^2 for σ << d.
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = SimConfig {
            k: 4,
            ..SimConfig::default()
        };
        let exact = simulate_measurements(
            &SimConfig {
                sigma_d: 0.0,
                ..cfg.clone()
            },
            &traj,
        )
        .unwrap();
        let (k, i, j) = (2, 3, 7);
        let truth = exact.edms[k][(i, j)];
        let trials = 1000;
        let samples: Vec<f64> = (0..trials)
            .map(|tr| simulate_trial(&cfg, &traj, tr).unwrap().edms[k][(i, j)] - truth)
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let expect = 2.0 * truth.sqrt() * cfg.sigma_d;
        let ratio = var.sqrt() / expect;
        assert!((ratio - 1.0).abs() < 0.1, "std ratio {ratio}");
    }
}
