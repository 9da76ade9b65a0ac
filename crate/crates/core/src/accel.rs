//! Relative kinematics from distances fused with accelerometers.
//!
//! All nodes share one unknown, constant sensor orientation `Q`. Fitting the
//! accelerometer series gives the acceleration coefficients in the sensor
//! frame; their Grammian `Ỹ_lᵀ Ỹ_l` does not depend on `Q`, so it can be
//! subtracted from the range Grammians, lowering the polynomial degree to
//! fit. The velocity and `Q` are then recovered with the same basis-function
//! solve as the distance-only pipeline.

use crate::distance::{
    acceleration_negligible, check_planar, fit_gram_coeffs, fit_monomials, grams_from_edms,
    lyapunov_residuals, relative, solve_velocity_and_frame, GrammianCoefficients,
};
use crate::error::{Error, Result};
use crate::estimate::{KinematicEstimate, Method};
use crate::linalg::{centering_matrix, classical_mds, vech, Matrix, Vector};

/// Degree of the deflated Grammian polynomial for constant acceleration.
pub const DEFLATED_DEGREE: usize = 3;

/// Acceleration coefficients `Ỹ_2 .. Ỹ_L` in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelCoefficients {
    pub blocks: Vec<Matrix>,
    /// `‖V α − τ‖ / ‖τ‖` of the fit.
    pub residual: f64,
}

impl AccelCoefficients {
    /// Highest derivative order `L`.
    pub fn order(&self) -> usize {
        self.blocks.len() + 1
    }

    /// Coefficients with the common-mode component removed, `Ỹ_l C`.
    pub fn centered(&self) -> Result<Self> {
        let n = self.blocks.first().map_or(0, |b| b.ncols());
        let c = centering_matrix(n)?;
        Ok(Self {
            blocks: self.blocks.iter().map(|b| b * &c).collect(),
            residual: self.residual,
        })
    }
}

/// Per-entry least-squares fit of `ẍ_k = Σ_{l=2}^{L} Ỹ_l t_k^{l-2} / (l-2)!`.
/// For `L = 2` this is the time average of the readings.
pub fn fit_accel_coeffs(
    accels: &[Matrix],
    timestamps: &[f64],
    order: usize,
) -> Result<AccelCoefficients> {
    if order < 2 {
        return Err(Error::InvalidDimension(format!(
            "acceleration order must be >= 2, got {order}"
        )));
    }
    let first = accels
        .first()
        .ok_or_else(|| Error::EmptyInput("no accelerometer samples".into()))?;
    let (d, n) = first.shape();
    if accels.iter().any(|a| a.shape() != (d, n)) {
        return Err(Error::InvalidDimension(
            "accelerometer samples differ in shape".into(),
        ));
    }
    let data = Matrix::from_fn(accels.len(), d * n, |k, p| accels[k][(p % d, p / d)]);
    let degree = order - 2;
    let fit = fit_monomials(timestamps, &data, degree)?;
    let mut factorial = 1.0;
    let blocks = (0..=degree)
        .map(|m| {
            if m > 0 {
                factorial *= m as f64;
            }
            let row = fit.coeffs.row(m);
            Matrix::from_fn(d, n, |i, j| row[j * d + i] * factorial)
        })
        .collect();
    Ok(AccelCoefficients {
        blocks,
        residual: relative(fit.residual, data.norm()),
    })
}

/// `vech G̃_k = vech G_k − Σ_l vech(Ỹ_lᵀ Ỹ_l) t_k^{2l} / (l!)²`.
pub fn deflate_grams(
    grams: &[Vector],
    timestamps: &[f64],
    acc: &AccelCoefficients,
) -> Result<Vec<Vector>> {
    if grams.len() != timestamps.len() {
        return Err(Error::InvalidDimension(format!(
            "{} Grammians for {} timestamps",
            grams.len(),
            timestamps.len()
        )));
    }
    let mut terms = Vec::with_capacity(acc.blocks.len());
    let mut fact = 1.0;
    for (idx, y) in acc.blocks.iter().enumerate() {
        let l = idx + 2;
        fact = if idx == 0 { 2.0 } else { fact * l as f64 };
        let q = vech(&(y.transpose() * y))? / (fact * fact);
        terms.push((2 * l as i32, q));
    }
    grams
        .iter()
        .zip(timestamps)
        .map(|(g, &t)| {
            if let Some((_, q)) = terms.first() {
                if q.len() != g.len() {
                    return Err(Error::InvalidDimension(
                        "accelerometer and range node counts differ".into(),
                    ));
                }
            }
            let mut out = g.clone();
            for (power, q) in &terms {
                out -= q * t.powi(*power);
            }
            Ok(out)
        })
        .collect()
}

/// Degree-3 fit of the deflated Grammians.
pub fn fit_deflated_coeffs(
    deflated: &[Vector],
    timestamps: &[f64],
) -> Result<GrammianCoefficients> {
    fit_gram_coeffs(deflated, timestamps, DEFLATED_DEGREE)
}

/// Relative kinematics and sensor orientation from ranges and accelerometers.
///
/// `rotation` in the result maps sensor-frame accelerations into the
/// estimate frame, `y2 = rotation * Ỹ_2`.
pub fn estimate_with_accel(
    meas: &crate::sim::MeasurementSet,
    dim: usize,
) -> Result<KinematicEstimate> {
    let accels = meas.accels.as_ref().ok_or_else(|| {
        Error::Config("accelerometer measurements are required for the fused estimator".into())
    })?;
    check_planar(meas, dim, DEFLATED_DEGREE + 2)?;
    if accels.first().map(|a| a.nrows()) != Some(dim) {
        return Err(Error::InvalidDimension(format!(
            "accelerometer samples must have {dim} axes"
        )));
    }

    let acc = fit_accel_coeffs(accels, &meas.timestamps, 2)
        .map_err(Error::at("accelerometer fit"))?
        .centered()?;
    let grams = grams_from_edms(&meas.edms).map_err(Error::at("double centering"))?;
    let deflated = deflate_grams(&grams, &meas.timestamps, &acc).map_err(Error::at("deflation"))?;
    let coeffs =
        fit_deflated_coeffs(&deflated, &meas.timestamps).map_err(Error::at("Grammian fit"))?;

    let pos = classical_mds(coeffs.block(0)?, dim).map_err(Error::at("MDS"))?;
    let mut warnings = Vec::new();
    if pos.degenerate {
        warnings.push("position Grammian has fewer than D positive eigenvalues".into());
    }
    let sensor_acc = &acc.blocks[0];
    let b1 = coeffs.block(1)?.clone();
    let b3_twice = coeffs.block(3)? * 2.0;
    let negligible = acceleration_negligible(sensor_acc, coeffs.block(0)?, &meas.timestamps);
    let sol = solve_velocity_and_frame(&b1, &pos.points, &b3_twice, sensor_acc, negligible)?;
    let y2 = &sol.frame * sensor_acc;

    let mut residuals = vec![
        ("accel_fit".to_string(), acc.residual),
        ("gram_fit".to_string(), coeffs.residual),
    ];
    residuals.extend(sol.residuals);
    residuals.extend(lyapunov_residuals(
        &b1,
        &b3_twice,
        &pos.points,
        &sol.y1,
        &y2,
    ));
    warnings.extend(sol.warnings);

    Ok(KinematicEstimate {
        method: Method::Accel,
        y0: pos.points,
        y1: sol.y1,
        y2,
        rotation: sol.frame,
        coefficients: coeffs,
        residuals,
        warnings,
    })
}
