use std::fmt;
use std::str::FromStr;

use crate::distance::GrammianCoefficients;
use crate::error::Error;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Ranges only.
    Distance,
    /// Ranges fused with accelerometers.
    Accel,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Distance, Method::Accel];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Distance => "distance",
            Method::Accel => "accel",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "distance" => Ok(Method::Distance),
            "accel" => Ok(Method::Accel),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected distance or accel)"
            ))),
        }
    }
}

/// Relative kinematics at `t = 0` in the frame of the position estimate.
#[derive(Debug, Clone)]
pub struct KinematicEstimate {
    pub method: Method,
    /// Relative positions, m.
    pub y0: Matrix,
    /// Relative velocities, m/s.
    pub y1: Matrix,
    /// Relative accelerations, m/s².
    pub y2: Matrix,
    /// Orthogonal map from the acceleration factor's own frame into the
    /// estimate frame: `y2 = rotation * factor`. For the accelerometer
    /// pipeline the factor is the sensor-frame acceleration, so this is the
    /// recovered sensor orientation.
    pub rotation: Matrix,
    /// Grammian polynomial coefficients the kinematics were derived from.
    pub coefficients: GrammianCoefficients,
    /// Relative residuals per stage.
    pub residuals: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl KinematicEstimate {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, (_, v)| m.max(*v))
    }

    pub fn blocks(&self) -> [&Matrix; 3] {
        [&self.y0, &self.y1, &self.y2]
    }
}
