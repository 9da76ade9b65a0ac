//! Relative kinematics from time-varying distance matrices alone.
//!
//! The pipeline double-centers every EDM into a Grammian, fits the Grammian
//! time series with a matrix polynomial `G(t) = Σ_l B_l t^l`, factors `B_0`
//! and `4 B_4` with classical MDS to get positions and (rotated)
//! accelerations, and finally resolves the velocities together with the
//! unknown acceleration-frame rotation from the two Lyapunov-like relations
//!
//! ```text
//!   B_1  = Y0ᵀ Y1 + Y1ᵀ Y0
//!   2B_3 = Y2ᵀ Y1 + Y1ᵀ Y2,     Y2 = H · (MDS factor of 4 B_4)
//! ```
//!
//! Each relation is split in the singular-vector bases of its known factor
//! (Chu's change of basis), which leaves only the two off-diagonal entries of
//! a 2x2 block undetermined. Writing the second relation's basis in terms of
//! the first's, with `H = [[h1, -h2], [h2, h1]]`, gives a system that is
//! linear in `φ = [h1, h2, h1 u1, h1 u2, h2 u1, h2 u2]`.

use crate::error::{Error, Result};
use crate::estimate::{KinematicEstimate, Method};
use crate::linalg::{
    classical_mds, gram_from_edm, orthogonal_complement, sorted_svd, unvech, vech, Embedding,
    Matrix, Vector,
};
use crate::sim::{MeasurementSet, PolynomialTrajectory};

/// Polynomial order of the Grammian for constant-acceleration motion.
pub const CONSTANT_ACCEL_DEGREE: usize = 4;

/// Number of basis functions in `φ` for the planar case.
pub const BASIS_LEN: usize = 6;

/// `B_0 .. B_degree` of `G(t) = Σ B_l t^l`, fitted by unweighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammianCoefficients {
    pub blocks: Vec<Matrix>,
    /// `‖T θ − g‖ / ‖g‖` of the fit.
    pub residual: f64,
}

impl GrammianCoefficients {
    pub fn degree(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, l: usize) -> Result<&Matrix> {
        self.blocks.get(l).ok_or_else(|| {
            Error::InvalidDimension(format!(
                "coefficient B{l} requested from a degree-{} fit",
                self.degree()
            ))
        })
    }
}

/// Monomial least-squares fit of every column of `data` (rows are samples).
pub(crate) struct PolyFit {
    /// `(degree + 1) x columns`, row `m` holds the `t^m` coefficients.
    pub coeffs: Matrix,
    pub residual: f64,
}

/// Solves the Vandermonde least-squares problem once for all columns via QR
/// on time-normalized monomials.
pub(crate) fn fit_monomials(timestamps: &[f64], data: &Matrix, degree: usize) -> Result<PolyFit> {
    let samples = timestamps.len();
    if data.nrows() != samples {
        return Err(Error::InvalidDimension(format!(
            "{} samples but {} timestamps",
            data.nrows(),
            samples
        )));
    }
    if samples < degree + 1 {
        return Err(Error::SingularDesign(format!(
            "{samples} samples cannot determine a degree-{degree} polynomial"
        )));
    }
    if timestamps.iter().any(|t| !t.is_finite()) {
        return Err(Error::SingularDesign("non-finite timestamp".into()));
    }
    let scale = timestamps.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let vander = Matrix::from_fn(samples, degree + 1, |k, m| {
        (timestamps[k] / scale).powi(m as i32)
    });

    let qr = vander.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if rmax == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * rmax) {
        return Err(Error::SingularDesign(
            "Vandermonde matrix is rank deficient (repeated timestamps?)".into(),
        ));
    }
    let qt_data = qr.q().transpose() * data;
    let scaled = r
        .solve_upper_triangular(&qt_data)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    let residual = (&vander * &scaled - data).norm();
    let mut coeffs = scaled;
    for m in 0..=degree {
        let f = scale.powi(m as i32);
        coeffs.row_mut(m).unscale_mut(f);
    }
    Ok(PolyFit { coeffs, residual })
}

pub(crate) fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Half-vectorized Grammians of a sequence of EDMs.
pub fn grams_from_edms(edms: &[Matrix]) -> Result<Vec<Vector>> {
    edms.iter().map(|e| vech(&gram_from_edm(e)?)).collect()
}

/// Least-squares fit of `vech G_k = Σ_l vech(B_l) t_k^l`.
pub fn fit_gram_coeffs(
    grams: &[Vector],
    timestamps: &[f64],
    degree: usize,
) -> Result<GrammianCoefficients> {
    let len = grams
        .first()
        .ok_or_else(|| Error::EmptyInput("no Grammians to fit".into()))?
        .len();
    if grams.iter().any(|g| g.len() != len) {
        return Err(Error::InvalidDimension("Grammians differ in size".into()));
    }
    let data = Matrix::from_fn(grams.len(), len, |k, p| grams[k][p]);
    let fit = fit_monomials(timestamps, &data, degree)?;
    let blocks = (0..=degree)
        .map(|l| unvech(fit.coeffs.row(l).transpose().as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(GrammianCoefficients {
        blocks,
        residual: relative(fit.residual, data.norm()),
    })
}

/// `B_l = Σ_m Y_mᵀ Y_{l-m} / (m! (l-m)!)` for `l = 0..=degree`.
pub fn analytic_blocks(traj: &PolynomialTrajectory, degree: usize) -> Vec<Matrix> {
    let n = traj.nodes();
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    (0..=degree)
        .map(|l| {
            let mut b = Matrix::zeros(n, n);
            for m in 0..=l {
                if m > traj.order() || l - m > traj.order() {
                    continue;
                }
                let w = 1.0 / (fact(m) * fact(l - m));
                b += traj.coeffs()[m].transpose() * &traj.coeffs()[l - m] * w;
            }
            b
        })
        .collect()
}

/// MDS factors of `B_0` (positions) and `4 B_4` (accelerations, up to an
/// unknown orthogonal transform).
pub fn recover_position_acceleration(
    coeffs: &GrammianCoefficients,
    dim: usize,
) -> Result<(Embedding, Embedding)> {
    if coeffs.degree() < CONSTANT_ACCEL_DEGREE {
        return Err(Error::InvalidDimension(format!(
            "need a degree >= 4 Grammian fit, got {}",
            coeffs.degree()
        )));
    }
    let pos = classical_mds(coeffs.block(0)?, dim)?;
    let acc = classical_mds(&(coeffs.block(4)? * 4.0), dim)?;
    Ok((pos, acc))
}

/// Known value of `λ_i z_ij + λ_j z_ji` for an off-diagonal pair of `Z_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffDiagConstraint {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Chu split of `B = [Λ 0]ᵀ Z + Zᵀ [Λ 0]` in the singular bases of a known
/// factor `Y = U [Λ 0] Vᵀ`, where `Z = Uᵀ X V` for the unknown `X`.
#[derive(Debug, Clone)]
pub struct ChuFactors {
    /// `D x D` left singular vectors.
    pub u: Matrix,
    /// `N x N` right singular vectors, completed to a full basis.
    pub v: Matrix,
    /// Singular values, descending.
    pub lambda: Vec<f64>,
    /// `Vᵀ B V`.
    pub bbar: Matrix,
    /// Uniquely determined `D x (N - D)` part of `Z`.
    pub z2: Matrix,
    /// Uniquely determined diagonal of `Z_1`.
    pub z1_diag: Vec<f64>,
    pub offdiag_constraints: Vec<OffDiagConstraint>,
    /// `‖(N-D) x (N-D) block of B̄‖_F`, zero for consistent data.
    pub consistency_residual: f64,
    /// Two singular values agree to within `1e-6` relative.
    pub repeated_singular_values: bool,
}

impl ChuFactors {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.v.nrows()
    }

    /// `Z` with the free off-diagonals of `Z_1` set to zero.
    pub fn known_z(&self) -> Matrix {
        let d = self.dim();
        let mut z = Matrix::zeros(d, self.nodes());
        for (i, &v) in self.z1_diag.iter().enumerate() {
            z[(i, i)] = v;
        }
        z.columns_mut(d, self.nodes() - d).copy_from(&self.z2);
        z
    }
}

pub fn chu_decompose(bhat: &Matrix, yhat: &Matrix) -> Result<ChuFactors> {
    let (d, n) = yhat.shape();
    if bhat.shape() != (n, n) {
        return Err(Error::InvalidDimension(format!(
            "B is {:?} but the factor has {n} columns",
            bhat.shape()
        )));
    }
    if d == 0 || d > n {
        return Err(Error::InvalidDimension(format!(
            "factor must be wide, got {d}x{n}"
        )));
    }
    let (u, lambda, v_thin) = sorted_svd(yhat);
    let top = lambda[0];
    if !(top > 0.0) || lambda[d - 1] <= 1e-8 * top {
        return Err(Error::DegenerateGeometry(format!(
            "factor is rank deficient (singular values {lambda:?})"
        )));
    }
    let mut v = Matrix::zeros(n, n);
    v.columns_mut(0, d).copy_from(&v_thin);
    v.columns_mut(d, n - d)
        .copy_from(&orthogonal_complement(&v_thin));

    let bbar = v.transpose() * bhat * &v;
    let mut z2 = bbar.view((0, d), (d, n - d)).clone_owned();
    for i in 0..d {
        z2.row_mut(i).unscale_mut(lambda[i]);
    }
    let z1_diag = (0..d).map(|i| bbar[(i, i)] / (2.0 * lambda[i])).collect();
    let mut offdiag_constraints = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            offdiag_constraints.push(OffDiagConstraint {
                i,
                j,
                value: 0.5 * (bbar[(i, j)] + bbar[(j, i)]),
            });
        }
    }
    let consistency_residual = bbar.view((d, d), (n - d, n - d)).norm();
    let repeated_singular_values = lambda.windows(2).any(|w| w[0] / w[1] < 1.0 + 1e-6);
    Ok(ChuFactors {
        u,
        v,
        lambda,
        bbar,
        z2,
        z1_diag,
        offdiag_constraints,
        consistency_residual,
        repeated_singular_values,
    })
}

/// Linear system `S z̄ = W φ(u, h)` and its solution.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    /// `(row, col)` entries of `Z̄` whose values are known (the `Z̄_2` block
    /// followed by the diagonal of `Z̄_1`); these make up the first rows.
    pub selected: Vec<(usize, usize)>,
    /// Number of trailing rows contributed by the off-diagonal constraints.
    pub constraint_rows: usize,
    pub w: Matrix,
    pub rhs: Vector,
    /// Unconstrained least-squares solution.
    pub phi: [f64; BASIS_LEN],
    /// `(h1, h2)` normalized to unit length.
    pub h: [f64; 2],
    pub u: [f64; 2],
    /// `‖S z̄ − W φ̂‖` at the least-squares solution.
    pub residual: f64,
    /// `‖S z̄ − W φ(û, ĥ)‖` at the recovered parameters.
    pub manifold_residual: f64,
    pub rank: usize,
}

impl BasisSystem {
    /// Rotation `[[h1, -h2], [h2, h1]]` such that `Z̄ = U_2ᵀ R X V_2`; its
    /// transpose maps the acceleration factor into the position frame.
    pub fn rotation(&self) -> Matrix {
        let [h1, h2] = self.h;
        Matrix::from_row_slice(2, 2, &[h1, -h2, h2, h1])
    }

    pub fn relative_residual(&self) -> f64 {
        relative(self.manifold_residual, self.rhs.norm())
    }
}

fn quarter_turn() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// Builds and solves the planar basis-function system from the Chu splits
/// of `(B_1, Y0)` and `(2 B_3, Y2)`.
pub fn build_and_solve_basis(f0: &ChuFactors, f2: &ChuFactors) -> Result<BasisSystem> {
    let d = f0.dim();
    let n = f0.nodes();
    if d != 2 || f2.dim() != 2 {
        return Err(Error::InvalidDimension(format!(
            "the basis solve is planar only, got D = {d}"
        )));
    }
    if f2.nodes() != n {
        return Err(Error::InvalidDimension("node counts differ".into()));
    }
    if n < 4 {
        return Err(Error::InvalidDimension(format!(
            "need at least 4 nodes, got {n}"
        )));
    }

    // Z̄ = U2ᵀ R U0 Z V0ᵀ V2 with R = h1 I + h2 J and Z = Z_known + u1 E12 + u2 E21.
    let m = f0.v.transpose() * &f2.v;
    let u2t = f2.u.transpose();
    let j = quarter_turn();
    let zk = f0.known_z();
    let mut e12 = Matrix::zeros(d, n);
    e12[(0, 1)] = 1.0;
    let mut e21 = Matrix::zeros(d, n);
    e21[(1, 0)] = 1.0;
    let left_i = &u2t * &f0.u;
    let left_j = &u2t * &j * &f0.u;
    let templates = [
        &left_i * &zk * &m,
        &left_j * &zk * &m,
        &left_i * &e12 * &m,
        &left_i * &e21 * &m,
        &left_j * &e12 * &m,
        &left_j * &e21 * &m,
    ];

    let mut selected = Vec::with_capacity(2 * n - 2);
    for c in d..n {
        for r in 0..d {
            selected.push((r, c));
        }
    }
    for i in 0..d {
        selected.push((i, i));
    }
    let constraint_rows = 3;
    let rows = selected.len() + constraint_rows;
    let mut w = Matrix::zeros(rows, BASIS_LEN);
    let mut rhs = Vector::zeros(rows);
    for (row, &(r, c)) in selected.iter().enumerate() {
        for (k, t) in templates.iter().enumerate() {
            w[(row, k)] = t[(r, c)];
        }
        rhs[row] = if c >= d {
            f2.z2[(r, c - d)]
        } else {
            f2.z1_diag[r]
        };
    }

    // λ̄_1 z̄_12 + λ̄_2 z̄_21 = c̄, scaled to velocity units.
    let mut row = selected.len();
    let c2 = f2.offdiag_constraints[0];
    let s2 = f2.lambda[0].hypot(f2.lambda[1]);
    for (k, t) in templates.iter().enumerate() {
        w[(row, k)] = (f2.lambda[0] * t[(0, 1)] + f2.lambda[1] * t[(1, 0)]) / s2;
    }
    rhs[row] = c2.value / s2;
    row += 1;

    // λ_1 u1 + λ_2 u2 = c, multiplied through by h1 and by h2.
    let c0 = f0.offdiag_constraints[0];
    let s0 = f0.lambda[0].hypot(f0.lambda[1]);
    let (l1, l2, cv) = (f0.lambda[0] / s0, f0.lambda[1] / s0, c0.value / s0);
    w[(row, 0)] = -cv;
    w[(row, 2)] = l1;
    w[(row, 3)] = l2;
    row += 1;
    w[(row, 1)] = -cv;
    w[(row, 4)] = l1;
    w[(row, 5)] = l2;

    let (uw, sw, vw) = sorted_svd(&w);
    let smax = sw[0];
    let rank = sw.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < BASIS_LEN {
        return Err(Error::NonUniqueSolution {
            rank,
            cols: BASIS_LEN,
        });
    }
    let coords = uw.transpose() * &rhs;
    let mut phi_v = Vector::zeros(BASIS_LEN);
    for k in 0..BASIS_LEN {
        phi_v += vw.column(k) * (coords[k] / sw[k]);
    }
    let phi: [f64; BASIS_LEN] = std::array::from_fn(|k| phi_v[k]);
    let residual = (&w * &phi_v - &rhs).norm();

    let hn = phi[0].hypot(phi[1]);
    if hn < 1e-8 {
        return Err(Error::DegenerateRotation(hn));
    }
    let h = [phi[0] / hn, phi[1] / hn];
    let u = [h[0] * phi[2] + h[1] * phi[4], h[0] * phi[3] + h[1] * phi[5]];
    let on_manifold = Vector::from_vec(vec![
        h[0],
        h[1],
        h[0] * u[0],
        h[0] * u[1],
        h[1] * u[0],
        h[1] * u[1],
    ]);
    let manifold_residual = (&w * on_manifold - &rhs).norm();

    Ok(BasisSystem {
        selected,
        constraint_rows,
        w,
        rhs,
        phi,
        h,
        u,
        residual,
        manifold_residual,
        rank,
    })
}

/// `X = U Z Vᵀ` with the free off-diagonals of `Z_1` set to `u`.
pub fn recover_velocity(f0: &ChuFactors, u: [f64; 2]) -> Matrix {
    let mut z = f0.known_z();
    if f0.dim() >= 2 {
        z[(0, 1)] = u[0];
        z[(1, 0)] = u[1];
    }
    &f0.u * z * f0.v.transpose()
}

/// Minimum-norm off-diagonals satisfying `λ_1 u1 + λ_2 u2 = c` alone.
fn min_norm_offdiag(f0: &ChuFactors) -> [f64; 2] {
    let c = f0.offdiag_constraints[0].value;
    let (l1, l2) = (f0.lambda[0], f0.lambda[1]);
    let s = l1 * l1 + l2 * l2;
    [c * l1 / s, c * l2 / s]
}

/// Velocity and acceleration-frame rotation from the two Lyapunov-like
/// relations, shared by both pipelines.
pub(crate) struct FrameSolution {
    pub y1: Matrix,
    /// Orthogonal map with `Y2 = frame * factor`.
    pub frame: Matrix,
    pub residuals: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

pub(crate) fn solve_velocity_and_frame(
    b1: &Matrix,
    y0: &Matrix,
    b3_twice: &Matrix,
    factor: &Matrix,
    negligible_accel: bool,
) -> Result<FrameSolution> {
    let mut warnings = Vec::new();
    let mut residuals = Vec::new();
    let f0 = chu_decompose(b1, y0).map_err(Error::at("chu split of B1"))?;
    residuals.push((
        "chu_position".to_string(),
        relative(f0.consistency_residual, f0.bbar.norm()),
    ));
    if f0.repeated_singular_values {
        warnings.push("position factor has repeated singular values".into());
    }

    let fallback = |mut warnings: Vec<String>, residuals, reason: String| {
        warnings.push(format!(
            "{reason}; velocity uses the minimum-norm solution and the frame rotation is identity"
        ));
        FrameSolution {
            y1: recover_velocity(&f0, min_norm_offdiag(&f0)),
            frame: Matrix::identity(2, 2),
            residuals,
            warnings,
        }
    };
    if negligible_accel {
        return Ok(fallback(
            warnings,
            residuals,
            "acceleration is negligible over the observation window".into(),
        ));
    }

    // Try the factor as returned by MDS and with its reflection ambiguity
    // flipped; only one admits a proper rotation.
    let mut flip = Matrix::identity(2, 2);
    flip[(0, 0)] = -1.0;
    let mut best: Option<(bool, ChuFactors, BasisSystem)> = None;
    let mut last_err = None;
    for reflected in [false, true] {
        let candidate = if reflected {
            &flip * factor
        } else {
            factor.clone()
        };
        let attempt = chu_decompose(b3_twice, &candidate)
            .map_err(Error::at("chu split of 2B3"))
            .and_then(|f2| {
                build_and_solve_basis(&f0, &f2)
                    .map_err(Error::at("basis solve"))
                    .map(|b| (f2, b))
            });
        match attempt {
            Ok((f2, basis)) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, _, b)| basis.manifold_residual < b.manifold_residual);
                if better {
                    best = Some((reflected, f2, basis));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }

    let Some((reflected, f2, basis)) = best else {
        let err = last_err.expect("at least one attempt");
        let degenerate = matches!(
            &err,
            Error::Stage { source, .. } if matches!(**source, Error::DegenerateGeometry(_))
        );
        if !degenerate {
            return Err(err);
        }
        return Ok(fallback(
            warnings,
            residuals,
            format!("acceleration factor is degenerate ({err})"),
        ));
    };

    if f2.repeated_singular_values {
        warnings.push("acceleration factor has repeated singular values".into());
    }
    residuals.push((
        "chu_acceleration".to_string(),
        relative(f2.consistency_residual, f2.bbar.norm()),
    ));
    residuals.push(("basis".to_string(), basis.relative_residual()));

    let y1 = recover_velocity(&f0, basis.u);
    let mut frame = basis.rotation().transpose();
    if reflected {
        frame *= &flip;
    }
    Ok(FrameSolution {
        y1,
        frame,
        residuals,
        warnings,
    })
}

/// Residuals of `B_1 = Y0ᵀY1 + Y1ᵀY0` and `2B_3 = Y2ᵀY1 + Y1ᵀY2`.
pub(crate) fn lyapunov_residuals(
    b1: &Matrix,
    b3_twice: &Matrix,
    y0: &Matrix,
    y1: &Matrix,
    y2: &Matrix,
) -> [(String, f64); 2] {
    let sym = |a: &Matrix, b: &Matrix| a.transpose() * b + b.transpose() * a;
    [
        (
            "lyapunov_position".to_string(),
            relative((b1 - sym(y0, y1)).norm(), b1.norm()),
        ),
        (
            "lyapunov_acceleration".to_string(),
            relative((b3_twice - sym(y2, y1)).norm(), b3_twice.norm()),
        ),
    ]
}

pub(crate) fn check_planar(meas: &MeasurementSet, dim: usize, min_samples: usize) -> Result<()> {
    if dim != 2 {
        return Err(Error::InvalidDimension(format!(
            "kinematics recovery is implemented for D = 2, got {dim}"
        )));
    }
    if meas.timestamps.len() < min_samples {
        return Err(Error::InvalidDimension(format!(
            "need at least {min_samples} samples, got {}",
            meas.timestamps.len()
        )));
    }
    if meas.nodes() < 4 {
        return Err(Error::InvalidDimension(format!(
            "need at least 4 nodes, got {}",
            meas.nodes()
        )));
    }
    meas.validate()
}

/// True when the acceleration term `¼ Y2ᵀY2 t⁴` stays below the numerical
/// floor of the position Grammian over the whole window.
pub(crate) fn acceleration_negligible(factor: &Matrix, b0: &Matrix, timestamps: &[f64]) -> bool {
    let t = timestamps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    0.25 * factor.norm_squared() * t.powi(4) <= 1e-10 * b0.norm()
}

/// Relative position, velocity and acceleration from EDMs only.
pub fn estimate_from_distances(meas: &MeasurementSet, dim: usize) -> Result<KinematicEstimate> {
    check_planar(meas, dim, CONSTANT_ACCEL_DEGREE + 1)?;
    let grams = grams_from_edms(&meas.edms).map_err(Error::at("double centering"))?;
    let coeffs = fit_gram_coeffs(&grams, &meas.timestamps, CONSTANT_ACCEL_DEGREE)
        .map_err(Error::at("Grammian fit"))?;
    let (pos, acc) = recover_position_acceleration(&coeffs, dim).map_err(Error::at("MDS"))?;

    let mut warnings = Vec::new();
    if pos.degenerate {
        warnings.push("position Grammian has fewer than D positive eigenvalues".into());
    }
    if acc.degenerate {
        warnings.push("acceleration Grammian has fewer than D positive eigenvalues".into());
    }
    let b1 = coeffs.block(1)?.clone();
    let b3_twice = coeffs.block(3)? * 2.0;
    let negligible =
        acc.degenerate || acceleration_negligible(&acc.points, coeffs.block(0)?, &meas.timestamps);
    let sol = solve_velocity_and_frame(&b1, &pos.points, &b3_twice, &acc.points, negligible)?;
    // A negligible acceleration factor is MDS of noise; report zero instead.
    let y2 = if negligible {
        Matrix::zeros(acc.points.nrows(), acc.points.ncols())
    } else {
        &sol.frame * &acc.points
    };

    let mut residuals = vec![("gram_fit".to_string(), coeffs.residual)];
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
        method: Method::Distance,
        y0: pos.points,
        y1: sol.y1,
        y2,
        rotation: sol.frame,
        coefficients: coeffs,
        residuals,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{angle_2d, orthogonal_procrustes, rotation_2d};
    use crate::sim::{simulate_measurements, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force Grammian coefficients of a constant-acceleration
    /// trajectory, written out term by term.
    fn expanded_blocks(y0: &Matrix, y1: &Matrix, y2: &Matrix) -> Vec<Matrix> {
        vec![
            y0.transpose() * y0,
            y0.transpose() * y1 + y1.transpose() * y0,
            y1.transpose() * y1 + (y0.transpose() * y2 + y2.transpose() * y0) * 0.5,
            (y1.transpose() * y2 + y2.transpose() * y1) * 0.5,
            y2.transpose() * y2 * 0.25,
        ]
    }

    fn centered_scenario() -> PolynomialTrajectory {
        PolynomialTrajectory::benchmark_scenario().centered()
    }

    fn exact_grams(traj: &PolynomialTrajectory, ts: &[f64]) -> Vec<Vector> {
        ts.iter()
            .map(|&t| {
                let x = traj.eval(t, 0).unwrap();
                vech(&(x.transpose() * &x)).unwrap()
            })
            .collect()
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        relative((a - b).norm(), b.norm())
    }

    #[test]
    fn gram_fit_reproduces_expanded_blocks() {
        let traj = centered_scenario();
        let ts = SimConfig::default().timestamps();
        let coeffs = fit_gram_coeffs(&exact_grams(&traj, &ts), &ts, 4).unwrap();
        let y = traj.coeffs();
        let oracle = expanded_blocks(&y[0], &y[1], &y[2]);
        let scale = oracle[0].norm();
        for (l, (b, o)) in coeffs.blocks.iter().zip(&oracle).enumerate() {
            // tiny blocks are compared against the dominant scale
            let err = (b - o).norm() / o.norm().max(1e-6 * scale);
            assert!(err < 1e-8, "B{l}: {err}");
        }
        assert!((&coeffs.blocks[4] - y[2].transpose() * &y[2] * 0.25).norm() < 1e-8);
    }

    #[test]
    fn analytic_blocks_match_expansion() {
        let traj = centered_scenario();
        let y = traj.coeffs();
        for (a, o) in analytic_blocks(&traj, 4)
            .iter()
            .zip(expanded_blocks(&y[0], &y[1], &y[2]))
        {
            assert!((a - &o).norm() <= 1e-12 * o.norm().max(1.0));
        }
    }

    #[test]
    fn static_network_has_only_constant_block() {
        let traj =
            PolynomialTrajectory::new(vec![centered_scenario().coeffs()[0].clone()]).unwrap();
        let ts = SimConfig::default().timestamps();
        let coeffs = fit_gram_coeffs(&exact_grams(&traj, &ts), &ts, 4).unwrap();
        let b0 = &traj.coeffs()[0].transpose() * &traj.coeffs()[0];
        assert!(rel_err(&coeffs.blocks[0], &b0) < 1e-12);
        for b in &coeffs.blocks[1..] {
            assert!(b.norm() < 1e-9 * b0.norm());
        }
    }

    #[test]
    fn minimal_sample_count_interpolates() {
        let traj = centered_scenario();
        let ts = [-5.0, -2.5, 0.0, 2.5, 5.0];
        let coeffs = fit_gram_coeffs(&exact_grams(&traj, &ts), &ts, 4).unwrap();
        assert!(coeffs.residual < 1e-14);
    }

    #[test]
    fn repeated_timestamps_are_singular() {
        let traj = centered_scenario();
        let ts = [0.0, 1.0, 1.0, 2.0, 2.0, 0.0];
        let grams = exact_grams(&traj, &ts);
        assert!(matches!(
            fit_gram_coeffs(&grams, &ts, 4),
            Err(Error::SingularDesign(_))
        ));
        assert!(matches!(
            fit_gram_coeffs(&grams[..3], &ts[..3], 4),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn mds_recovers_position_and_acceleration() {
        let traj = centered_scenario();
        let y = traj.coeffs();
        let coeffs = GrammianCoefficients {
            blocks: analytic_blocks(&traj, 4),
            residual: 0.0,
        };
        let (pos, acc) = recover_position_acceleration(&coeffs, 2).unwrap();
        assert!(rel_err(&(pos.points.transpose() * &pos.points), &coeffs.blocks[0]) < 1e-8);
        let r = orthogonal_procrustes(&pos.points, &y[0]).unwrap();
        assert!((&r.rotation * &pos.points - &y[0]).norm() <= 1e-6);
        let g2 = y[2].transpose() * &y[2];
        assert!(rel_err(&(acc.points.transpose() * &acc.points), &g2) < 1e-6);
        for p in [&pos.points, &acc.points] {
            assert!(p.column_sum().amax() < 1e-6);
        }
    }

    #[test]
    fn zero_b4_gives_zero_acceleration_with_warning() {
        let traj = PolynomialTrajectory::new(centered_scenario().coeffs()[..2].to_vec()).unwrap();
        let coeffs = GrammianCoefficients {
            blocks: analytic_blocks(&traj, 4),
            residual: 0.0,
        };
        let (_, acc) = recover_position_acceleration(&coeffs, 2).unwrap();
        assert!(acc.degenerate);
        assert_eq!(acc.points, Matrix::zeros(2, 10));
    }

    #[test]
    fn chu_identity_lambda() {
        let n = 5;
        let mut y = Matrix::zeros(2, n);
        y[(0, 0)] = 1.0;
        y[(1, 1)] = 1.0;
        let (a, b, c) = (0.7, -1.3, 0.4);
        let mut bhat = Matrix::zeros(n, n);
        bhat[(0, 0)] = 2.0 * a;
        bhat[(1, 1)] = 2.0 * b;
        bhat[(0, 1)] = c;
        bhat[(1, 0)] = c;
        let f = chu_decompose(&bhat, &y).unwrap();
        assert!((f.lambda[0] - 1.0).abs() < 1e-12 && (f.lambda[1] - 1.0).abs() < 1e-12);
        assert!((f.z1_diag[0] - a).abs() < 1e-12);
        assert!((f.z1_diag[1] - b).abs() < 1e-12);
        assert!((f.offdiag_constraints[0].value.abs() - c).abs() < 1e-12);
        assert!(f.repeated_singular_values);
        assert!(f.consistency_residual < 1e-12);
    }

    #[test]
    fn chu_zero_b() {
        let traj = centered_scenario();
        let f = chu_decompose(&Matrix::zeros(10, 10), &traj.coeffs()[0]).unwrap();
        assert!(f.z2.amax() == 0.0);
        assert!(f.z1_diag.iter().all(|&z| z == 0.0));
        assert_eq!(f.consistency_residual, 0.0);
        let uu = f.v.transpose() * &f.v;
        assert!((uu - Matrix::identity(10, 10)).amax() < 1e-10);
    }

    #[test]
    fn chu_rejects_rank_deficient_factor() {
        let y = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
        assert!(matches!(
            chu_decompose(&Matrix::zeros(4, 4), &y),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn chu_knowns_match_true_velocity() {
        let traj = centered_scenario();
        let y = traj.coeffs();
        let blocks = analytic_blocks(&traj, 4);
        let pos = classical_mds(&blocks[0], 2).unwrap().points;
        // velocity expressed in the MDS frame
        let r = orthogonal_procrustes(&pos, &y[0]).unwrap().rotation;
        let y1 = r.transpose() * &y[1];
        let f = chu_decompose(&blocks[1], &pos).unwrap();
        let z_true = f.u.transpose() * &y1 * &f.v;
        let mut lam = Matrix::zeros(10, 2);
        lam[(0, 0)] = f.lambda[0];
        lam[(1, 1)] = f.lambda[1];
        let recon = &lam * &z_true + z_true.transpose() * lam.transpose();
        assert!((&recon - &f.bbar).norm() <= 1e-7 * f.bbar.norm());
        assert!((z_true.columns(2, 8) - &f.z2).amax() < 1e-7);
        assert!((z_true[(0, 0)] - f.z1_diag[0]).abs() < 1e-7);
        let c = f.offdiag_constraints[0].value;
        let lhs = f.lambda[0] * z_true[(0, 1)] + f.lambda[1] * z_true[(1, 0)];
        assert!((lhs - c).abs() < 1e-7 * c.abs().max(1.0));
        assert!(f.consistency_residual < 1e-7 * f.bbar.norm());
        // and the velocity is reassembled from the true off-diagonals
        let back = recover_velocity(&f, [z_true[(0, 1)], z_true[(1, 0)]]);
        assert!((back - &y1).amax() < 1e-9 * y1.amax().max(1.0) + 1e-9);
    }

    #[test]
    fn recover_velocity_trivial_cases() {
        let traj = centered_scenario();
        let f = chu_decompose(&Matrix::zeros(10, 10), &traj.coeffs()[0]).unwrap();
        assert_eq!(recover_velocity(&f, [0.0, 0.0]).amax(), 0.0);
        let mut g = f.clone();
        g.z1_diag = vec![2.0, -1.0];
        let y1 = recover_velocity(&g, [0.0, 0.0]);
        let mut z = Matrix::zeros(2, 10);
        z[(0, 0)] = 2.0;
        z[(1, 1)] = -1.0;
        assert!((y1 - &g.u * z * g.v.transpose()).amax() < 1e-15);
    }

    /// Random centered planar constant-acceleration trajectory.
    fn random_instance(rng: &mut impl Rng, n: usize) -> PolynomialTrajectory {
        let mk = |rng: &mut dyn rand::RngCore, s: f64| {
            Matrix::from_fn(2, n, |_, _| rng.random_range(-s..s))
        };
        PolynomialTrajectory::new(vec![mk(rng, 1000.0), mk(rng, 10.0), mk(rng, 1.0)])
            .unwrap()
            .centered()
    }

    /// Position factor from MDS and acceleration factor `P Y2` for an
    /// arbitrary orthogonal `P`; returns `(pos, acc_factor, true H)` where
    /// `H` maps the factor into the position frame.
    fn factors(traj: &PolynomialTrajectory, p: &Matrix) -> (Matrix, Matrix, Matrix) {
        let y = traj.coeffs();
        let blocks = analytic_blocks(traj, 4);
        let pos = classical_mds(&blocks[0], 2).unwrap().points;
        let a = orthogonal_procrustes(&pos, &y[0]).unwrap().rotation; // y0 ≈ a pos
        let acc = p * &y[2];
        // y2 in the position frame is aᵀ y2 = aᵀ pᵀ acc
        (pos, acc, a.transpose() * p.transpose())
    }

    #[test]
    fn identity_rotation_gives_trivial_phi() {
        let traj = centered_scenario();
        let y = traj.coeffs();
        let blocks = analytic_blocks(&traj, 4);
        // use the truth itself as the position factor so H = I
        let f0 = chu_decompose(&blocks[1], &y[0]).unwrap();
        let f2 = chu_decompose(&(&blocks[3] * 2.0), &y[2]).unwrap();
        let basis = build_and_solve_basis(&f0, &f2).unwrap();
        let z = f0.u.transpose() * &y[1] * &f0.v;
        let expect = [1.0, 0.0, z[(0, 1)], z[(1, 0)], 0.0, 0.0];
        for (a, b) in basis.phi.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{:?} vs {expect:?}", basis.phi);
        }
        assert_eq!(basis.w.shape(), (2 * 10 - 2 + basis.constraint_rows, 6));
        assert_eq!(basis.selected.len(), 2 * 10 - 2);
        assert_eq!(basis.rank, 6);
    }

    #[test]
    fn basis_recovers_rotation_for_scenario() {
        let traj = centered_scenario();
        let blocks = analytic_blocks(&traj, 4);
        let p = rotation_2d(1.1);
        let (pos, acc, h_true) = factors(&traj, &p);
        let sol =
            solve_velocity_and_frame(&blocks[1], &pos, &(&blocks[3] * 2.0), &acc, false).unwrap();
        let err = angle_2d(&(&sol.frame * h_true.transpose())).abs();
        assert!(err <= 1e-6, "angle error {err}");
        assert!((sol.frame.determinant() - h_true.determinant()).abs() < 1e-9);
        let basis = sol.residuals.iter().find(|(n, _)| n == "basis").unwrap().1;
        assert!(basis <= 1e-8, "basis residual {basis}");
    }

    #[test]
    fn basis_residual_vanishes_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for i in 0..100 {
            let traj = random_instance(&mut rng, 10);
            let blocks = analytic_blocks(&traj, 4);
            let mut p = rotation_2d(rng.random_range(-3.1..3.1));
            if i % 2 == 1 {
                p.row_mut(0).neg_mut();
            }
            let (pos, acc, h_true) = factors(&traj, &p);
            let sol = solve_velocity_and_frame(&blocks[1], &pos, &(&blocks[3] * 2.0), &acc, false)
                .unwrap();
            let basis = sol.residuals.iter().find(|(n, _)| n == "basis").unwrap().1;
            assert!(basis <= 1e-7, "instance {i}: residual {basis}");
            let err = (&sol.frame - &h_true).amax();
            assert!(err < 1e-6, "instance {i}: frame error {err}");
        }
    }

    #[test]
    fn basis_rejects_small_networks() {
        let y0 = Matrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0]);
        let f = chu_decompose(&Matrix::zeros(3, 3), &y0).unwrap();
        assert!(matches!(
            build_and_solve_basis(&f, &f),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn zero_velocity_and_rotation_data_is_degenerate() {
        // With B1 = B3 = 0 the rotation columns of W vanish.
        let traj = centered_scenario();
        let y = traj.coeffs();
        let f0 = chu_decompose(&Matrix::zeros(10, 10), &y[0]).unwrap();
        let f2 = chu_decompose(&Matrix::zeros(10, 10), &y[2]).unwrap();
        assert!(matches!(
            build_and_solve_basis(&f0, &f2),
            Err(Error::NonUniqueSolution { .. } | Error::DegenerateRotation(_))
        ));
    }

    #[test]
    fn noiseless_pipeline_matches_truth() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = SimConfig {
            k: 20,
            sigma_d: 0.0,
            sigma_a: 0.0,
            ..SimConfig::default()
        };
        let meas = simulate_measurements(&cfg, &traj).unwrap();
        let est = estimate_from_distances(&meas, 2).unwrap();
        let truth = traj.centered();
        let y = truth.coeffs();
        let stacked_est = concat(&[&est.y0, &est.y1, &est.y2]);
        let stacked_true = concat(&[&y[0], &y[1], &y[2]]);
        let r = orthogonal_procrustes(&stacked_est, &stacked_true)
            .unwrap()
            .rotation;
        for (e, t) in est.blocks().iter().zip(y) {
            let err = rel_err(&(&r * *e), t);
            assert!(err <= 1e-6, "relative error {err}");
        }
        assert!(est.max_residual() <= 1e-6, "{:?}", est.residuals);
        for b in est.blocks() {
            for row in 0..2 {
                assert!(b.row(row).sum().abs() < 1e-6);
            }
        }
        let rtr = est.rotation.transpose() * &est.rotation;
        assert!((rtr - Matrix::identity(2, 2)).amax() < 1e-8);
    }

    fn concat(blocks: &[&Matrix]) -> Matrix {
        let d = blocks[0].nrows();
        let total: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = Matrix::zeros(d, total);
        let mut c = 0;
        for b in blocks {
            out.columns_mut(c, b.ncols()).copy_from(*b);
            c += b.ncols();
        }
        out
    }

    #[test]
    fn static_network_gives_zero_rates() {
        let y0 = PolynomialTrajectory::benchmark_scenario().coeffs()[0].clone();
        let traj = PolynomialTrajectory::new(vec![y0]).unwrap();
        let cfg = SimConfig {
            k: 10,
            sigma_d: 0.0,
            sigma_a: 0.0,
            ..SimConfig::default()
        };
        let meas = simulate_measurements(&cfg, &traj).unwrap();
        let est = estimate_from_distances(&meas, 2).unwrap();
        let b0 = &est.coefficients.blocks[0];
        let mds = classical_mds(b0, 2).unwrap().points;
        assert!((&est.y0 - mds).amax() < 1e-9);
        assert!(est.y1.amax() < 1e-6, "{}", est.y1.amax());
        assert!(est.y2.amax() < 1e-6);
        assert!(!est.warnings.is_empty());
    }

    #[test]
    fn distance_scaling_keeps_rotation() {
        let traj = PolynomialTrajectory::benchmark_scenario();
        let cfg = SimConfig {
            k: 20,
            sigma_d: 0.0,
            sigma_a: 0.0,
            ..SimConfig::default()
        };
        let s = 3.0;
        let a = simulate_measurements(&cfg, &traj).unwrap();
        let mut b = a.clone();
        for e in &mut b.edms {
            *e *= s * s;
        }
        let ga = fit_gram_coeffs(&grams_from_edms(&a.edms).unwrap(), &a.timestamps, 4).unwrap();
        let gb = fit_gram_coeffs(&grams_from_edms(&b.edms).unwrap(), &b.timestamps, 4).unwrap();
        let run = |c: &GrammianCoefficients| {
            let (pos, acc) = recover_position_acceleration(c, 2).unwrap();
            let f0 = chu_decompose(c.block(1).unwrap(), &pos.points).unwrap();
            let f2 = chu_decompose(&(c.block(3).unwrap() * 2.0), &acc.points).unwrap();
            build_and_solve_basis(&f0, &f2).unwrap()
        };
        let (ba, bb) = (run(&ga), run(&gb));
        assert!((ba.h[0] - bb.h[0]).abs() < 1e-9 && (ba.h[1] - bb.h[1]).abs() < 1e-9);
        // Z = Uᵀ Y1 V scales with the distances
        for i in 0..2 {
            assert!((bb.u[i] / ba.u[i] - s).abs() < 1e-6 * s);
        }
    }
}
