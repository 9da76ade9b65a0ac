//! Dense linear-algebra helpers for the distance-matrix / Grammian pipeline.
//!
//! Conventions used throughout the crate:
//!
//! * point sets are `D x N` matrices, one column per node;
//! * EDM entries are *squared* distances;
//! * half-vectorization stacks the lower triangle column by column
//!   (column `j`, rows `j..N`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigen- or singular-pairs, sorted by descending value.
#[derive(Debug, Clone)]
pub struct SpectralFactor {
    pub values: Vec<f64>,
    /// Unit-norm columns, one per value.
    pub vectors: Matrix,
}

/// Output of [`classical_mds`].
#[derive(Debug, Clone)]
pub struct Embedding {
    /// `D x N` coordinates, `Λ^{1/2} Vᵀ`.
    pub points: Matrix,
    /// Top-`D` eigenpairs of the input before clamping.
    pub spectrum: SpectralFactor,
    /// Set when fewer than `D` strictly positive eigenvalues were available.
    pub degenerate: bool,
}

/// Output of [`orthogonal_procrustes`].
#[derive(Debug, Clone)]
pub struct Alignment {
    pub rotation: Matrix,
    /// False when `B Aᵀ` is rank deficient, in which case other minimizers exist.
    pub unique: bool,
}

/// `I_N - (1/N) 1 1ᵀ`.
pub fn centering_matrix(n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidDimension(
            "centering matrix needs N >= 1".into(),
        ));
    }
    let inv = 1.0 / n as f64;
    Ok(Matrix::from_fn(
        n,
        n,
        |i, j| {
            if i == j {
                1.0 - inv
            } else {
                -inv
            }
        },
    ))
}

/// Length of the half-vectorization of an `n x n` matrix.
pub const fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Half-vectorization. The input is symmetrized by averaging first.
pub fn vech(m: &Matrix) -> Result<Vector> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "vech needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut out = Vector::zeros(vech_len(n));
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            out[idx] = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            };
            idx += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`vech`].
pub fn unvech(v: &[f64]) -> Result<Matrix> {
    let n = triangular_root(v.len()).ok_or_else(|| {
        Error::InvalidDimension(format!("{} is not a triangular number", v.len()))
    })?;
    let mut m = Matrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    Ok(m)
}

fn triangular_root(len: usize) -> Option<usize> {
    // n(n+1)/2 = len  =>  n = (sqrt(8 len + 1) - 1) / 2
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (vech_len(n) == len).then_some(n)
}

/// Squared pairwise distances between the columns of `x`.
pub fn edm_from_points(x: &Matrix) -> Matrix {
    let n = x.ncols();
    let mut edm = Matrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let d2: f64 = x
                .column(i)
                .iter()
                .zip(x.column(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            edm[(i, j)] = d2;
            edm[(j, i)] = d2;
        }
    }
    edm
}

/// Double centering, `-1/2 C D C`.
pub fn gram_from_edm(edm: &Matrix) -> Result<Matrix> {
    let n = edm.nrows();
    if edm.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "EDM must be square, got {}x{}",
            edm.nrows(),
            edm.ncols()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    // Row/column/grand means avoid the two dense products.
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n).map(|i| edm.row(i).sum() / nf).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| edm.column(j).sum() / nf).collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    let mut g = Matrix::from_fn(n, n, |i, j| {
        -0.5 * (edm[(i, j)] - row_mean[i] - col_mean[j] + grand)
    });
    symmetrize(&mut g);
    Ok(g)
}

pub(crate) fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Full symmetric eigendecomposition sorted by descending eigenvalue, with
/// each eigenvector's largest-magnitude entry made positive.
pub fn sorted_symmetric_eigen(g: &Matrix) -> SpectralFactor {
    let mut sym = g.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = g.nrows();
    let mut vectors = Matrix::zeros(n, order.len());
    let mut values = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).clone_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    SpectralFactor { values, vectors }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Rank-`dim` classical MDS: `Λ^{1/2} Vᵀ` from the `dim` algebraically
/// largest eigenpairs of `g`. Negative eigenvalues among those are clamped to
/// zero and flag the result as degenerate.
pub fn classical_mds(g: &Matrix, dim: usize) -> Result<Embedding> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "Grammian must be square, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if dim == 0 || dim > n {
        return Err(Error::InvalidDimension(format!(
            "cannot embed {n} points in {dim} dimensions"
        )));
    }
    let full = sorted_symmetric_eigen(g);
    let scale = full.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = if scale > 0.0 { 1e-12 * scale } else { 0.0 };

    let mut degenerate = false;
    let mut points = Matrix::zeros(dim, n);
    for d in 0..dim {
        let lambda = full.values[d];
        if lambda <= floor {
            degenerate = true;
        }
        let s = lambda.max(0.0).sqrt();
        for j in 0..n {
            points[(d, j)] = s * full.vectors[(j, d)];
        }
    }
    let spectrum = SpectralFactor {
        values: full.values[..dim].to_vec(),
        vectors: full.vectors.columns(0, dim).clone_owned(),
    };
    Ok(Embedding {
        points,
        spectrum,
        degenerate,
    })
}

/// Thin SVD of `m` sorted by descending singular value. Returns
/// `(U, σ, V)` with `m = U diag(σ) Vᵀ`, `U` being `r x k` and `V` `c x k`,
/// `k = min(r, c)`.
pub fn sorted_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (u, s, v_t) = accurate_svd(m);
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut us = Matrix::zeros(u.nrows(), k);
    let mut vs = Matrix::zeros(v_t.ncols(), k);
    let mut sorted = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &v_t.row(src).transpose());
        sorted.push(s[src]);
    }
    (us, sorted, vs)
}

/// Thin SVD through faer. nalgebra's bidiagonal SVD was found to return
/// factors that do not reproduce the input for some well-conditioned
/// matrices, which silently corrupts the least-squares solves downstream.
fn accurate_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return (Matrix::zeros(r, 0), Vec::new(), Matrix::zeros(0, c));
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    (
        Matrix::from_fn(r, k, |i, j| u[(i, j)]),
        (0..k).map(|i| s[i]).collect(),
        Matrix::from_fn(k, c, |i, j| v[(j, i)]),
    )
}

/// `R ∈ O(D)` minimizing `‖R A − B‖_F`.
pub fn orthogonal_procrustes(a: &Matrix, b: &Matrix) -> Result<Alignment> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidDimension(format!(
            "procrustes inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let cross = b * a.transpose();
    let (u, s, v) = sorted_svd(&cross);
    let top = s.first().copied().unwrap_or(0.0);
    let unique = top > 0.0 && s.iter().all(|&x| x > 1e-12 * top);
    Ok(Alignment {
        rotation: u * v.transpose(),
        unique,
    })
}

/// Orthonormal basis of the orthogonal complement of the columns of `basis`
/// (assumed orthonormal), as an `n x (n - k)` matrix.
pub(crate) fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let n = basis.nrows();
    let k = basis.ncols();
    // Householder QR of [basis | I]: the leading k columns of Q span the
    // basis, the rest complete it to an orthonormal frame.
    let mut augmented = Matrix::zeros(n, n + k);
    augmented.columns_mut(0, k).copy_from(basis);
    augmented
        .columns_mut(k, n)
        .copy_from(&Matrix::identity(n, n));
    let q = augmented.qr().q();
    q.columns(k, n - k).clone_owned()
}

/// 2-D rotation by `angle` radians.
pub fn rotation_2d(angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Rotation angle of a 2x2 orthogonal matrix's rotational part, in `(-π, π]`.
pub fn angle_2d(r: &Matrix) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}
