//! Small dense helpers shared by the tensor ops and the analysis code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Moore-Penrose pseudoinverse of a complex matrix with the usual
/// `max(m, n) * eps * sigma_max` singular value cutoff.
///
/// Goes through the Hermitian eigendecomposition of the smaller Gram matrix:
/// nalgebra's bidiagonal SVD is unreliable for complex inputs, while its
/// Hermitian eigensolver is not.
pub fn pinv_c(m: &CMat) -> CMat {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return CMat::zeros(cols, rows);
    }
    let tall = cols <= rows;
    let g = if tall { m.adjoint() * m } else { m * m.adjoint() };
    let (vals, vecs) = hermitian_eigen(&g);
    let lmax = vals.max().max(0.0);
    // squaring puts the numerical-zero floor at eps * lambda_max, i.e. at
    // sqrt(eps) * sigma_max on the singular value scale
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * lmax;
    // G = Q diag(sigma^2) Q^H; A+ = Q diag(1/sigma^2) Q^H A^H (tall)
    // or A+ = A^H Q diag(1/sigma^2) Q^H (wide), zeros below the cutoff
    let mut scaled = vecs.clone();
    for p in 0..vals.len() {
        let lam = vals[p];
        let w = if lam > cutoff { 1.0 / lam } else { 0.0 };
        scaled.column_mut(p).scale_mut(w);
    }
    let core = scaled * vecs.adjoint();
    if tall {
        core * m.adjoint()
    } else {
        m.adjoint() * core
    }
}

/// Pseudoinverse of a real matrix, same Gram-eigendecomposition route and
/// cutoff rule as [`pinv_c`].
pub fn pinv_r(m: &RMat) -> RMat {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return RMat::zeros(cols, rows);
    }
    let tall = cols <= rows;
    let g = if tall { m.transpose() * m } else { m * m.transpose() };
    let sym = (&g + g.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.max().max(0.0);
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * lmax;
    let mut scaled = eig.eigenvectors.clone();
    for p in 0..eig.eigenvalues.len() {
        let lam = eig.eigenvalues[p];
        let w = if lam > cutoff { 1.0 / lam } else { 0.0 };
        scaled.column_mut(p).scale_mut(w);
    }
    let core = scaled * eig.eigenvectors.transpose();
    if tall {
        core * m.transpose()
    } else {
        m.transpose() * core
    }
}

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized first
/// so that tiny round-off asymmetries do not leak into the result.
pub fn hermitian_eigen(m: &CMat) -> (DVector<f64>, CMat) {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn lambda_min_hermitian(m: &CMat) -> f64 {
    hermitian_eigen(m).0.min()
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn lambda_min_symmetric(m: &RMat) -> f64 {
    let h = (m + m.transpose()).scale(0.5);
    h.symmetric_eigen().eigenvalues.min()
}

/// Smallest *positive* eigenvalue of a Hermitian PSD matrix, with a
/// `dim * eps * lambda_max` cutoff separating numerical zeros.
pub fn lambda_min_plus(m: &CMat) -> Option<f64> {
    let (vals, _) = hermitian_eigen(m);
    let lmax = vals.max().max(0.0);
    let cutoff = m.nrows() as f64 * f64::EPSILON * lmax;
    vals.iter()
        .copied()
        .filter(|&l| l > cutoff)
        .fold(None, |acc: Option<f64>, l| {
            Some(acc.map_or(l, |a| a.min(l)))
        })
}

/// Factor `F` with `F * F^H = G^+` for a Hermitian PSD `G`, built from the
/// eigendecomposition so rank-deficient Grams are handled uniformly.
pub fn psd_pinv_factor(g: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(g);
    let lmax = vals.max().max(0.0);
    let cutoff = g.nrows() as f64 * f64::EPSILON * lmax;
    let mut f = vecs;
    for p in 0..vals.len() {
        let s = if vals[p] > cutoff {
            1.0 / vals[p].sqrt()
        } else {
            0.0
        };
        f.column_mut(p).scale_mut(s);
    }
    f
}

/// Hermitian square root (and friends) of a PSD matrix; `power` is applied to
/// the eigenvalues, with numerical zeros clamped to zero for negative powers.
pub fn hermitian_power(m: &CMat, power: f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let lmax = vals.max().max(0.0);
    let cutoff = m.nrows() as f64 * f64::EPSILON * lmax;
    let mut d = DVector::zeros(vals.len());
    for p in 0..vals.len() {
        let l = vals[p];
        d[p] = if l > cutoff {
            l.powf(power)
        } else if power >= 0.0 {
            l.max(0.0).powf(power)
        } else {
            0.0
        };
    }
    let mut scaled = vecs.clone();
    for p in 0..vals.len() {
        scaled.column_mut(p).scale_mut(d[p]);
    }
    scaled * vecs.adjoint()
}

/// Largest entry magnitude of a complex matrix.
pub fn max_abs_c(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Real part of a complex matrix.
pub fn re_mat(m: &CMat) -> RMat {
    RMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

/// Lift a real matrix into the complex field.
pub fn to_c(m: &RMat) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| Complex64::new(m[(i, j)], 0.0))
}
