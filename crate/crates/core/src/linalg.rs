//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue cut-off below which a direction is treated as null.
pub const GINV_REL_TOL: f64 = 1e-12;

/// Which generalized inverse to use for a symmetric positive semi-definite
/// matrix. The quadratic forms built from them agree on the column space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GInverse {
    #[default]
    MoorePenrose,
    /// Inverse of a maximal nonsingular principal submatrix, zero elsewhere.
    Reflexive,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn moore_penrose_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cut = GINV_REL_TOL * largest;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cut && lambda != 0.0 {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

/// Reflexive g-inverse: greedily picks a maximal set of linearly
/// independent coordinates, inverts that principal block and embeds it.
pub fn reflexive_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let mut chosen: Vec<usize> = Vec::new();
    for i in (0..n).rev() {
        let mut trial = chosen.clone();
        trial.push(i);
        let sub = DMatrix::from_fn(trial.len(), trial.len(), |a, b| m[(trial[a], trial[b])]);
        let eig = SymmetricEigen::new(symmetrize(&sub));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            chosen = trial;
        }
    }
    let mut out = DMatrix::zeros(n, n);
    if chosen.is_empty() {
        return out;
    }
    let sub = DMatrix::from_fn(chosen.len(), chosen.len(), |a, b| m[(chosen[a], chosen[b])]);
    let inv = sub.try_inverse().expect("chosen principal block is nonsingular");
    for (a, &i) in chosen.iter().enumerate() {
        for (b, &j) in chosen.iter().enumerate() {
            out[(i, j)] = inv[(a, b)];
        }
    }
    out
}

pub fn generalized_inverse(m: &DMatrix<f64>, kind: GInverse) -> DMatrix<f64> {
    match kind {
        GInverse::MoorePenrose => moore_penrose_symmetric(m),
        GInverse::Reflexive => reflexive_symmetric(m),
    }
}

/// Numerical rank from singular values with a relative tolerance.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}

/// Fails unless `m` is symmetric with smallest eigenvalue above
/// `rel_tol × largest`.
pub fn check_spd(m: &DMatrix<f64>, what: &str, rel_tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric (asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(min > rel_tol * max) {
        return Err(Error::NotPositiveDefinite(format!("{what}: smallest eigenvalue {min:e}, largest {max:e}")));
    }
    Ok(())
}

/// Square-root factor `F` with `F Fᵀ = m` for a symmetric PSD matrix.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

pub fn leading_block(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    m.view((0, 0), (p, p)).into_owned()
}

pub fn leading_columns(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    m.columns(0, p).into_owned()
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::Singular(format!("{what} is not invertible")))
}

pub fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
