//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// (M + M')/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize_mut(&mut out);
    out
}

pub fn symmetrize_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)]],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mid - rad, mid + rad]
        }
        _ => {
            let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Spectral (operator 2-) norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    lambda_max(&(m.transpose() * m)).max(0.0).sqrt()
}

/// Applies `f` to the eigenvalues of the symmetric part of `m`.
pub fn sym_spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, f(m[(0, 0)]));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| f(l)));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&mapped) * q.transpose();
    symmetrize_mut(&mut out);
    out
}

/// Symmetrizes and clamps negative eigenvalues to zero.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym_eigenvalues(&sym).first().is_none_or(|&l| l >= 0.0) {
        return sym;
    }
    sym_spectral_map(&sym, |l| l.max(0.0))
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_spectral_map(m, |l| l.max(0.0).sqrt())
}

/// Inverse principal square root of a symmetric positive-definite matrix.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_spectral_map(m, |l| 1.0 / l.sqrt())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    if n != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Upper triangle (diagonal included), row-major.
pub fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn upper_triangle_labels(prefix: &str, n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(format!("{prefix}_{i}{j}"));
        }
    }
    out
}
