//! Small dense helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};

pub type Mat = DMatrix<f64>;

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extremes(m: &Mat) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn max_eig(m: &Mat) -> f64 {
    eig_extremes(m).1
}

pub fn min_eig(m: &Mat) -> f64 {
    eig_extremes(m).0
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &Mat, tol: f64) -> Mat {
    let n = m.ncols();
    let g = m.transpose() * m;
    let eig = SymmetricEigen::new(symmetrize(&g));
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let keep: Vec<usize> = (0..n)
        .filter(|&k| eig.eigenvalues[k].abs() <= tol * scale)
        .collect();
    let mut out = zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        out.set_column(c, &eig.eigenvectors.column(k));
    }
    out
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &Mat) -> Mat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    svd.pseudo_inverse(tol)
        .unwrap_or_else(|_| zeros(m.ncols(), m.nrows()))
}

/// Place `b` into `a` at (r, c).
pub fn put(a: &mut Mat, r: usize, c: usize, b: &Mat) {
    a.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        put(&mut out, i, j, b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

pub fn fro(m: &Mat) -> f64 {
    m.norm()
}

/// Spectral norm.
pub fn norm2(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}
