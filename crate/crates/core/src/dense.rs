//! Small dense helpers on top of faer: linear solves for the amplitude
//! systems and Hermitian (generalised) eigenproblems.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64 as C64;

/// Solves `a x = b` for a small square complex matrix (row-major rows).
pub fn solve(a: &[Vec<C64>], b: &[C64]) -> Vec<C64> {
    let n = b.len();
    let m = Mat::<C64>::from_fn(n, n, |i, j| a[i][j]);
    let mut x = Mat::<C64>::from_fn(n, 1, |i, _| b[i]);
    m.partial_piv_lu().solve_in_place(x.as_mut());
    (0..n).map(|i| x[(i, 0)]).collect()
}

/// Dense matrix from a closure.
pub fn mat(n: usize, f: impl Fn(usize, usize) -> C64) -> Mat<C64> {
    Mat::<C64>::from_fn(n, n, f)
}

/// Eigenvalues (non-decreasing) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(a: &Mat<C64>) -> Option<(Vec<f64>, Mat<C64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).ok()?;
    let s = evd.S().column_vector();
    let vals = (0..a.nrows()).map(|i| s[i].re).collect();
    Some((vals, evd.U().to_owned()))
}

/// Generalised Hermitian eigenproblem `k v = lam m v` with `m` positive
/// definite. Eigenvectors are m-orthonormal.
pub fn generalized_hermitian_eigen(k: &Mat<C64>, m: &Mat<C64>) -> Option<(Vec<f64>, Mat<C64>)> {
    let n = k.nrows();
    let llt = m.llt(Side::Lower).ok()?;
    let l = llt.L().to_owned();
    // c = L^{-1} k L^{-H}
    let mut tmp = k.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), tmp.as_mut(), faer::Par::Seq);
    let mut c = tmp.adjoint().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), faer::Par::Seq);
    let c = Mat::<C64>::from_fn(n, n, |i, j| (c[(i, j)] + c[(j, i)].conj()) * 0.5);
    let (vals, w) = hermitian_eigen(&c)?;
    // v = L^{-H} w
    let mut v = w;
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.adjoint(), v.as_mut(), faer::Par::Seq);
    Some((vals, v))
}
