//! Small dense linear-algebra helpers shared across modules.

use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Symmetrize a square matrix: (M + Mᵀ) / 2.
pub fn symmetrize<S: Scalar>(m: &DMatrix<S>) -> DMatrix<S> {
    let half = S::from_f64_lossy(0.5);
    (m + m.transpose()) * half
}

/// trace(A · B) without forming the product.
pub fn trace_prod<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> S {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(b.ncols(), a.nrows());
    let mut acc = S::zero();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Largest absolute entry.
pub fn max_abs<S: Scalar>(m: &DMatrix<S>) -> S {
    let mut v = S::zero();
    for x in m.iter() {
        let a = x.abs();
        if a > v {
            v = a;
        }
    }
    v
}

/// Whether M is symmetric to within `tol` on the largest entry scale.
pub fn is_symmetric_within<S: Scalar>(m: &DMatrix<S>, tol: S) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = S::one() + max_abs(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue<S: Scalar>(m: &DMatrix<S>) -> S {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let eig = m.clone().symmetric_eigen();
    let mut v = eig.eigenvalues[0];
    for &e in eig.eigenvalues.iter() {
        if e > v {
            v = e;
        }
    }
    v
}

/// Project a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues to zero.
pub fn psd_project<S: Scalar>(m: &DMatrix<S>) -> DMatrix<S> {
    if m.nrows() == 1 {
        let v = if m[(0, 0)] < S::zero() { S::zero() } else { m[(0, 0)] };
        return DMatrix::from_element(1, 1, v);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    let q = eig.eigenvectors;
    let mut scaled = q.clone();
    for (c, &v) in vals.iter().enumerate() {
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= v;
        }
    }
    symmetrize(&(scaled * q.transpose()))
}

/// All entries finite.
pub fn all_finite<S: Scalar>(m: &DMatrix<S>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// All vector entries finite.
pub fn vec_all_finite<S: Scalar>(v: &DVector<S>) -> bool {
    v.iter().all(|x| x.is_finite())
}
