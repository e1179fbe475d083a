//! Dense and support-restricted kernels used by the solvers.
//!
//! All reductions run in a fixed index order so identical inputs produce
//! bit-identical outputs regardless of how work is scheduled around them.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;
/// Largest Gram dimension for which a failed power iteration falls back to a
/// dense symmetric eigensolve.
pub const EXACT_FALLBACK_MAX_DIM: usize = 512;

/// `out = Σ_j coeffs[j] · rows[j, :]` over the nonzero `coeffs[j]`, in
/// ascending `j`.
///
/// With `rows` the Gram matrix this is `G·x` for symmetric `G`; with `rows`
/// the transposed sensing matrix it is `A·x`. Cost is proportional to the
/// support of `coeffs`, which is what makes thresholded iterates cheap.
pub fn combine_rows<F: Scalar>(rows: ArrayView2<'_, F>, coeffs: &[F], out: &mut [F]) {
    debug_assert_eq!(rows.nrows(), coeffs.len());
    debug_assert_eq!(rows.ncols(), out.len());
    out.iter_mut().for_each(|o| *o = F::zero());
    for (j, &c) in coeffs.iter().enumerate() {
        if c == F::zero() {
            continue;
        }
        let row = rows.row(j);
        match row.as_slice() {
            Some(row) => out.iter_mut().zip(row).for_each(|(o, &g)| *o += c * g),
            None => out.iter_mut().zip(row.iter()).for_each(|(o, &g)| *o += c * g),
        }
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

/// `AᵀA` for a row-major `A`.
pub fn gram<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    let g = a.t().dot(a);
    // Symmetrize exactly so row j equals column j bit for bit.
    let n = g.nrows();
    let mut out = g;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = out[[i, j]];
            out[[j, i]] = v;
        }
    }
    out
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration on the Rayleigh quotient.
pub fn power_iteration<F: Scalar>(sym: &Array2<F>, tol: f64, max_iter: usize) -> Result<F> {
    let n = sym.nrows();
    if n == 0 || sym.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "power iteration needs a nonempty square matrix, got {}x{}",
            sym.nrows(),
            sym.ncols()
        )));
    }
    let mut v = Array1::from_elem(n, F::of(1.0 / (n as f64).sqrt()));
    let mut estimate = F::zero();
    let mut relative_change = f64::INFINITY;
    for _ in 0..max_iter {
        let w = sym.dot(&v);
        let next = v.dot(&w) / v.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == F::zero() {
            return Ok(F::zero());
        }
        relative_change = ((next - estimate) / next).abs().as_f64();
        estimate = next;
        v = w / norm;
        if relative_change <= tol {
            return Ok(estimate);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: estimate.as_f64(),
        relative_change,
    })
}

/// Largest eigenvalue of a symmetric matrix by a dense eigendecomposition.
pub fn largest_eigenvalue_exact<F: Scalar>(sym: &Array2<F>) -> f64 {
    let n = sym.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| sym[[i, j]].as_f64());
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `λ_max(AᵀA)`, computed on whichever of `AᵀA` / `AAᵀ` is smaller.
pub fn lambda_max<F: Scalar>(a: &Array2<F>) -> Result<F> {
    let small = if a.nrows() <= a.ncols() {
        a.dot(&a.t())
    } else {
        a.t().dot(a)
    };
    match power_iteration(&small, POWER_TOLERANCE, POWER_MAX_ITERATIONS) {
        Ok(v) => Ok(v),
        Err(Error::NoConvergence { .. }) if small.nrows() <= EXACT_FALLBACK_MAX_DIM => {
            Ok(F::of(largest_eigenvalue_exact(&small)))
        }
        Err(e) => Err(e),
    }
}
