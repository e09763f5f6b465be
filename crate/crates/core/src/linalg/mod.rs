//! Sparse storage, banded Cholesky factorization and symmetric generalized
//! eigensolvers used by the finite-element modules.

pub mod band;
pub mod eig;
pub mod sparse;

pub use band::BandCholesky;
pub use eig::{dense_generalized, smallest_eigenpairs, EigOptions, EigPairs};
pub use sparse::{CsrMatrix, Triplets};

/// Dot product of two equally long slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
