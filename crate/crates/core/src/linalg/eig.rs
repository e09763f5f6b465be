use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::band::BandCholesky;
use super::sparse::CsrMatrix;
use super::{axpy, dot};
use crate::error::{Error, Result};

/// Problems up to this size go through the dense generalized solver.
pub const DENSE_LIMIT: usize = 1200;

#[derive(Debug, Clone)]
pub struct EigOptions {
    /// Shift for the shift-invert iteration; must lie below the spectrum.
    pub shift: f64,
    /// Relative residual target.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub dense_limit: usize,
    /// Fill-reducing relabeling handed to the banded factorization.
    pub perm: Option<Vec<usize>>,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            shift: -1.0,
            tol: 1e-10,
            max_iter: 400,
            seed: 0x5eed,
            dense_limit: DENSE_LIMIT,
            perm: None,
        }
    }
}

/// Eigenpairs sorted ascending, eigenvectors M-orthonormal.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// ‖Ax − μMx‖ / ((‖A‖ + |μ|‖M‖)‖x‖) for each pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// All eigenpairs of the symmetric-definite pencil (A, M) by Cholesky
/// reduction; columns of the returned matrix are M-orthonormal.
pub fn dense_generalized(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    let chol = m.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite {
            pivot: 0,
            value: f64::NAN,
        }
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Degenerate("singular mass factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Degenerate("singular mass factor".into()))?;
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut w = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        w.set_column(col, &eig.eigenvectors.column(i));
    }
    let v = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::Degenerate("singular mass factor".into()))?;
    Ok((values, v))
}

fn residual(a: &CsrMatrix, m: &CsrMatrix, norms: (f64, f64), mu: f64, x: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let mx = m.mul_vec(x);
    let r: f64 = ax
        .iter()
        .zip(&mx)
        .map(|(p, q)| (p - mu * q).powi(2))
        .sum::<f64>()
        .sqrt();
    let xn = dot(x, x).sqrt().max(f64::MIN_POSITIVE);
    r / ((norms.0 + mu.abs() * norms.1) * xn)
}

/// The k smallest eigenpairs of (A, M) with A symmetric and M symmetric
/// positive definite. Dense reduction for small problems, otherwise block
/// shift-invert subspace iteration with Rayleigh–Ritz projection.
pub fn smallest_eigenpairs(a: &CsrMatrix, m: &CsrMatrix, k: usize, opts: &EigOptions) -> Result<EigPairs> {
    let n = a.n_rows();
    if m.n_rows() != n || a.n_cols() != n || m.n_cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.n_rows(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::OutOfRange { index: k, len: n });
    }
    let norms = (a.norm_inf(), m.norm_inf());
    if n <= opts.dense_limit {
        let (vals, vecs) = dense_generalized(&a.to_dense(), &m.to_dense())?;
        let vectors: Vec<Vec<f64>> = (0..k).map(|j| vecs.column(j).iter().copied().collect()).collect();
        let residuals = vectors
            .iter()
            .zip(&vals)
            .map(|(x, &mu)| residual(a, m, norms, mu, x))
            .collect();
        return Ok(EigPairs {
            values: vals[..k].to_vec(),
            vectors,
            residuals,
            iterations: 0,
            warnings: Vec::new(),
        });
    }
    subspace_iteration(a, m, k, opts, norms)
}

fn factor_shifted(a: &CsrMatrix, m: &CsrMatrix, opts: &EigOptions, warnings: &mut Vec<String>) -> Result<(BandCholesky, f64)> {
    let perm = opts.perm.clone().unwrap_or_else(|| (0..a.n_rows()).collect());
    let mut shift = opts.shift;
    for attempt in 0..8 {
        let shifted = a.lin_comb(1.0, m, -shift)?;
        match BandCholesky::factor_permuted(&shifted, perm.clone()) {
            Ok(f) => return Ok((f, shift)),
            Err(Error::NotPositiveDefinite { .. }) => {
                let lower = shift - (shift.abs() + 1.0) * 2f64.powi(attempt);
                warnings.push(format!(
                    "shift {shift:.6e} is not below the spectrum, retrying at {lower:.6e}"
                ));
                shift = lower;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence {
        what: "shift selection",
        iterations: 8,
        residual: f64::NAN,
    })
}

/// Modified Gram–Schmidt in the M inner product, applied twice.
fn m_orthonormalize(m: &CsrMatrix, y: &mut [Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let p = y.len();
    let mut my: Vec<Vec<f64>> = y.par_iter().map(|v| m.mul_vec(v)).collect();
    for _pass in 0..2 {
        for j in 0..p {
            for i in 0..j {
                let c = dot(&my[i], &y[j]);
                let (yi, myi) = (y[i].clone(), my[i].clone());
                axpy(-c, &yi, &mut y[j]);
                axpy(-c, &myi, &mut my[j]);
            }
            let mut nrm = dot(&y[j], &my[j]).max(0.0).sqrt();
            if nrm < 1e-14 {
                // collapsed direction; reseed it
                y[j] = (0..y[j].len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                my[j] = m.mul_vec(&y[j]);
                for i in 0..j {
                    let c = dot(&my[i], &y[j]);
                    let (yi, myi) = (y[i].clone(), my[i].clone());
                    axpy(-c, &yi, &mut y[j]);
                    axpy(-c, &myi, &mut my[j]);
                }
                nrm = dot(&y[j], &my[j]).sqrt();
            }
            y[j].iter_mut().for_each(|v| *v /= nrm);
            my[j].iter_mut().for_each(|v| *v /= nrm);
        }
    }
    my
}

fn combine(basis: &[Vec<f64>], w: &DMatrix<f64>, cols: usize) -> Vec<Vec<f64>> {
    let n = basis[0].len();
    (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut out = vec![0.0; n];
            for (r, b) in basis.iter().enumerate() {
                axpy(w[(r, c)], b, &mut out);
            }
            out
        })
        .collect()
}

fn subspace_iteration(a: &CsrMatrix, m: &CsrMatrix, k: usize, opts: &EigOptions, norms: (f64, f64)) -> Result<EigPairs> {
    let n = a.n_rows();
    let mut warnings = Vec::new();
    let (factor, _shift) = factor_shifted(a, m, opts, &mut warnings)?;
    let p = (2 * k).max(k + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut last_res = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let rhs: Vec<Vec<f64>> = x.par_iter().map(|v| m.mul_vec(v)).collect();
        let mut y = factor.solve_many(&rhs);
        let my = m_orthonormalize(m, &mut y, &mut rng);
        let ay: Vec<Vec<f64>> = y.par_iter().map(|v| a.mul_vec(v)).collect();
        let mut ap = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = 0.5 * (dot(&y[i], &ay[j]) + dot(&y[j], &ay[i]));
                ap[(i, j)] = v;
                ap[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(ap);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut w = DMatrix::zeros(p, p);
        for (c, &i) in order.iter().enumerate() {
            w.set_column(c, &eig.eigenvectors.column(i));
        }
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        x = combine(&y, &w, p);
        let ax = combine(&ay, &w, k);
        let mx = combine(&my, &w, k);
        let residuals: Vec<f64> = (0..k)
            .map(|j| {
                let r: f64 = ax[j]
                    .iter()
                    .zip(&mx[j])
                    .map(|(u, v)| (u - values[j] * v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                r / ((norms.0 + values[j].abs() * norms.1) * dot(&x[j], &x[j]).sqrt())
            })
            .collect();
        last_res = residuals.iter().copied().fold(0.0, f64::max);
        if last_res <= opts.tol {
            x.truncate(k);
            return Ok(EigPairs {
                values: values[..k].to_vec(),
                vectors: x,
                residuals,
                iterations: it,
                warnings,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "subspace iteration",
        iterations: opts.max_iter,
        residual: last_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::Triplets;

    /// 1-D Dirichlet Laplacian with lumped mass h: eigenvalues
    /// (4/h²) sin²(jπ/(2(n+1))).
    fn pencil(n: usize) -> (CsrMatrix, CsrMatrix, Vec<f64>) {
        let h = 1.0 / (n + 1) as f64;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0 / h);
            if i + 1 < n {
                t.push(i, i + 1, -1.0 / h);
                t.push(i + 1, i, -1.0 / h);
            }
        }
        let exact = (1..=n)
            .map(|j| 4.0 / (h * h) * (j as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2))
            .collect();
        (t.to_csr(), CsrMatrix::diagonal(&vec![h; n]), exact)
    }

    #[test]
    fn dense_and_iterative_agree_with_closed_form() {
        let (a, m, exact) = pencil(1500);
        let dense_opts = EigOptions {
            dense_limit: 2000,
            ..Default::default()
        };
        let sparse_opts = EigOptions {
            dense_limit: 10,
            shift: -1.0,
            ..Default::default()
        };
        let (a2, m2, exact2) = pencil(300);
        let d = smallest_eigenpairs(&a2, &m2, 6, &dense_opts).unwrap();
        for j in 0..6 {
            assert!((d.values[j] - exact2[j]).abs() < 1e-9 * exact2[j]);
        }
        let s = smallest_eigenpairs(&a, &m, 6, &sparse_opts).unwrap();
        for j in 0..6 {
            assert!((s.values[j] - exact[j]).abs() < 1e-8 * exact[j], "{j}");
            assert!(s.residuals[j] <= 1e-10);
            let mn = m.bilinear(&s.vectors[j], &s.vectors[j]);
            assert!((mn - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_retry_is_reported() {
        let (a, m, exact) = pencil(400);
        let opts = EigOptions {
            dense_limit: 10,
            shift: 20.0,
            ..Default::default()
        };
        let s = smallest_eigenpairs(&a, &m, 3, &opts).unwrap();
        assert!(!s.warnings.is_empty());
        assert!((s.values[0] - exact[0]).abs() < 1e-8 * exact[0]);
    }

    #[test]
    fn rejects_bad_k() {
        let (a, m, _) = pencil(5);
        assert!(smallest_eigenpairs(&a, &m, 0, &EigOptions::default()).is_err());
        assert!(smallest_eigenpairs(&a, &m, 6, &EigOptions::default()).is_err());
    }
}
