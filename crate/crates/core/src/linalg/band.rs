use rayon::prelude::*;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Cholesky factor L Lᵀ = P A Pᵀ of a symmetric positive definite banded
/// matrix, stored as the lower band row by row.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// perm[old] = new position
    perm: Vec<usize>,
    l: Vec<f64>,
}

/// Half-bandwidth of A under the given relabeling.
pub fn bandwidth(a: &CsrMatrix, perm: &[usize]) -> usize {
    let mut bw = 0;
    for i in 0..a.n_rows() {
        for &j in a.row(i).0 {
            bw = bw.max(perm[i].abs_diff(perm[j]));
        }
    }
    bw
}

impl BandCholesky {
    /// Factor A with the identity ordering.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm: Vec<usize> = (0..a.n_rows()).collect();
        Self::factor_permuted(a, perm)
    }

    pub fn factor_permuted(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n || perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: perm.len().min(a.n_cols()),
            });
        }
        let bw = bandwidth(a, &perm);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..a.n_rows() {
            let (cols, vals) = a.row(i);
            let pi = perm[i];
            for (&j, &v) in cols.iter().zip(vals) {
                let pj = perm[j];
                if pj <= pi {
                    l[pi * w + (pj + bw - pi)] += v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, perm, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Smallest diagonal entry of L, squared; a cheap conditioning hint.
    pub fn min_pivot(&self) -> f64 {
        let w = self.bw + 1;
        (0..self.n)
            .map(|i| self.l[i * w + self.bw].powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length");
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = vec![0.0; n];
        for (old, &new) in self.perm.iter().enumerate() {
            y[new] = b[old];
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * w + bw];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[k] -= self.l[i * w + (k + bw - i)] * yi;
            }
        }
        self.perm.iter().map(|&new| y[new]).collect()
    }

    /// Solve for several right-hand sides in parallel.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rhs.par_iter().map(|b| self.solve(b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::Triplets;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        t.to_csr()
    }

    #[test]
    fn solves_tridiagonal_system() {
        let a = laplacian_1d(50);
        let f = BandCholesky::factor(&a).unwrap();
        assert_eq!(f.bandwidth(), 1);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = f.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn permutation_preserves_solution() {
        let a = laplacian_1d(20);
        let perm: Vec<usize> = (0..20).map(|i| if i % 2 == 0 { i / 2 } else { 19 - i / 2 }).collect();
        let f = BandCholesky::factor_permuted(&a, perm).unwrap();
        let b = vec![1.0; 20];
        let x = f.solve(&b);
        let r = a.mul_vec(&x);
        for v in r {
            assert!((v - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = laplacian_1d(5).lin_comb(1.0, &CsrMatrix::identity(5), -5.0).unwrap();
        assert!(matches!(
            BandCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
