//! Finite elements for the localized extension problem on the half-ball
//! B⁺₁ ⊂ R³ (N = 2) in spherical coordinates (r, t, θ).
//!
//! Unknowns are tensor products of piecewise linear radial functions on a
//! geometric shell grid with the hemisphere elements. Since the weight
//! (r sin t)^{1−2s} and the Hardy potential |x|^{−2s} split into radial and
//! angular factors, the operator is
//!
//! `A = K₁ ⊗ M + K₀ ⊗ (K − λκ_s B_ω) − H_h`
//!
//! with `K₁ = ∫ r^{3−2s} φ′φ′`, `K₀ = ∫ r^{1−2s} φφ`, and `H_h` the only
//! non-separable piece, the equatorial term κ_s ∫ h TrU TrV.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cones::SphericalCap;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dense_generalized, dot, BandCholesky, CsrMatrix, Triplets};
use crate::params::ProblemParams;
use crate::quadrature::gauss_legendre;
use crate::spectral::EigenSystem;
use crate::sphercap::{assemble, AssembledForms, HemisphereMesh};

const RADIAL_POINTS: usize = 16;
const TRACE_POINTS: usize = 4;

/// The perturbation h(x) of the Neumann coefficient on the thin space.
pub trait Perturbation: Send + Sync {
    fn value(&self, x: [f64; 2]) -> f64;

    /// ∇h; central differences unless overridden.
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let e = 1e-6 * (1.0 + x[0].abs().max(x[1].abs()));
        let dx = (self.value([x[0] + e, x[1]]) - self.value([x[0] - e, x[1]])) / (2.0 * e);
        let dy = (self.value([x[0], x[1] + e]) - self.value([x[0], x[1] - e])) / (2.0 * e);
        [dx, dy]
    }

    /// Constant value, when h is constant.
    fn constant(&self) -> Option<f64> {
        None
    }

    fn is_zero(&self) -> bool {
        self.constant() == Some(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPerturbation(pub f64);

impl Perturbation for ConstantPerturbation {
    fn value(&self, _x: [f64; 2]) -> f64 {
        self.0
    }

    fn gradient(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn constant(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// h given by closures for the value and, optionally, the gradient.
pub struct FnPerturbation<F> {
    f: F,
}

impl<F: Fn([f64; 2]) -> f64 + Send + Sync> FnPerturbation<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn([f64; 2]) -> f64 + Send + Sync> Perturbation for FnPerturbation<F> {
    fn value(&self, x: [f64; 2]) -> f64 {
        (self.f)(x)
    }
}

pub fn zero_perturbation() -> Arc<dyn Perturbation> {
    Arc::new(ConstantPerturbation(0.0))
}

/// Shells r_0 = r_min < r_1 < … < r_{n_r} = 1 with a constant ratio, each
/// carrying a copy of the hemisphere mesh.
#[derive(Debug, Clone)]
pub struct HalfBallGrid {
    radii: Vec<f64>,
    mesh: HemisphereMesh,
}

impl HalfBallGrid {
    pub fn new(n_r: usize, r_min: f64, mesh: HemisphereMesh) -> Result<Self> {
        if n_r < 2 {
            return Err(Error::Invalid(format!("need at least 2 radial cells, got {n_r}")));
        }
        if !(r_min > 0.0 && r_min < 1.0) {
            return Err(Error::Domain(format!("r_min must lie in (0,1), got {r_min}")));
        }
        let q = r_min.powf(-1.0 / n_r as f64);
        let mut radii: Vec<f64> = (0..=n_r).map(|i| r_min * q.powi(i as i32)).collect();
        radii[n_r] = 1.0;
        Ok(Self { radii, mesh })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn n_cells(&self) -> usize {
        self.radii.len() - 1
    }

    pub fn n_shells(&self) -> usize {
        self.radii.len()
    }

    pub fn ratio(&self) -> f64 {
        self.radii[1] / self.radii[0]
    }

    pub fn r_min(&self) -> f64 {
        self.radii[0]
    }

    pub fn mesh(&self) -> &HemisphereMesh {
        &self.mesh
    }

    /// Index of the shell at radius r, if r is one within relative 1e-9.
    pub fn shell_index(&self, r: f64) -> Option<usize> {
        self.radii.iter().position(|&x| (x - r).abs() <= 1e-9 * r)
    }
}

/// Radial 2×2 cell matrices.
#[derive(Debug, Clone, Copy)]
struct RadialCell {
    /// ∫ r^{3−2s} φ′φ′
    k1: [[f64; 2]; 2],
    /// ∫ r^{1−2s} φφ
    k0: [[f64; 2]; 2],
    /// ∫ r^{3−2s} φφ
    mass: [[f64; 2]; 2],
}

fn radial_cells(radii: &[f64], s: f64) -> Vec<RadialCell> {
    let rule = gauss_legendre(RADIAL_POINTS);
    radii
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let h = b - a;
            let mut cell = RadialCell {
                k1: [[0.0; 2]; 2],
                k0: [[0.0; 2]; 2],
                mass: [[0.0; 2]; 2],
            };
            for (r, wt) in rule.mapped(a, b) {
                let phi = [(b - r) / h, (r - a) / h];
                let dphi = [-1.0 / h, 1.0 / h];
                let w3 = wt * r.powf(3.0 - 2.0 * s);
                let w1 = wt * r.powf(1.0 - 2.0 * s);
                for p in 0..2 {
                    for q in 0..2 {
                        cell.k1[p][q] += w3 * dphi[p] * dphi[q];
                        cell.k0[p][q] += w1 * phi[p] * phi[q];
                        cell.mass[p][q] += w3 * phi[p] * phi[q];
                    }
                }
            }
            cell
        })
        .collect()
}

fn tridiagonal(cells: &[RadialCell], pick: impl Fn(&RadialCell) -> [[f64; 2]; 2]) -> DMatrix<f64> {
    let n = cells.len() + 1;
    let mut m = DMatrix::zeros(n, n);
    for (c, cell) in cells.iter().enumerate() {
        let e = pick(cell);
        for p in 0..2 {
            for q in 0..2 {
                m[(c + p, c + q)] += e[p][q];
            }
        }
    }
    m
}

/// Condition on the inner shell r = r_min.
#[derive(Debug, Clone)]
pub enum InnerBoundary {
    /// zero flux
    Neumann,
    /// prescribed values on all hemisphere nodes
    Dirichlet(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub inner: InnerBoundary,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            inner: InnerBoundary::Neumann,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// Assembled extension operator on all shells (Dirichlet conditions are
/// applied at solve time).
pub struct ExtensionOperator {
    grid: HalfBallGrid,
    forms: Arc<AssembledForms>,
    params: ProblemParams,
    cells: Vec<RadialCell>,
    /// K − λκ_s B_ω on sphere dofs
    angular: CsrMatrix,
    /// equator sphere dofs in azimuthal order
    equator_dofs: Vec<usize>,
    /// equator slot of each azimuthal node, None when eliminated
    slot: Vec<Option<usize>>,
    /// κ_s ∫ h TrU TrV per radial cell, on local index p·n_eq + e with p ∈ {0,1}
    h_cells: Vec<CsrMatrix>,
    h: Arc<dyn Perturbation>,
}

impl std::fmt::Debug for ExtensionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtensionOperator")
            .field("shells", &self.grid.n_shells())
            .field("sphere_dofs", &self.forms.mesh.n_dofs())
            .finish_non_exhaustive()
    }
}

impl ExtensionOperator {
    pub fn new(grid: HalfBallGrid, params: &ProblemParams, h: Arc<dyn Perturbation>) -> Result<Self> {
        let forms = Arc::new(assemble(grid.mesh(), params)?);
        Self::with_forms(grid, forms, params, h)
    }

    pub fn with_forms(grid: HalfBallGrid, forms: Arc<AssembledForms>, params: &ProblemParams, h: Arc<dyn Perturbation>) -> Result<Self> {
        let cells = radial_cells(&grid.radii, params.s());
        let angular = forms
            .stiffness
            .lin_comb(1.0, &forms.boundary_mass, -params.lambda() * params.kappa())?;
        let mesh = &forms.mesh;
        let n_theta = mesh.n_theta();
        // equator slot of each equator node, None when eliminated
        let slot: Vec<Option<usize>> = {
            let mut k = 0;
            (0..n_theta)
                .map(|j| {
                    mesh.node_to_dof()[j].map(|_| {
                        k += 1;
                        k - 1
                    })
                })
                .collect()
        };
        let equator_dofs: Vec<usize> = (0..n_theta).filter_map(|j| mesh.node_to_dof()[j]).collect();
        let n_eq = equator_dofs.len();
        let h_cells = if h.is_zero() || n_eq == 0 {
            Vec::new()
        } else {
            let kappa = params.kappa();
            equatorial_trace_form(&grid, &slot, n_eq, &|x| kappa * h.value(x))
        };
        Ok(Self {
            grid,
            forms,
            params: *params,
            cells,
            angular,
            equator_dofs,
            slot,
            h_cells,
            h,
        })
    }

    pub fn grid(&self) -> &HalfBallGrid {
        &self.grid
    }

    pub fn forms(&self) -> &AssembledForms {
        &self.forms
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn perturbation(&self) -> &Arc<dyn Perturbation> {
        &self.h
    }

    pub(crate) fn h_cells(&self) -> &[CsrMatrix] {
        &self.h_cells
    }

    /// Per-cell trace forms with weight w, in the layout of the h form.
    pub(crate) fn trace_cells(&self, weight: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Vec<CsrMatrix> {
        if self.equator_dofs.is_empty() {
            return Vec::new();
        }
        equatorial_trace_form(&self.grid, &self.slot, self.equator_dofs.len(), weight)
    }

    fn cell_local(&self, c: usize, u: &[Vec<f64>]) -> Vec<f64> {
        (0..2)
            .flat_map(|p| self.equator_dofs.iter().map(move |&d| u[c + p][d]))
            .collect()
    }

    /// Σ over cells below shell i of the trace form of u with itself.
    pub(crate) fn trace_form_below(&self, cells: &[CsrMatrix], u: &[Vec<f64>], i: usize) -> f64 {
        (0..i.min(cells.len()))
            .map(|c| {
                let local = self.cell_local(c, u);
                dot(&local, &cells[c].mul_vec(&local))
            })
            .sum()
    }

    /// Per-cell trace form of u against the radially constant function
    /// with sphere dofs v.
    pub(crate) fn cell_trace_moments(&self, cells: &[CsrMatrix], u: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        let v_eq: Vec<f64> = self.equator_dofs.iter().map(|&d| v[d]).collect();
        let v_local = [v_eq.as_slice(), v_eq.as_slice()].concat();
        (0..cells.len())
            .map(|c| dot(&self.cell_local(c, u), &cells[c].mul_vec(&v_local)))
            .collect()
    }

    /// ∫₀^{2π} w(r cos θ, r sin θ) TrU(θ)² dθ for sphere dofs u on the
    /// circle of radius r.
    pub(crate) fn ring_integral(&self, r: f64, u: &[f64], weight: &dyn Fn([f64; 2]) -> f64) -> f64 {
        let rule = gauss_legendre(TRACE_POINTS);
        let n_theta = self.slot.len();
        let dth = TAU / n_theta as f64;
        let value = |j: usize| self.slot[j].map_or(0.0, |e| u[self.equator_dofs[e]]);
        let mut total = 0.0;
        for j in 0..n_theta {
            let (a, b) = (value(j), value((j + 1) % n_theta));
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let th0 = j as f64 * dth;
            for (th, wt) in rule.mapped(th0, th0 + dth) {
                let l = (th - th0) / dth;
                let tr = (1.0 - l) * a + l * b;
                total += wt * weight([r * th.cos(), r * th.sin()]) * tr * tr;
            }
        }
        total
    }

    fn n_s(&self) -> usize {
        self.forms.mesh.n_dofs()
    }

    /// (A u) on all shells for shell-major dof values u.
    pub fn apply(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = &self.forms.mass;
        let mu: Vec<Vec<f64>> = u.par_iter().map(|x| m.mul_vec(x)).collect();
        let su: Vec<Vec<f64>> = u.par_iter().map(|x| self.angular.mul_vec(x)).collect();
        let mut out = vec![vec![0.0; self.n_s()]; u.len()];
        for (c, cell) in self.cells.iter().enumerate() {
            for p in 0..2 {
                for q in 0..2 {
                    axpy(cell.k1[p][q], &mu[c + q], &mut out[c + p]);
                    axpy(cell.k0[p][q], &su[c + q], &mut out[c + p]);
                }
            }
        }
        for c in 0..self.h_cells.len() {
            let hu = self.h_cell_apply(c, u);
            for p in 0..2 {
                for (e, &d) in self.equator_dofs.iter().enumerate() {
                    out[c + p][d] -= hu[p][e];
                }
            }
        }
        out
    }

    /// Local h-form of radial cell c applied to the equator values of u.
    fn h_cell_apply(&self, c: usize, u: &[Vec<f64>]) -> [Vec<f64>; 2] {
        let n_eq = self.equator_dofs.len();
        let local = self.cell_local(c, u);
        let y = self.h_cells[c].mul_vec(&local);
        [y[..n_eq].to_vec(), y[n_eq..].to_vec()]
    }

    /// u_iᵀ (A restricted to radial cells below shell i) u: for a discrete
    /// solution this is the energy form inside the shell, flux of the cells
    /// below it included.
    pub fn form_inside_shell(&self, u: &[Vec<f64>], i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let c = i - 1;
        let cell = &self.cells[c];
        let m = &self.forms.mass;
        let mut acc = m.mul_vec(&u[c]);
        acc.iter_mut().for_each(|v| *v *= cell.k1[1][0]);
        axpy(cell.k1[1][1], &m.mul_vec(&u[i]), &mut acc);
        axpy(cell.k0[1][0], &self.angular.mul_vec(&u[c]), &mut acc);
        axpy(cell.k0[1][1], &self.angular.mul_vec(&u[i]), &mut acc);
        let mut val = dot(&u[i], &acc);
        if !self.h_cells.is_empty() {
            let hu = self.h_cell_apply(c, u);
            val -= self
                .equator_dofs
                .iter()
                .enumerate()
                .map(|(e, &d)| u[i][d] * hu[1][e])
                .sum::<f64>();
        }
        val
    }

    /// Σ over radial cells below shell i of the cell energies
    /// ∫ t^{1−2s}|∇U|² − κ_s ∫ (λ|x|^{−2s} + h) TrU².
    pub fn energy_below_shell(&self, u: &[Vec<f64>], i: usize) -> f64 {
        let m = &self.forms.mass;
        let mv: Vec<Vec<f64>> = u[..=i].iter().map(|x| m.mul_vec(x)).collect();
        let sv: Vec<Vec<f64>> = u[..=i].iter().map(|x| self.angular.mul_vec(x)).collect();
        let mut total = 0.0;
        for c in 0..i {
            let cell = &self.cells[c];
            for p in 0..2 {
                for q in 0..2 {
                    total += cell.k1[p][q] * dot(&u[c + p], &mv[c + q]);
                    total += cell.k0[p][q] * dot(&u[c + p], &sv[c + q]);
                }
            }
            if !self.h_cells.is_empty() {
                let hu = self.h_cell_apply(c, u);
                for p in 0..2 {
                    for (e, &d) in self.equator_dofs.iter().enumerate() {
                        total -= u[c + p][d] * hu[p][e];
                    }
                }
            }
        }
        total
    }

    /// ∫ r^{3−2s} φφ ⊗ M on all nodes: the weighted L² form of the half-ball.
    pub fn weighted_l2_norm2(&self, nodal: &[Vec<f64>]) -> f64 {
        let m = &self.forms.nodal_mass;
        let mv: Vec<Vec<f64>> = nodal.par_iter().map(|x| m.mul_vec(x)).collect();
        let mut total = 0.0;
        for (c, cell) in self.cells.iter().enumerate() {
            for p in 0..2 {
                for q in 0..2 {
                    total += cell.mass[p][q] * dot(&nodal[c + p], &mv[c + q]);
                }
            }
        }
        total
    }
}

/// ∫∫ w(ρ cos θ, ρ sin θ) φ_a(ρ) φ_b(ρ) L_c(θ) L_d(θ) ρ dρ dθ for every
/// radial cell, assembled over azimuthal segments.
fn equatorial_trace_form(grid: &HalfBallGrid, slot: &[Option<usize>], n_eq: usize, weight: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Vec<CsrMatrix> {
    let rule = gauss_legendre(TRACE_POINTS);
    let n_theta = slot.len();
    let dth = TAU / n_theta as f64;
    grid.radii
        .par_windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let hr = b - a;
            let mut t = Triplets::new(2 * n_eq, 2 * n_eq);
            for j in 0..n_theta {
                let jn = (j + 1) % n_theta;
                let ends = [slot[j], slot[jn]];
                if ends.iter().all(Option::is_none) {
                    continue;
                }
                let th0 = j as f64 * dth;
                let mut local = [[[[0.0; 2]; 2]; 2]; 2];
                for (r, wr) in rule.mapped(a, b) {
                    let phi = [(b - r) / hr, (r - a) / hr];
                    for (th, wt) in rule.mapped(th0, th0 + dth) {
                        let l = [(th0 + dth - th) / dth, (th - th0) / dth];
                        let val = weight([r * th.cos(), r * th.sin()]) * r * wr * wt;
                        for p in 0..2 {
                            for q in 0..2 {
                                for u in 0..2 {
                                    for v in 0..2 {
                                        local[p][q][u][v] += val * phi[p] * phi[q] * l[u] * l[v];
                                    }
                                }
                            }
                        }
                    }
                }
                for p in 0..2 {
                    for q in 0..2 {
                        for u in 0..2 {
                            for v in 0..2 {
                                if let (Some(eu), Some(ev)) = (ends[u], ends[v]) {
                                    t.push(p * n_eq + eu, q * n_eq + ev, local[p][q][u][v]);
                                }
                            }
                        }
                    }
                }
            }
            t.to_csr()
        })
        .collect()
}

/// Exact inverse of K₁ ⊗ M + K₀ ⊗ (K − λκB) on the free shells by
/// diagonalizing the radial pencil (K₁, K₀).
struct RadialPreconditioner {
    /// radial eigenvectors, K₀-orthonormal, rows indexed by free shells
    v: DMatrix<f64>,
    blocks: Vec<BandCholesky>,
}

impl RadialPreconditioner {
    fn new(op: &ExtensionOperator, free: &[usize]) -> Result<Self> {
        let k1 = tridiagonal(&op.cells, |c| c.k1);
        let k0 = tridiagonal(&op.cells, |c| c.k0);
        let nf = free.len();
        let sub = |m: &DMatrix<f64>| DMatrix::from_fn(nf, nf, |i, j| m[(free[i], free[j])]);
        let (nu, v) = dense_generalized(&sub(&k1), &sub(&k0))?;
        let perm = op.forms.mesh.band_permutation();
        let blocks = nu
            .par_iter()
            .map(|&n| {
                let block = op.angular.lin_comb(1.0, &op.forms.mass, n)?;
                BandCholesky::factor_permuted(&block, perm.clone()).map_err(|e| match e {
                    Error::NotPositiveDefinite { .. } => Error::NotCoercive {
                        lambda: op.params.lambda(),
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { v, blocks })
    }

    fn apply(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nf = x.len();
        let n = x[0].len();
        let y: Vec<Vec<f64>> = (0..nf)
            .into_par_iter()
            .map(|k| {
                let mut yk = vec![0.0; n];
                for (i, xi) in x.iter().enumerate() {
                    axpy(self.v[(i, k)], xi, &mut yk);
                }
                self.blocks[k].solve(&yk)
            })
            .collect();
        (0..nf)
            .into_par_iter()
            .map(|i| {
                let mut w = vec![0.0; n];
                for (k, yk) in y.iter().enumerate() {
                    axpy(self.v[(i, k)], yk, &mut w);
                }
                w
            })
            .collect()
    }
}

fn block_dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dot(x, y)).sum()
}

/// Discrete solution of the extension problem with the given lid data (on
/// all hemisphere nodes; values on eliminated equator nodes are ignored).
pub fn solve_extension(
    grid: &HalfBallGrid,
    params: &ProblemParams,
    h: Arc<dyn Perturbation>,
    lid: &[f64],
    opts: &SolveOptions,
) -> Result<GridField> {
    let op = Arc::new(ExtensionOperator::new(grid.clone(), params, h)?);
    solve_with_operator(op, lid, opts)
}

pub fn solve_with_operator(op: Arc<ExtensionOperator>, lid: &[f64], opts: &SolveOptions) -> Result<GridField> {
    let mesh = &op.forms.mesh;
    let n_nodes = mesh.n_nodes();
    if lid.len() != n_nodes {
        return Err(Error::DimensionMismatch {
            expected: n_nodes,
            got: lid.len(),
        });
    }
    let n_sh = op.grid.n_shells();
    let n_s = mesh.n_dofs();
    let mut u = vec![vec![0.0; n_s]; n_sh];
    u[n_sh - 1] = mesh.restrict(lid);
    let free: Vec<usize> = match &opts.inner {
        InnerBoundary::Neumann => (0..n_sh - 1).collect(),
        InnerBoundary::Dirichlet(data) => {
            if data.len() != n_nodes {
                return Err(Error::DimensionMismatch {
                    expected: n_nodes,
                    got: data.len(),
                });
            }
            u[0] = mesh.restrict(data);
            (1..n_sh - 1).collect()
        }
    };
    let pre = RadialPreconditioner::new(&op, &free)?;
    let apply_free = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut full = vec![vec![0.0; n_s]; n_sh];
        for (k, &i) in free.iter().enumerate() {
            full[i].clone_from(&x[k]);
        }
        let y = op.apply(&full);
        free.iter().map(|&i| y[i].clone()).collect()
    };
    let lifted = op.apply(&u);
    let b: Vec<Vec<f64>> = free
        .iter()
        .map(|&i| lifted[i].iter().map(|v| -v).collect())
        .collect();
    let bnorm = block_dot(&b, &b).sqrt();
    let mut x = vec![vec![0.0; n_s]; free.len()];
    let mut iterations = 0;
    let mut rel = 0.0;
    if bnorm > 0.0 {
        let mut r = b.clone();
        let mut z = pre.apply(&r);
        let mut p = z.clone();
        let mut rz = block_dot(&r, &z);
        rel = 1.0;
        while iterations < opts.max_iter {
            let ap = apply_free(&p);
            let pap = block_dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotCoercive {
                    lambda: op.params.lambda(),
                });
            }
            let alpha = rz / pap;
            for k in 0..x.len() {
                axpy(alpha, &p[k], &mut x[k]);
                axpy(-alpha, &ap[k], &mut r[k]);
            }
            iterations += 1;
            rel = block_dot(&r, &r).sqrt() / bnorm;
            if rel <= opts.tol {
                break;
            }
            z = pre.apply(&r);
            let rz_new = block_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..p.len() {
                let pk: Vec<f64> = z[k].iter().zip(&p[k]).map(|(zi, pi)| zi + beta * pi).collect();
                p[k] = pk;
            }
        }
        if rel > opts.tol {
            return Err(Error::NoConvergence {
                what: "preconditioned conjugate gradients",
                iterations,
                residual: rel,
            });
        }
    }
    for (k, &i) in free.iter().enumerate() {
        u[i] = std::mem::take(&mut x[k]);
    }
    Ok(GridField {
        op,
        dofs: u,
        inner: match opts.inner {
            InnerBoundary::Neumann => "neumann",
            InnerBoundary::Dirichlet(_) => "dirichlet",
        },
        iterations,
        residual: rel,
    })
}

/// Inner-shell data r_min^{γ_j} c_j ψ_j for the mode j whose contribution
/// c_j r_min^{γ_j} (c_j the weighted projection of the lid) is largest;
/// ties go to the smallest index. Returns the data and j (from 1).
pub fn dominant_mode_inner_data(es: &EigenSystem, lid: &[f64], r_min: f64) -> Result<(Vec<f64>, usize)> {
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..es.len() {
        let c = crate::sphercap::weighted_product_integral(&es.mesh, &es.psi[j], lid)?;
        let size = (c * r_min.powf(es.gamma[j])).abs();
        if best.is_none_or(|(b, _, _)| size > b * (1.0 + 1e-9)) {
            best = Some((size, j, c));
        }
    }
    let (_, j, c) = best.ok_or_else(|| Error::Invalid("empty eigen system".into()))?;
    let scale = c * r_min.powf(es.gamma[j]);
    Ok((es.psi[j].iter().map(|v| v * scale).collect(), j + 1))
}

/// A discrete solution on the shell grid.
#[derive(Debug, Clone)]
pub struct GridField {
    op: Arc<ExtensionOperator>,
    /// sphere dof values per shell
    dofs: Vec<Vec<f64>>,
    inner: &'static str,
    iterations: usize,
    residual: f64,
}

impl GridField {
    pub fn operator(&self) -> &ExtensionOperator {
        &self.op
    }

    pub fn grid(&self) -> &HalfBallGrid {
        &self.op.grid
    }

    pub fn shell_dofs(&self) -> &[Vec<f64>] {
        &self.dofs
    }

    pub fn shell_nodal(&self, i: usize) -> Vec<f64> {
        self.op.forms.mesh.expand(&self.dofs[i])
    }

    pub fn nodal_values(&self) -> Vec<Vec<f64>> {
        (0..self.dofs.len()).map(|i| self.shell_nodal(i)).collect()
    }

    pub fn inner_condition(&self) -> &'static str {
        self.inner
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Nodal values on the sphere of radius r, linear in r between shells.
    pub fn sphere_values(&self, r: f64) -> Result<Vec<f64>> {
        let radii = &self.op.grid.radii;
        if !(r >= radii[0] * (1.0 - 1e-12) && r <= 1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "radius {r} outside the grid range [{}, 1]",
                radii[0]
            )));
        }
        let k = radii.partition_point(|&x| x < r).clamp(1, radii.len() - 1);
        let (a, b) = (radii[k - 1], radii[k]);
        let w = ((r - a) / (b - a)).clamp(0.0, 1.0);
        let v: Vec<f64> = self.dofs[k - 1]
            .iter()
            .zip(&self.dofs[k])
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect();
        Ok(self.op.forms.mesh.expand(&v))
    }

    /// Weighted L² norm of U − f over the grid, and the norm of f, with f
    /// sampled at the nodes.
    pub fn weighted_l2_difference<F: Fn([f64; 3]) -> f64 + Sync>(&self, f: F) -> (f64, f64) {
        let mesh = &self.op.forms.mesh;
        let radii = &self.op.grid.radii;
        let sampled: Vec<Vec<f64>> = radii
            .par_iter()
            .map(|&r| {
                (0..mesh.n_nodes())
                    .map(|n| {
                        let p = mesh.point(n);
                        f([r * p[0], r * p[1], r * p[2]])
                    })
                    .collect()
            })
            .collect();
        let diff: Vec<Vec<f64>> = sampled
            .iter()
            .enumerate()
            .map(|(i, s)| self.shell_nodal(i).iter().zip(s).map(|(a, b)| a - b).collect())
            .collect();
        (
            self.op.weighted_l2_norm2(&diff).max(0.0).sqrt(),
            self.op.weighted_l2_norm2(&sampled).max(0.0).sqrt(),
        )
    }
}

/// One term β |z|^γ ψ(z/|z|) of a manufactured field.
#[derive(Debug, Clone)]
pub struct Mode {
    /// eigenpair index, from 1
    pub index: usize,
    pub mu: f64,
    pub gamma: f64,
    pub beta: f64,
    pub psi_dofs: Vec<f64>,
}

/// Σ_j β_j |z|^{γ_j} ψ_j(z/|z|), an exact solution of the h ≡ 0 problem.
#[derive(Debug, Clone)]
pub struct ModalField {
    forms: Arc<AssembledForms>,
    params: ProblemParams,
    modes: Vec<Mode>,
}

impl ModalField {
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn forms(&self) -> &AssembledForms {
        &self.forms
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    /// Same modes, new amplitudes.
    pub fn with_betas(&self, betas: &[f64]) -> Self {
        let mut out = self.clone();
        for (m, &b) in out.modes.iter_mut().zip(betas) {
            m.beta = b;
        }
        out
    }

    /// Dof values on the sphere of radius r.
    pub fn sphere_dofs(&self, r: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.forms.mesh.n_dofs()];
        for m in &self.modes {
            axpy(m.beta * r.powf(m.gamma), &m.psi_dofs, &mut v);
        }
        v
    }
}

pub fn manufactured_field(es: &EigenSystem, coefficients: &[(usize, f64)]) -> Result<ModalField> {
    let forms = Arc::new(assemble(&es.mesh, &es.params)?);
    manufactured_field_with_forms(es, forms, coefficients)
}

pub fn manufactured_field_with_forms(es: &EigenSystem, forms: Arc<AssembledForms>, coefficients: &[(usize, f64)]) -> Result<ModalField> {
    if coefficients.is_empty() {
        return Err(Error::Invalid("a manufactured field needs at least one mode".into()));
    }
    let modes = coefficients
        .iter()
        .map(|&(j, beta)| {
            if j == 0 || j > es.len() {
                return Err(Error::OutOfRange { index: j, len: es.len() });
            }
            if !es.gamma[j - 1].is_finite() {
                return Err(Error::Domain(format!("mode {j} has no admissible order")));
            }
            Ok(Mode {
                index: j,
                mu: es.mu[j - 1],
                gamma: es.gamma[j - 1],
                beta,
                psi_dofs: es.psi_dofs[j - 1].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModalField {
        forms,
        params: es.params,
        modes,
    })
}

/// A candidate solution on the half-ball together with its data.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Modal(ModalField),
    Grid(GridField),
}

impl From<ModalField> for ScalarField {
    fn from(f: ModalField) -> Self {
        ScalarField::Modal(f)
    }
}

impl From<GridField> for ScalarField {
    fn from(f: GridField) -> Self {
        ScalarField::Grid(f)
    }
}

impl ScalarField {
    pub fn forms(&self) -> &AssembledForms {
        match self {
            ScalarField::Modal(m) => &m.forms,
            ScalarField::Grid(g) => &g.op.forms,
        }
    }

    pub fn mesh(&self) -> &HemisphereMesh {
        &self.forms().mesh
    }

    pub fn params(&self) -> &ProblemParams {
        match self {
            ScalarField::Modal(m) => &m.params,
            ScalarField::Grid(g) => &g.op.params,
        }
    }

    pub fn cap(&self) -> &SphericalCap {
        self.mesh().cap()
    }

    pub fn perturbation(&self) -> Arc<dyn Perturbation> {
        match self {
            ScalarField::Modal(_) => zero_perturbation(),
            ScalarField::Grid(g) => g.op.h.clone(),
        }
    }

    /// Smallest radius at which the field is available.
    pub fn min_radius(&self) -> f64 {
        match self {
            ScalarField::Modal(_) => 0.0,
            ScalarField::Grid(g) => g.op.grid.r_min(),
        }
    }

    /// Nodal values on the hemisphere of radius r.
    pub fn sphere_values(&self, r: f64) -> Result<Vec<f64>> {
        match self {
            ScalarField::Modal(m) => Ok(m.forms.mesh.expand(&m.sphere_dofs(r))),
            ScalarField::Grid(g) => g.sphere_values(r),
        }
    }

    /// U(z) for z in the closed upper half-ball.
    pub fn value(&self, z: [f64; 3]) -> Result<f64> {
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        let unit = if r > 0.0 { [z[0] / r, z[1] / r, z[2] / r] } else { [0.0, 0.0, 1.0] };
        let vals = self.sphere_values(r)?;
        Ok(self.mesh().interpolate_point(&vals, &unit))
    }

    /// TrU(x) on the thin space.
    pub fn trace(&self, x: [f64; 2]) -> Result<f64> {
        self.value([x[0], x[1], 0.0])
    }
}

/// Header of the binary field layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub n_r: u32,
    pub n_t: u32,
    pub n_theta: u32,
    pub s: f64,
    pub lambda: f64,
    pub r_min: f64,
    pub grading: f64,
    pub cap_start: f64,
    pub cap_length: f64,
}

pub const FIELD_MAGIC: &[u8; 8] = b"CFRACFLD";
pub const FIELD_VERSION: u32 = 1;

impl FieldHeader {
    pub fn of(field: &GridField) -> Self {
        let g = &field.op.grid;
        let mesh = g.mesh();
        Self {
            n_r: g.n_cells() as u32,
            n_t: mesh.n_t() as u32,
            n_theta: mesh.n_theta() as u32,
            s: field.op.params.s(),
            lambda: field.op.params.lambda(),
            r_min: g.r_min(),
            grading: mesh.grading(),
            cap_start: mesh.cap().start(),
            cap_length: mesh.cap().length(),
        }
    }

    /// Number of stored values: shells × (rings × azimuths + pole).
    pub fn value_count(&self) -> usize {
        (self.n_r as usize + 1) * (self.n_t as usize * self.n_theta as usize + 1)
    }
}

/// Write magic, version, header and the nodal values shell by shell
/// (rings outward from the equator, azimuth fastest, pole last), all
/// little-endian.
pub fn write_field<W: Write>(mut w: W, field: &GridField) -> Result<()> {
    let header = FieldHeader::of(field);
    let io = |e: std::io::Error| Error::Invalid(format!("write failed: {e}"));
    w.write_all(FIELD_MAGIC).map_err(io)?;
    for v in [FIELD_VERSION, header.n_r, header.n_t, header.n_theta] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in [header.s, header.lambda, header.r_min, header.grading, header.cap_start, header.cap_length] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for shell in field.nodal_values() {
        for v in shell {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<(FieldHeader, Vec<f64>)> {
    let io = |e: std::io::Error| Error::Invalid(format!("read failed: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Invalid("not a field file".into()));
    }
    let mut u = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u).map_err(io)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = next_u32(&mut r)?;
    if version != FIELD_VERSION {
        return Err(Error::Invalid(format!("unsupported field version {version}")));
    }
    let (n_r, n_t, n_theta) = (next_u32(&mut r)?, next_u32(&mut r)?, next_u32(&mut r)?);
    let mut b = [0u8; 8];
    let mut next_f64 = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut b).map_err(io)?;
        Ok(f64::from_le_bytes(b))
    };
    let header = FieldHeader {
        n_r,
        n_t,
        n_theta,
        s: next_f64(&mut r)?,
        lambda: next_f64(&mut r)?,
        r_min: next_f64(&mut r)?,
        grading: next_f64(&mut r)?,
        cap_start: next_f64(&mut r)?,
        cap_length: next_f64(&mut r)?,
    };
    let count = header.value_count();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(next_f64(&mut r)?);
    }
    Ok((header, values))
}
