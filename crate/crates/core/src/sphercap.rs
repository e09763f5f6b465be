//! Tensor-grid finite elements on the upper half-sphere S²₊ with the
//! degenerate weight (sin t)^{1-2s}.
//!
//! Coordinates: a point is (cos t cos θ, cos t sin θ, sin t) with polar height
//! t ∈ [0, π/2] and azimuth θ ∈ [0, 2π). The equator is t = 0, where the
//! Robin term acts; the pole is a single collapsed node.

use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;

use crate::cones::SphericalCap;
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Triplets};
use crate::params::ProblemParams;
use crate::quadrature::{gauss_jacobi, gauss_legendre, integrate_left_power, Rule};

const T_POINTS: usize = 24;

/// Classification of an equator node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquatorNode {
    /// retained, carries the boundary mass
    Robin,
    /// eliminated, trace forced to zero
    Dirichlet,
}

#[derive(Debug, Clone)]
pub struct HemisphereMesh {
    n_t: usize,
    n_theta: usize,
    grading: f64,
    s: f64,
    cap: SphericalCap,
    t: Vec<f64>,
    theta: Vec<f64>,
    equator: Vec<EquatorNode>,
    node_to_dof: Vec<Option<usize>>,
    dof_to_node: Vec<usize>,
}

impl HemisphereMesh {
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn cap(&self) -> &SphericalCap {
        &self.cap
    }

    /// Ring heights t_0 = 0 < … < t_{n_t-1} < π/2 (the pole is not listed).
    pub fn t_nodes(&self) -> &[f64] {
        &self.t
    }

    pub fn theta_nodes(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_nodes(&self) -> usize {
        self.n_t * self.n_theta + 1
    }

    pub fn pole(&self) -> usize {
        self.n_t * self.n_theta
    }

    pub fn node(&self, ring: usize, j: usize) -> usize {
        ring * self.n_theta + (j % self.n_theta)
    }

    /// (t, θ) of a node; the pole reports θ = 0.
    pub fn coords(&self, node: usize) -> (f64, f64) {
        if node == self.pole() {
            (FRAC_PI_2, 0.0)
        } else {
            (self.t[node / self.n_theta], self.theta[node % self.n_theta])
        }
    }

    pub fn point(&self, node: usize) -> [f64; 3] {
        let (t, th) = self.coords(node);
        [t.cos() * th.cos(), t.cos() * th.sin(), t.sin()]
    }

    pub fn equator_classes(&self) -> &[EquatorNode] {
        &self.equator
    }

    pub fn robin_nodes(&self) -> Vec<usize> {
        (0..self.n_theta)
            .filter(|&j| self.equator[j] == EquatorNode::Robin)
            .collect()
    }

    pub fn n_dirichlet(&self) -> usize {
        self.equator
            .iter()
            .filter(|&&c| c == EquatorNode::Dirichlet)
            .count()
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn node_to_dof(&self) -> &[Option<usize>] {
        &self.node_to_dof
    }

    pub fn dof_to_node(&self) -> &[usize] {
        &self.dof_to_node
    }

    /// Scatter a dof vector to all nodes, zero on Dirichlet nodes.
    pub fn expand(&self, dofs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (d, &node) in self.dof_to_node.iter().enumerate() {
            out[node] = dofs[d];
        }
        out
    }

    /// Gather node values onto the dofs.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_to_node.iter().map(|&n| nodal[n]).collect()
    }

    /// Locate (t, θ): returns ring index, azimuth cell index and the local
    /// coordinates (η, ξ) ∈ [0,1]².
    fn locate(&self, t: f64, theta: f64) -> (usize, usize, f64, f64) {
        let t = t.clamp(0.0, FRAC_PI_2);
        let ring = match self.t.partition_point(|&v| v <= t) {
            0 => 0,
            k => k - 1,
        };
        let top = self.t.get(ring + 1).copied().unwrap_or(FRAC_PI_2);
        let eta = ((t - self.t[ring]) / (top - self.t[ring])).clamp(0.0, 1.0);
        let h = TAU / self.n_theta as f64;
        let th = theta.rem_euclid(TAU);
        let j = ((th / h).floor() as usize).min(self.n_theta - 1);
        let xi = ((th - j as f64 * h) / h).clamp(0.0, 1.0);
        (ring, j, eta, xi)
    }

    /// Bilinear interpolation of a nodal function at (t, θ).
    pub fn interpolate(&self, f: &[f64], t: f64, theta: f64) -> f64 {
        let (ring, j, eta, xi) = self.locate(t, theta);
        let b0 = f[self.node(ring, j)];
        let b1 = f[self.node(ring, j + 1)];
        let bottom = (1.0 - xi) * b0 + xi * b1;
        let top = if ring + 1 == self.n_t {
            f[self.pole()]
        } else {
            (1.0 - xi) * f[self.node(ring + 1, j)] + xi * f[self.node(ring + 1, j + 1)]
        };
        (1.0 - eta) * bottom + eta * top
    }

    /// Interpolation at a point of the closed upper half-sphere.
    pub fn interpolate_point(&self, f: &[f64], z: &[f64; 3]) -> f64 {
        let (t, th) = sphere_coords(z);
        self.interpolate(f, t, th)
    }

    /// Position of each dof in the banded ordering: rings outward from the
    /// equator, azimuth folded so that periodic neighbours stay close.
    pub fn band_permutation(&self) -> Vec<usize> {
        // dofs are already numbered in this order
        (0..self.n_dofs()).collect()
    }
}

/// (t, θ) of a unit vector with nonnegative last component.
pub fn sphere_coords(z: &[f64; 3]) -> (f64, f64) {
    let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
    let t = (z[2] / r).clamp(-1.0, 1.0).asin();
    (t, z[1].atan2(z[0]).rem_euclid(TAU))
}

fn fold(j: usize, n: usize) -> usize {
    let half = n.div_ceil(2);
    if j < half {
        2 * j
    } else {
        2 * (n - 1 - j) + 1
    }
}

pub fn build_mesh(n_t: usize, n_theta: usize, s: f64, cap: SphericalCap, grading: f64) -> Result<HemisphereMesh> {
    if n_t < 4 || n_theta < 4 {
        return Err(Error::Invalid(format!(
            "mesh needs at least 4 cells per direction (nt={n_t}, ntheta={n_theta})"
        )));
    }
    if !(grading >= 1.0) {
        return Err(Error::Invalid(format!("grading must be ≥ 1, got {grading}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s must lie in (0,1), got {s}")));
    }
    if !(cap.length() > 0.0) {
        return Err(Error::Degenerate("cap of zero length".into()));
    }
    let t: Vec<f64> = (0..n_t)
        .map(|i| FRAC_PI_2 * (i as f64 / n_t as f64).powf(grading))
        .collect();
    let theta: Vec<f64> = (0..n_theta).map(|j| TAU * j as f64 / n_theta as f64).collect();
    let equator: Vec<EquatorNode> = theta
        .iter()
        .map(|&th| {
            if cap.contains_open(th) {
                EquatorNode::Robin
            } else {
                EquatorNode::Dirichlet
            }
        })
        .collect();
    let n_nodes = n_t * n_theta + 1;
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(n_nodes);
    for i in 0..n_t {
        for j in 0..n_theta {
            if i == 0 && equator[j] == EquatorNode::Dirichlet {
                continue;
            }
            order.push((i * n_theta + fold(j, n_theta), i * n_theta + j));
        }
    }
    order.push((n_nodes - 1, n_nodes - 1));
    order.sort_unstable();
    let dof_to_node: Vec<usize> = order.into_iter().map(|(_, node)| node).collect();
    let mut node_to_dof = vec![None; n_nodes];
    for (d, &node) in dof_to_node.iter().enumerate() {
        node_to_dof[node] = Some(d);
    }
    Ok(HemisphereMesh {
        n_t,
        n_theta,
        grading,
        s,
        cap,
        t,
        theta,
        equator,
        node_to_dof,
        dof_to_node,
    })
}

/// Integrals ∫ w N_a N_b dt over one t-cell with N_0 = 1-η, N_1 = η and
/// η = (t - t0)/(t1 - t0).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments([f64; 3]);

impl Moments {
    pub(crate) fn shape_products(&self) -> [[f64; 2]; 2] {
        let [p00, p01, p11] = self.0;
        [[p00, p01], [p01, p11]]
    }

    /// ∫ w dt
    pub(crate) fn total(&self) -> f64 {
        let [p00, p01, p11] = self.0;
        p00 + 2.0 * p01 + p11
    }

    /// ∫ w η^k dt for k = 0, 1, 2.
    fn powers(&self) -> [f64; 3] {
        let [_, p01, p11] = self.0;
        [self.total(), p01 + p11, p11]
    }
}

pub(crate) struct CellWeights {
    /// mass weight (sin t)^{1-2s} cos t
    pub(crate) mass: Moments,
    /// azimuthal stiffness weight (sin t)^{1-2s} / cos t
    pub(crate) azimuthal: Moments,
}

pub(crate) struct WeightRules {
    beta: f64,
    legendre: Rule,
    jacobi: Rule,
}

impl WeightRules {
    pub(crate) fn new(s: f64) -> Result<Self> {
        let beta = 1.0 - 2.0 * s;
        Ok(Self {
            beta,
            legendre: gauss_legendre(T_POINTS),
            jacobi: gauss_jacobi(T_POINTS, 0.0, beta)?,
        })
    }

    /// Shape products of w(t) = (sin t)^β · extra(t) on [t0, t1].
    fn moments<F: Fn(f64) -> f64>(&self, t0: f64, t1: f64, extra: F) -> Moments {
        let h = t1 - t0;
        let shapes = |eta: f64| [(1.0 - eta) * (1.0 - eta), (1.0 - eta) * eta, eta * eta];
        let mut m = [0.0; 3];
        for (k, mk) in m.iter_mut().enumerate() {
            *mk = if t0 == 0.0 {
                // the factor t^β is integrated exactly by the Jacobi rule
                integrate_left_power(&self.jacobi, self.beta, t0, t1, |t| {
                    let ratio = if t > 0.0 { t.sin() / t } else { 1.0 };
                    ratio.powf(self.beta) * extra(t) * shapes(t / h)[k]
                })
            } else {
                self.legendre.integrate(t0, t1, |t| {
                    t.sin().powf(self.beta) * extra(t) * shapes((t - t0) / h)[k]
                })
            };
        }
        Moments(m)
    }

    pub(crate) fn cell(&self, t0: f64, t1: f64) -> CellWeights {
        CellWeights {
            mass: self.moments(t0, t1, f64::cos),
            azimuthal: self.moments(t0, t1, |t| 1.0 / t.cos()),
        }
    }
}

/// Per-ring weight integrals shared by assembly and the quadrature helpers.
struct RingWeights {
    cells: Vec<CellWeights>,
}

impl RingWeights {
    fn new(mesh: &HemisphereMesh) -> Result<Self> {
        let rules = WeightRules::new(mesh.s)?;
        let cells = (0..mesh.n_t)
            .into_par_iter()
            .map(|i| {
                let t0 = mesh.t[i];
                let t1 = mesh.t.get(i + 1).copied().unwrap_or(FRAC_PI_2);
                rules.cell(t0, t1)
            })
            .collect();
        Ok(Self { cells })
    }
}

/// Weak-form matrices on the retained dofs together with full nodal mass.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub mesh: HemisphereMesh,
    /// ∫ w [ψ_t φ_t + cos⁻²t ψ_θ φ_θ] cos t
    pub stiffness: CsrMatrix,
    /// ∫ w ψ φ cos t
    pub mass: CsrMatrix,
    /// ∫_ω Trψ Trφ dθ
    pub boundary_mass: CsrMatrix,
    /// weighted mass on every node, Dirichlet nodes included
    pub nodal_mass: CsrMatrix,
    /// equator mass on every equator node (full circle)
    pub equator_mass: CsrMatrix,
}

pub fn assemble(mesh: &HemisphereMesh, params: &ProblemParams) -> Result<AssembledForms> {
    if params.dim() != 2 {
        return Err(Error::Invalid(format!(
            "the hemisphere discretization is planar-cone only (N = 2), got N = {}",
            params.dim()
        )));
    }
    if (params.s() - mesh.s).abs() > 1e-15 {
        return Err(Error::Invalid(format!(
            "mesh built for s = {} but parameters have s = {}",
            mesh.s,
            params.s()
        )));
    }
    let weights = RingWeights::new(mesh)?;
    let nt = mesh.n_theta;
    let h = TAU / nt as f64;
    let lmass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let lstiff = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let n_nodes = mesh.n_nodes();

    let per_ring: Vec<(Triplets, Triplets)> = (0..mesh.n_t)
        .into_par_iter()
        .map(|i| {
            let cw = &weights.cells[i];
            let t0 = mesh.t[i];
            let t1 = mesh.t.get(i + 1).copied().unwrap_or(FRAC_PI_2);
            let ht = t1 - t0;
            let pm = cw.mass.shape_products();
            let pk = cw.azimuthal.shape_products();
            let m0 = cw.mass.total();
            // ∫ w N_a' N_b' dt with N' = ∓1/h
            let dd = [[m0 / (ht * ht), -m0 / (ht * ht)], [-m0 / (ht * ht), m0 / (ht * ht)]];
            let pole_cell = i + 1 == mesh.n_t;
            let mut kt = Triplets::with_capacity(n_nodes, n_nodes, 16 * nt);
            let mut mt = Triplets::with_capacity(n_nodes, n_nodes, 16 * nt);
            for j in 0..nt {
                // local nodes: (a=0 bottom, a=1 top) × (b=0 left, b=1 right)
                let node = |a: usize, b: usize| {
                    if a == 1 && pole_cell {
                        mesh.pole()
                    } else {
                        mesh.node(i + a, j + b)
                    }
                };
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            for d in 0..2 {
                                let p = node(a, b);
                                let q = node(c, d);
                                let mut kval = dd[a][c] * lmass[b][d];
                                // the azimuthal derivative of the collapsed pole
                                // function vanishes identically
                                if !(pole_cell && (a == 1 || c == 1)) {
                                    kval += pk[a][c] * lstiff[b][d];
                                }
                                kt.push(p, q, kval);
                                mt.push(p, q, pm[a][c] * lmass[b][d]);
                            }
                        }
                    }
                }
            }
            (kt, mt)
        })
        .collect();
    let mut k_all = Triplets::new(n_nodes, n_nodes);
    let mut m_all = Triplets::new(n_nodes, n_nodes);
    for (kt, mt) in per_ring {
        k_all.extend(kt);
        m_all.extend(mt);
    }
    let k_full = k_all.to_csr();
    let m_full = m_all.to_csr();

    let mut eq = Triplets::new(nt, nt);
    for j in 0..nt {
        let jn = (j + 1) % nt;
        for (b, p) in [j, jn].into_iter().enumerate() {
            for (d, q) in [j, jn].into_iter().enumerate() {
                eq.push(p, q, lmass[b][d]);
            }
        }
    }
    let equator_mass = eq.to_csr();

    let dofs = mesh.dof_to_node();
    let stiffness = k_full.submatrix(dofs, dofs);
    let mass = m_full.submatrix(dofs, dofs);
    for d in 0..mass.n_rows() {
        if !(mass.get(d, d) > 0.0) {
            return Err(Error::Degenerate(format!("singular mass at dof {d}")));
        }
    }
    let mut bt = Triplets::new(dofs.len(), dofs.len());
    for p in 0..nt {
        let (cols, vals) = equator_mass.row(p);
        for (&q, &v) in cols.iter().zip(vals) {
            if let (Some(dp), Some(dq)) = (mesh.node_to_dof[p], mesh.node_to_dof[q]) {
                bt.push(dp, dq, v);
            }
        }
    }
    Ok(AssembledForms {
        mesh: mesh.clone(),
        stiffness,
        mass,
        boundary_mass: bt.to_csr(),
        nodal_mass: m_full,
        equator_mass,
    })
}

/// ∫_{S²₊} (sin t)^{1-2s} I(f) dσ for the bilinear interpolant I(f).
pub fn weighted_surface_integral(mesh: &HemisphereMesh, f: &[f64]) -> Result<f64> {
    let ones = vec![1.0; mesh.n_nodes()];
    weighted_product_integral(mesh, f, &ones)
}

/// ∫_{S²₊} (sin t)^{1-2s} I(f) I(g) dσ, computed cell by cell.
pub fn weighted_product_integral(mesh: &HemisphereMesh, f: &[f64], g: &[f64]) -> Result<f64> {
    let n = mesh.n_nodes();
    for v in [f, g] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let weights = RingWeights::new(mesh)?;
    let nt = mesh.n_theta;
    let h = TAU / nt as f64;
    let total = (0..mesh.n_t)
        .into_par_iter()
        .map(|i| {
            let [m0, m1, m2] = weights.cells[i].mass.powers();
            let top = |j: usize, g: &[f64]| {
                if i + 1 == mesh.n_t {
                    g[mesh.pole()]
                } else {
                    g[mesh.node(i + 1, j)]
                }
            };
            let mut acc = 0.0;
            for j in 0..nt {
                // restrict to each azimuthal edge: u(η) = (1-η) u0 + η u1, then
                // ∫∫ (1-ξ, ξ)-interpolated products in closed form
                let edge = |jj: usize, v: &[f64]| (v[mesh.node(i, jj)], top(jj, v));
                let (fa0, fa1) = edge(j, f);
                let (fb0, fb1) = edge(j + 1, f);
                let (ga0, ga1) = edge(j, g);
                let (gb0, gb1) = edge(j + 1, g);
                // ∫ w u v dt for linear-in-η u, v
                let lin = |u0: f64, u1: f64, v0: f64, v1: f64| {
                    u0 * v0 * m0 + (u0 * (v1 - v0) + v0 * (u1 - u0)) * m1 + (u1 - u0) * (v1 - v0) * m2
                };
                let aa = lin(fa0, fa1, ga0, ga1);
                let bb = lin(fb0, fb1, gb0, gb1);
                let ab = lin(fa0, fa1, gb0, gb1) + lin(fb0, fb1, ga0, ga1);
                acc += h * (aa / 3.0 + bb / 3.0 + ab / 6.0);
            }
            acc
        })
        .sum();
    Ok(total)
}

/// ∫_ω I(f) dθ over the true arc of the cap, using equator node values.
pub fn boundary_integral(mesh: &HemisphereMesh, f: &[f64]) -> Result<f64> {
    if f.len() != mesh.n_nodes() && f.len() != mesh.n_theta {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_nodes(),
            got: f.len(),
        });
    }
    let nt = mesh.n_theta;
    let h = TAU / nt as f64;
    let cap = mesh.cap;
    let (a, b) = if cap.is_full() {
        (0.0, TAU)
    } else {
        (cap.start(), cap.end())
    };
    // walk the unwrapped azimuth from a to b segment by segment
    let mut total = 0.0;
    let mut x = a;
    while x < b - 1e-15 {
        let k = (x / h + 1e-12).floor();
        let seg_end = ((k + 1.0) * h).min(b);
        let j = (k as i64).rem_euclid(nt as i64) as usize;
        let (f0, f1) = (f[j], f[(j + 1) % nt]);
        let lin = |y: f64| f0 + (f1 - f0) * (y / h - k);
        total += 0.5 * (seg_end - x) * (lin(x) + lin(seg_end));
        x = seg_end;
    }
    Ok(total)
}
