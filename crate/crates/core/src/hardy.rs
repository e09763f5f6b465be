//! Fractional Hardy constants of cones through the spherical Rayleigh
//! quotient, reduced to the equator by a Schur complement.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cones::SphericalCap;
use crate::error::{Error, Result};
use crate::linalg::{dense_generalized, BandCholesky};
use crate::params::ProblemParams;
use crate::sphercap::{assemble, build_mesh, AssembledForms};

/// Uniform refinement family: level L has (12·2^L) × (24·2^L) cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    pub n_t: usize,
    pub n_theta: usize,
    pub grading: f64,
}

impl MeshSpec {
    pub const BASE_NT: usize = 12;
    pub const BASE_NTHETA: usize = 24;
    pub const DEFAULT_GRADING: f64 = 1.5;

    pub fn level(level: u32) -> Self {
        Self {
            n_t: Self::BASE_NT << level,
            n_theta: Self::BASE_NTHETA << level,
            grading: Self::DEFAULT_GRADING,
        }
    }

    /// The next coarser mesh with half the cells in each direction.
    pub fn coarsened(&self) -> Option<Self> {
        (self.n_t % 2 == 0 && self.n_theta % 2 == 0 && self.n_t >= 8 && self.n_theta >= 8).then_some(Self {
            n_t: self.n_t / 2,
            n_theta: self.n_theta / 2,
            grading: self.grading,
        })
    }

    /// Level index when the sizes belong to the standard family.
    pub fn level_index(&self) -> Option<u32> {
        (0..12).find(|&l| {
            let m = Self::level(l);
            m.n_t == self.n_t && m.n_theta == self.n_theta
        })
    }

    pub fn forms(&self, params: &ProblemParams, cap: SphericalCap) -> Result<AssembledForms> {
        let mesh = build_mesh(self.n_t, self.n_theta, params.s(), cap, self.grading)?;
        assemble(&mesh, params)
    }
}

#[derive(Debug, Clone)]
pub struct HardyResult {
    pub lambda_star: f64,
    /// minimizer on all mesh nodes, normalized by κ_s ψᵀB_ωψ = 1
    pub minimizer: Vec<f64>,
    pub n_t: usize,
    pub n_theta: usize,
    pub mesh_level: Option<u32>,
    /// two-level extrapolation assuming second-order convergence
    pub richardson: Option<f64>,
    pub cap: SphericalCap,
    pub s: f64,
}

/// Λ = min ψᵀ(K + c²M)ψ / (κ_s ψᵀB_ωψ) over retained dofs, c = (N−2s)/2.
pub fn hardy_constant(forms: &AssembledForms, params: &ProblemParams) -> Result<HardyResult> {
    let mesh = &forms.mesh;
    let c2 = params.half_gap().powi(2);
    let a = forms.stiffness.lin_comb(1.0, &forms.mass, c2)?;
    let boundary: Vec<usize> = mesh
        .robin_nodes()
        .iter()
        .map(|&n| mesh.node_to_dof()[n].expect("Robin nodes are retained"))
        .collect();
    if boundary.is_empty() {
        return Err(Error::Degenerate("the cap contains no equator dofs".into()));
    }
    let mut is_boundary = vec![false; mesh.n_dofs()];
    boundary.iter().for_each(|&d| is_boundary[d] = true);
    let interior: Vec<usize> = (0..mesh.n_dofs()).filter(|&d| !is_boundary[d]).collect();

    let a_ii = a.submatrix(&interior, &interior);
    let a_ib = a.submatrix(&interior, &boundary);
    let a_bb = a.submatrix(&boundary, &boundary);
    let factor = BandCholesky::factor(&a_ii).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => Error::Degenerate(format!(
            "interior block of K + c²M is numerically singular (pivot {pivot}, value {value:e})"
        )),
        other => other,
    })?;
    let nb = boundary.len();
    let columns: Vec<Vec<f64>> = (0..nb)
        .map(|k| (0..interior.len()).map(|i| a_ib.get(i, k)).collect())
        .collect();
    let solved = factor.solve_many(&columns);
    let mut schur = a_bb.to_dense();
    for (k, x) in solved.iter().enumerate() {
        for (l, col) in columns.iter().enumerate() {
            schur[(l, k)] -= crate::linalg::dot(col, x);
        }
    }
    schur = (&schur + schur.transpose()) * 0.5;
    let b: DMatrix<f64> = forms.boundary_mass.submatrix(&boundary, &boundary).to_dense() * params.kappa();
    let (vals, vecs) = dense_generalized(&schur, &b)?;
    let lambda_star = vals[0];
    let mut vb: Vec<f64> = vecs.column(0).iter().copied().collect();
    if vb.iter().sum::<f64>() < 0.0 {
        vb.iter_mut().for_each(|v| *v = -*v);
    }
    let mut dofs = vec![0.0; mesh.n_dofs()];
    for (k, &d) in boundary.iter().enumerate() {
        dofs[d] = vb[k];
    }
    for (i, &d) in interior.iter().enumerate() {
        dofs[d] = -solved.iter().zip(&vb).map(|(x, v)| x[i] * v).sum::<f64>();
    }
    let spec = MeshSpec {
        n_t: mesh.n_t(),
        n_theta: mesh.n_theta(),
        grading: mesh.grading(),
    };
    Ok(HardyResult {
        lambda_star,
        minimizer: mesh.expand(&dofs),
        n_t: mesh.n_t(),
        n_theta: mesh.n_theta(),
        mesh_level: spec.level_index(),
        richardson: None,
        cap: *mesh.cap(),
        s: params.s(),
    })
}

/// Hardy constant on a mesh plus the Richardson estimate from the next
/// coarser mesh.
pub fn hardy_with_richardson(params: &ProblemParams, cap: SphericalCap, spec: MeshSpec) -> Result<HardyResult> {
    let fine = hardy_constant(&spec.forms(params, cap)?, params)?;
    let richardson = match spec.coarsened() {
        Some(coarse) => {
            let c = hardy_constant(&coarse.forms(params, cap)?, params)?;
            Some(fine.lambda_star + (fine.lambda_star - c.lambda_star) / 3.0)
        }
        None => None,
    };
    Ok(HardyResult { richardson, ..fine })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardyScanRow {
    pub arc_length: f64,
    pub lambda_star: f64,
    pub mesh_level: Option<u32>,
    pub richardson: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HardyScan {
    pub rows: Vec<HardyScanRow>,
    /// smallest decrease Λ(L_i) − Λ(L_{i+1}); positive for a strictly decreasing table
    pub min_margin: f64,
}

impl HardyScan {
    pub fn strictly_decreasing(&self, margin: f64) -> bool {
        self.min_margin > margin
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("arc_length,lambda_star,mesh_level,richardson_estimate\n");
        for r in &self.rows {
            let level = r.mesh_level.map(|l| l.to_string()).unwrap_or_default();
            let rich = r.richardson.map(|v| format!("{v:.15e}")).unwrap_or_default();
            let _ = writeln!(s, "{:.15e},{:.15e},{level},{rich}", r.arc_length, r.lambda_star);
        }
        s
    }
}

/// Λ for caps of increasing arc length centred on the downward direction.
pub fn hardy_scan(arc_lengths: &[f64], params: &ProblemParams, spec: MeshSpec, richardson: bool) -> Result<HardyScan> {
    if arc_lengths.is_empty() {
        return Err(Error::Invalid("empty arc-length list".into()));
    }
    if arc_lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("arc lengths must be strictly increasing".into()));
    }
    let rows = arc_lengths
        .par_iter()
        .map(|&len| {
            let cap = SphericalCap::centered_down(len)?;
            let res = if richardson {
                hardy_with_richardson(params, cap, spec)?
            } else {
                hardy_constant(&spec.forms(params, cap)?, params)?
            };
            Ok(HardyScanRow {
                arc_length: len,
                lambda_star: res.lambda_star,
                mesh_level: res.mesh_level,
                richardson: res.richardson,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_margin = rows
        .windows(2)
        .map(|w| w[0].lambda_star - w[1].lambda_star)
        .fold(f64::INFINITY, f64::min);
    Ok(HardyScan { rows, min_margin })
}

/// ∫ r^{N+1−2s}|f′|² dr / ∫ r^{N−1−2s} f² dr for samples f(r_i) on an
/// increasing grid in (0, 1] with f vanishing at both ends; derivatives on
/// each interval by differences, both integrals by the trapezoidal rule.
pub fn radial_hardy_quotient(r: &[f64], f: &[f64], params: &ProblemParams) -> Result<f64> {
    if r.len() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: r.len(),
            got: f.len(),
        });
    }
    if r.len() < 3 || r.windows(2).any(|w| w[1] <= w[0]) || r[0] < 0.0 {
        return Err(Error::Invalid("radial grid must be increasing with at least 3 points".into()));
    }
    let n = params.dim() as f64;
    let s = params.s();
    let (a_num, a_den) = (n + 1.0 - 2.0 * s, n - 1.0 - 2.0 * s);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..r.len() - 1 {
        let h = r[i + 1] - r[i];
        let slope = (f[i + 1] - f[i]) / h;
        let wl = r[i].powf(a_num);
        let wr = r[i + 1].powf(a_num);
        num += 0.5 * h * (wl + wr) * slope * slope;
        let dl = if f[i] == 0.0 { 0.0 } else { r[i].powf(a_den) * f[i] * f[i] };
        let dr = if f[i + 1] == 0.0 { 0.0 } else { r[i + 1].powf(a_den) * f[i + 1] * f[i + 1] };
        den += 0.5 * h * (dl + dr);
    }
    if !(den > 0.0) {
        return Err(Error::Degenerate("zero denominator in the radial quotient".into()));
    }
    Ok(num / den)
}
