//! Frequency analysis of solutions near the cone vertex: the boundary mass
//! H(r), the scaled energy D(r), the frequency 𝒩 = D/H, blow-up rescalings,
//! the spherical Fourier coefficients and the Pohozaev balance.
//!
//! Modal fields are handled in closed form through the Gram matrices of
//! their modes. Grid fields are evaluated shell by shell; D on a shell is
//! taken from the discrete flux u_iᵀ(A u)_i restricted to the cells inside
//! the shell, which for a discrete solution equals the discrete energy of
//! the ball it bounds.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extension::{GridField, ModalField, ScalarField};
use crate::linalg::dot;
use crate::params::ProblemParams;
use crate::spectral::EigenSystem;

pub const DEFAULT_R0: f64 = 0.8;
pub const DEFAULT_RADII: usize = 40;
pub const SMALLEST_RADIUS: f64 = 1e-2;
const FIT_CONDITION_LIMIT: f64 = 1e8;
const PROVENANCE_TOL: f64 = 1e-12;

/// n geometrically spaced points from lo to hi inclusive.
pub fn geometric_radii(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::Domain(format!(
            "need 0 < lo < hi and n ≥ 2 (lo={lo}, hi={hi}, n={n})"
        )));
    }
    let q = (hi / lo).ln() / (n - 1) as f64;
    let mut r: Vec<f64> = (0..n).map(|i| lo * (q * i as f64).exp()).collect();
    r[n - 1] = hi;
    Ok(r)
}

/// Default analysis radii: 40 geometric points over [1e−2, R₀] for modal
/// fields, the shells in [max(1e−2, 10 r_min), R₀] for grid fields.
pub fn default_radii(field: &ScalarField, r0: f64) -> Result<Vec<f64>> {
    match field {
        ScalarField::Modal(_) => geometric_radii(SMALLEST_RADIUS, r0, DEFAULT_RADII),
        ScalarField::Grid(g) => {
            let lo = SMALLEST_RADIUS.max(10.0 * g.grid().r_min()) * (1.0 - 1e-9);
            let radii: Vec<f64> = g
                .grid()
                .radii()
                .iter()
                .copied()
                .filter(|&r| r >= lo && r <= r0 * (1.0 + 1e-12))
                .collect();
            if radii.len() < 4 {
                return Err(Error::Domain(format!(
                    "only {} shells fall in [{lo}, {r0}]",
                    radii.len()
                )));
            }
            Ok(radii)
        }
    }
}

/// Gram matrices of the modes of a modal field.
struct ModeForms {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    /// ψ_jᵀ M ψ_k
    m: DMatrix<f64>,
    /// ψ_jᵀ K ψ_k
    k: DMatrix<f64>,
    /// ψ_jᵀ B_ω ψ_k
    b: DMatrix<f64>,
}

impl ModeForms {
    fn new(f: &ModalField) -> Self {
        let forms = f.forms();
        let modes = f.modes();
        let n = modes.len();
        let gram = |a: &crate::linalg::CsrMatrix| {
            let images: Vec<Vec<f64>> = modes.iter().map(|m| a.mul_vec(&m.psi_dofs)).collect();
            DMatrix::from_fn(n, n, |i, j| dot(&modes[i].psi_dofs, &images[j]))
        };
        Self {
            gamma: modes.iter().map(|m| m.gamma).collect(),
            beta: modes.iter().map(|m| m.beta).collect(),
            m: gram(&forms.mass),
            k: gram(&forms.stiffness),
            b: gram(&forms.boundary_mass),
        }
    }

    fn len(&self) -> usize {
        self.gamma.len()
    }

    /// Σ_{jk} c_j c_k r^{γ_j+γ_k} w(j, k).
    fn quad(&self, c: &[f64], r: f64, w: impl Fn(usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.len() {
            for k in 0..self.len() {
                total += c[j] * c[k] * r.powf(self.gamma[j] + self.gamma[k]) * w(j, k);
            }
        }
        total
    }

    /// Weighted H¹(B⁺₁, t^{1−2s}) norm squared of Σ c_j |z|^{γ_j} ψ_j.
    fn h1_norm2(&self, c: &[f64], gap: f64) -> f64 {
        let g = &self.gamma;
        self.quad(c, 1.0, |j, k| {
            let e = g[j] + g[k] + gap;
            (g[j] * g[k] * self.m[(j, k)] + self.k[(j, k)]) / e + self.m[(j, k)] / (e + 2.0)
        })
    }
}

/// Both sides of the Pohozaev balance and of the Green identity at one
/// radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PohozaevCheck {
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
    pub satisfied: bool,
    /// energy of B⁺_r minus the trace potential term
    pub green_volume: f64,
    /// ∫_{∂⁺B_r} t^{1−2s} U ∂_ν U
    pub green_flux: f64,
    pub green_residual: f64,
}

/// Evaluator of the frequency quantities of one field.
pub struct Almgren<'a> {
    field: &'a ScalarField,
    params: ProblemParams,
    modes: Option<ModeForms>,
}

impl<'a> Almgren<'a> {
    pub fn new(field: &'a ScalarField) -> Self {
        let modes = match field {
            ScalarField::Modal(m) => Some(ModeForms::new(m)),
            ScalarField::Grid(_) => None,
        };
        Self {
            field,
            params: *field.params(),
            modes,
        }
    }

    fn gap(&self) -> f64 {
        2.0 * self.params.half_gap()
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        let lo = self.field.min_radius();
        if !(r > 0.0 && r >= lo * (1.0 - 1e-12) && r <= 1.0 + 1e-12) {
            return Err(Error::Domain(format!("radius {r} outside ({lo}, 1]")));
        }
        Ok(())
    }

    fn shell(g: &GridField, r: f64) -> Result<usize> {
        g.grid().shell_index(r).ok_or_else(|| {
            Error::Domain(format!("radius {r} is not a shell of the grid"))
        })
    }

    /// H(r) = r^{2s−N−1} ∫_{∂⁺B_r} t^{1−2s} U² dS.
    pub fn h(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        let value = self.h_unchecked(r)?;
        if !(value > 0.0) {
            return Err(Error::TrivialField(format!("H({r}) = {value:e} is not positive")));
        }
        Ok(value)
    }

    fn h_unchecked(&self, r: f64) -> Result<f64> {
        Ok(match (self.field, &self.modes) {
            (ScalarField::Modal(_), Some(mf)) => mf.quad(&mf.beta, r, |j, k| mf.m[(j, k)]),
            (ScalarField::Grid(g), _) => {
                let m = &g.operator().forms().mass;
                match g.grid().shell_index(r) {
                    Some(i) => {
                        let u = &g.shell_dofs()[i];
                        dot(u, &m.mul_vec(u))
                    }
                    None => {
                        let u = g.operator().forms().mesh.restrict(&g.sphere_values(r)?);
                        dot(&u, &m.mul_vec(&u))
                    }
                }
            }
            _ => unreachable!(),
        })
    }

    /// D(r) = r^{2s−N}(∫_{B⁺_r} t^{1−2s}|∇U|² − κ_s ∫_{𝒞∩B′_r}(h + λ|x|^{−2s}) TrU²).
    pub fn d(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        match (self.field, &self.modes) {
            (ScalarField::Modal(_), Some(mf)) => {
                let g = &mf.gamma;
                let lk = self.params.lambda() * self.params.kappa();
                for &gj in g {
                    if !(2.0 * gj + self.gap() > 0.0) {
                        return Err(Error::NonIntegrable(format!(
                            "mode order {gj} makes the trace potential term diverge at the vertex"
                        )));
                    }
                }
                Ok(mf.quad(&mf.beta, r, |j, k| {
                    (g[j] * g[k] * mf.m[(j, k)] + mf.k[(j, k)] - lk * mf.b[(j, k)])
                        / (g[j] + g[k] + self.gap())
                }))
            }
            (ScalarField::Grid(gf), _) => {
                let i = Self::shell(gf, r)?;
                let scale = r.powf(-self.gap());
                Ok(scale * gf.operator().form_inside_shell(gf.shell_dofs(), i))
            }
            _ => unreachable!(),
        }
    }

    pub fn frequency(&self, r: f64) -> Result<f64> {
        Ok(self.d(r)? / self.h(r)?)
    }

    /// dH/dr by fourth-order central differences: in r for modal fields, in
    /// ln r over neighbouring shells for grid fields.
    pub fn h_prime(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        match self.field {
            ScalarField::Modal(_) => {
                let e = 1e-3 * r;
                let f = |x: f64| self.h_unchecked(x);
                Ok((-f(r + 2.0 * e)? + 8.0 * f(r + e)? - 8.0 * f(r - e)? + f(r - 2.0 * e)?) / (12.0 * e))
            }
            ScalarField::Grid(g) => {
                let i = Self::shell(g, r)?;
                let n = g.grid().n_shells();
                if i < 2 || i + 2 >= n {
                    return Err(Error::Domain(format!(
                        "shell {i} lacks two neighbours on each side"
                    )));
                }
                let m = &g.operator().forms().mass;
                let u = g.shell_dofs();
                let hv = |k: usize| dot(&u[k], &m.mul_vec(&u[k]));
                let step = g.grid().ratio().ln();
                let dh = (-hv(i + 2) + 8.0 * hv(i + 1) - 8.0 * hv(i - 1) + hv(i - 2)) / (12.0 * step);
                Ok(dh / r)
            }
        }
    }

    /// |H′(r) − 2D(r)/r| / |H′(r)|; zero when both sides vanish relative to
    /// H(r)/r.
    pub fn h_prime_residual(&self, r: f64) -> Result<f64> {
        let hp = self.h_prime(r)?;
        let rhs = 2.0 * self.d(r)? / r;
        let floor = 1e-10 * self.h(r)? / r;
        let denom = hp.abs().max(rhs.abs());
        if denom <= floor {
            return Ok(0.0);
        }
        Ok((hp - rhs).abs() / hp.abs().max(floor))
    }

    /// Shell derivative dU/d ln r by the five-point stencil.
    fn log_derivative(g: &GridField, i: usize) -> Result<Vec<f64>> {
        let n = g.grid().n_shells();
        if i < 2 || i + 2 >= n {
            return Err(Error::Domain(format!(
                "shell {i} lacks two neighbours on each side"
            )));
        }
        let u = g.shell_dofs();
        let step = g.grid().ratio().ln();
        Ok((0..u[i].len())
            .map(|k| (-u[i + 2][k] + 8.0 * u[i + 1][k] - 8.0 * u[i - 1][k] + u[i - 2][k]) / (12.0 * step))
            .collect())
    }

    /// Pohozaev balance at radius r: lhs ≥ rhs − rel_tol·max(|lhs|, |rhs|),
    /// up to a roundoff floor, is the inequality; the Green identity is reported alongside.
    pub fn pohozaev(&self, r: f64, rel_tol: f64) -> Result<PohozaevCheck> {
        self.check_radius(r)?;
        let n = self.params.dim() as f64;
        let kappa = self.params.kappa();
        let lk = self.params.lambda() * kappa;
        let half_gap = self.params.half_gap();
        let rg = r.powf(self.gap());
        let (lhs, rhs, green_volume, green_flux) = match (self.field, &self.modes) {
            (ScalarField::Modal(_), Some(mf)) => {
                let g = &mf.gamma;
                let sphere = mf.quad(&mf.beta, r, |j, k| g[j] * g[k] * mf.m[(j, k)] + mf.k[(j, k)] - lk * mf.b[(j, k)]);
                let normal = mf.quad(&mf.beta, r, |j, k| g[j] * g[k] * mf.m[(j, k)]);
                let d = self.d(r)?;
                let flux = mf.quad(&mf.beta, r, |j, k| 0.5 * (g[j] + g[k]) * mf.m[(j, k)]);
                (rg * (0.5 * sphere - normal), half_gap * rg * d, rg * d, rg * flux)
            }
            (ScalarField::Grid(gf), _) => {
                let i = Self::shell(gf, r)?;
                let op = gf.operator();
                let forms = op.forms();
                let u = gf.shell_dofs();
                let du = Self::log_derivative(gf, i)?;
                let radial = dot(&du, &forms.mass.mul_vec(&du));
                let pencil = forms.stiffness.lin_comb(1.0, &forms.boundary_mass, -lk)?;
                let tangential = dot(&u[i], &pencil.mul_vec(&u[i]));
                let flux_form = op.form_inside_shell(u, i);
                let mut lhs = rg * (0.5 * (radial + tangential) - radial);
                let mut volume = flux_form;
                let h = op.perturbation().clone();
                if !h.is_zero() {
                    volume += op.trace_form_below(op.h_cells(), u, i);
                    let hp = h.clone();
                    let w = move |x: [f64; 2]| {
                        let gr = hp.gradient(x);
                        kappa * (gr[0] * x[0] + gr[1] * x[1] + n * hp.value(x))
                    };
                    let cells = op.trace_cells(&w);
                    lhs += 0.5 * op.trace_form_below(&cells, u, i);
                    let ring = op.ring_integral(r, &u[i], &|x| h.value(x));
                    lhs -= 0.5 * kappa * r.powf(n) * ring;
                }
                let flux = rg * dot(&u[i], &forms.mass.mul_vec(&du));
                (lhs, half_gap * volume, flux_form, flux)
            }
            _ => unreachable!(),
        };
        // absolute floor: both sides vanish for fields with no energy
        let floor = 1e-12 * rg * self.h(r)?;
        let tol = rel_tol * lhs.abs().max(rhs.abs()) + floor;
        let green_scale = green_volume.abs().max(green_flux.abs());
        let green_residual = if green_scale <= floor {
            0.0
        } else {
            (green_volume - green_flux).abs() / green_scale
        };
        Ok(PohozaevCheck {
            r,
            lhs,
            rhs,
            tol,
            satisfied: lhs >= rhs - tol,
            green_volume,
            green_flux,
            green_residual,
        })
    }
}

pub fn compute_h(field: &ScalarField, r: f64) -> Result<f64> {
    Almgren::new(field).h(r)
}

pub fn compute_d(field: &ScalarField, r: f64) -> Result<f64> {
    Almgren::new(field).d(r)
}

pub fn check_h_prime_identity(field: &ScalarField, r: f64) -> Result<f64> {
    Almgren::new(field).h_prime_residual(r)
}

pub fn pohozaev_check(field: &ScalarField, r: f64, rel_tol: f64) -> Result<PohozaevCheck> {
    Almgren::new(field).pohozaev(r, rel_tol)
}

/// Least-squares fit 𝒩(r) ≈ γ + c r^δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyFit {
    pub gamma_hat: f64,
    pub error_bar: f64,
    pub c: f64,
    pub delta: f64,
    pub delta_fixed: bool,
    pub condition: f64,
    /// true when the fit was too ill-conditioned and the smallest-radius
    /// value is reported instead
    pub fallback: bool,
    pub n_points: usize,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    // condition number of the design matrix [1, x] from its normal matrix
    let tr = n + sxx;
    let det = n * sxx - sx * sx;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let (lmax, lmin) = (0.5 * tr + disc, 0.5 * tr - disc);
    let cond = if lmin > 0.0 { (lmax / lmin).sqrt() } else { f64::INFINITY };
    if !(det > 0.0) {
        return (sy / n, 0.0, f64::INFINITY, cond);
    }
    let c = (n * sxy - sx * sy) / det;
    let g = (sy - c * sx) / n;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - g - c * a).powi(2)).sum();
    (g, c, ssr, cond)
}

/// Fit on the smallest half of the radii; δ fixed when given, otherwise
/// chosen to minimize the residual among well-conditioned exponents.
pub fn fit_frequency(radii: &[f64], ncal: &[f64], delta: Option<f64>) -> Result<FrequencyFit> {
    if radii.len() != ncal.len() {
        return Err(Error::DimensionMismatch {
            expected: radii.len(),
            got: ncal.len(),
        });
    }
    if radii.len() < 2 {
        return Err(Error::Invalid("need at least two radii to fit".into()));
    }
    let mut idx: Vec<usize> = (0..radii.len()).collect();
    idx.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let m = radii.len().div_ceil(2).max(3).min(radii.len());
    let r: Vec<f64> = idx[..m].iter().map(|&i| radii[i]).collect();
    let y: Vec<f64> = idx[..m].iter().map(|&i| ncal[i]).collect();
    let eval = |d: f64| {
        let x: Vec<f64> = r.iter().map(|v| v.powf(d)).collect();
        linear_fit(&x, &y)
    };
    let spread = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - y.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let fallback = FrequencyFit {
        gamma_hat: y[0],
        error_bar: spread.max(f64::EPSILON),
        c: 0.0,
        delta: delta.unwrap_or(f64::NAN),
        delta_fixed: delta.is_some(),
        condition: f64::INFINITY,
        fallback: true,
        n_points: m,
    };
    let (best_delta, (g, c, ssr, cond)) = match delta {
        Some(d) => {
            if !(d > 0.0) {
                return Ok(fallback);
            }
            (d, eval(d))
        }
        None => {
            let ok = |d: f64| {
                let f = eval(d);
                if f.3 <= FIT_CONDITION_LIMIT {
                    f.2
                } else {
                    f64::INFINITY
                }
            };
            let grid: Vec<f64> = (0..=120).map(|k| 0.05 * (120f64).powf(k as f64 / 120.0)).collect();
            let (kbest, sbest) = grid
                .iter()
                .enumerate()
                .map(|(k, &d)| (k, ok(d)))
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
            if !sbest.is_finite() {
                return Ok(fallback);
            }
            let (mut a, mut b) = (grid[kbest.saturating_sub(1)], grid[(kbest + 1).min(grid.len() - 1)]);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let mut x1 = b - phi * (b - a);
            let mut x2 = a + phi * (b - a);
            let (mut f1, mut f2) = (ok(x1), ok(x2));
            for _ in 0..60 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = ok(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = ok(x2);
                }
            }
            let d = if f1.min(f2) <= sbest { 0.5 * (a + b) } else { grid[kbest] };
            (d, eval(d))
        }
    };
    if !(cond <= FIT_CONDITION_LIMIT) || !g.is_finite() {
        return Ok(fallback);
    }
    let dof = (m as f64 - 2.0).max(1.0);
    Ok(FrequencyFit {
        gamma_hat: g,
        error_bar: (ssr / dof).sqrt(),
        c,
        delta: best_delta,
        delta_fixed: delta.is_some(),
        condition: cond,
        fallback: false,
        n_points: m,
    })
}

/// H, D and 𝒩 over a set of radii with the extrapolated limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrace {
    pub radii: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub ncal: Vec<f64>,
    pub r0: f64,
    pub fit: FrequencyFit,
}

impl FrequencyTrace {
    pub fn gamma_hat(&self) -> f64 {
        self.fit.gamma_hat
    }

    pub fn min_frequency(&self) -> f64 {
        self.ncal.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// 𝒩 > −(N−2s)/2 at every radius.
    pub fn above_lower_bound(&self, params: &ProblemParams) -> bool {
        self.min_frequency() > -params.half_gap()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,H,D,Ncal\n");
        for i in 0..self.radii.len() {
            let _ = writeln!(
                s,
                "{:.15e},{:.15e},{:.15e},{:.15e}",
                self.radii[i], self.h[i], self.d[i], self.ncal[i]
            );
        }
        s
    }
}

/// Frequency trace with δ = 2s − N/p when h ≢ 0 and δ free otherwise.
pub fn frequency_trace(field: &ScalarField, radii: &[f64], r0: f64) -> Result<FrequencyTrace> {
    if radii.is_empty() {
        return Err(Error::Invalid("no radii given".into()));
    }
    if let Some(&bad) = radii.iter().find(|&&r| !(r > 0.0 && r <= r0 * (1.0 + 1e-12))) {
        return Err(Error::Domain(format!("radius {bad} outside (0, R0={r0}]")));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let an = Almgren::new(field);
    let rows = radii
        .par_iter()
        .map(|&r| Ok((an.h(r)?, an.d(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = rows.iter().map(|v| v.0).collect();
    let d: Vec<f64> = rows.iter().map(|v| v.1).collect();
    let ncal: Vec<f64> = h.iter().zip(&d).map(|(a, b)| b / a).collect();
    let delta = if field.perturbation().is_zero() {
        None
    } else {
        Some(field.params().remainder_exponent())
    };
    let fit = fit_frequency(&radii, &ncal, delta)?;
    Ok(FrequencyTrace {
        radii,
        h,
        d,
        ncal,
        r0,
        fit,
    })
}

/// w^τ(z) = U(τz)/√H(τ) on the unit half-ball.
#[derive(Debug, Clone)]
pub struct BlowupSnapshot {
    pub tau: f64,
    pub h_tau: f64,
    /// nodal values of w^τ on the unit hemisphere
    pub boundary: Vec<f64>,
    /// ∫_{∂⁺B₁} t^{1−2s} (w^τ)² dS
    pub boundary_norm2: f64,
    field: ScalarField,
}

impl BlowupSnapshot {
    pub fn value(&self, z: [f64; 3]) -> Result<f64> {
        let t = self.tau;
        Ok(self.field.value([t * z[0], t * z[1], t * z[2]])? / self.h_tau.sqrt())
    }

    /// The rescaled field as a modal field, for modal inputs.
    pub fn modal(&self) -> Option<ModalField> {
        match &self.field {
            ScalarField::Modal(m) => {
                let scale = self.h_tau.sqrt();
                let betas: Vec<f64> = m
                    .modes()
                    .iter()
                    .map(|md| md.beta * self.tau.powf(md.gamma) / scale)
                    .collect();
                Some(m.with_betas(&betas))
            }
            ScalarField::Grid(_) => None,
        }
    }

    fn modal_forms(&self) -> Result<(ModeForms, f64)> {
        let m = self
            .modal()
            .ok_or_else(|| Error::Invalid("weighted H¹ quantities need a modal field".into()))?;
        Ok((ModeForms::new(&m), 2.0 * m.params().half_gap()))
    }

    /// Weighted H¹ distance from w^τ to sign·|z|^{γ_j}ψ_j, j the eigenpair
    /// index of one of the field's modes.
    pub fn h1_distance_to_mode(&self, j: usize, sign: f64) -> Result<f64> {
        let (mf, gap) = self.modal_forms()?;
        let ScalarField::Modal(m) = &self.field else { unreachable!() };
        let pos = m
            .modes()
            .iter()
            .position(|md| md.index == j)
            .ok_or_else(|| Error::Invalid(format!("mode {j} is not part of the field")))?;
        let mut d = mf.beta.clone();
        d[pos] -= sign;
        Ok(mf.h1_norm2(&d, gap).max(0.0).sqrt())
    }

    /// Weighted H¹ norm of the part of w^τ outside the listed eigenpair
    /// indices, relative to the norm of w^τ.
    pub fn off_group_fraction(&self, group: &[usize]) -> Result<f64> {
        let (mf, gap) = self.modal_forms()?;
        let ScalarField::Modal(m) = &self.field else { unreachable!() };
        let off: Vec<f64> = m
            .modes()
            .iter()
            .zip(&mf.beta)
            .map(|(md, &b)| if group.contains(&md.index) { 0.0 } else { b })
            .collect();
        let total = mf.h1_norm2(&mf.beta, gap);
        Ok((mf.h1_norm2(&off, gap).max(0.0) / total).sqrt())
    }

    /// Boundary version for any field: share of ∫_{∂⁺B₁} t^{1−2s}(w^τ)²
    /// outside the span of the listed eigenfunctions, as a norm ratio.
    pub fn off_group_boundary_fraction(&self, es: &EigenSystem, group: &[usize]) -> Result<f64> {
        check_provenance(&self.field, es)?;
        let mv = self.field.forms().nodal_mass.mul_vec(&self.boundary);
        let inside: f64 = group
            .iter()
            .map(|&j| {
                if j == 0 || j > es.len() {
                    return Err(Error::OutOfRange { index: j, len: es.len() });
                }
                Ok(dot(&es.psi[j - 1], &mv).powi(2))
            })
            .sum::<Result<f64>>()?;
        Ok(((self.boundary_norm2 - inside).max(0.0) / self.boundary_norm2).sqrt())
    }
}

pub fn blowup(field: &ScalarField, tau: f64) -> Result<BlowupSnapshot> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1], got {tau}")));
    }
    let h_tau = Almgren::new(field).h(tau)?;
    let scale = h_tau.sqrt();
    let boundary: Vec<f64> = field.sphere_values(tau)?.iter().map(|v| v / scale).collect();
    let boundary_norm2 = dot(&boundary, &field.forms().nodal_mass.mul_vec(&boundary));
    Ok(BlowupSnapshot {
        tau,
        h_tau,
        boundary,
        boundary_norm2,
        field: field.clone(),
    })
}

fn check_provenance(field: &ScalarField, es: &EigenSystem) -> Result<()> {
    let (p, q) = (field.params(), &es.params);
    let (a, b) = (field.mesh(), &es.mesh);
    let same = (p.s() - q.s()).abs() <= PROVENANCE_TOL
        && (p.lambda() - q.lambda()).abs() <= PROVENANCE_TOL
        && (a.cap().start() - b.cap().start()).abs() <= PROVENANCE_TOL
        && (a.cap().length() - b.cap().length()).abs() <= PROVENANCE_TOL
        && a.n_t() == b.n_t()
        && a.n_theta() == b.n_theta()
        && a.grading() == b.grading();
    if same {
        Ok(())
    } else {
        Err(Error::Invalid(
            "eigen system was computed for a different s, lambda, cap or mesh than the field".into(),
        ))
    }
}

/// Spherical Fourier coefficients φ_j(τ) and the perturbation moments
/// Υ_j(τ) = κ_s ∫_{𝒞∩B′_τ} h TrU ψ_j(x/|x|) dx.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTrace {
    pub taus: Vec<f64>,
    /// eigenpair indices, from 1
    pub modes: Vec<usize>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub groups: Vec<usize>,
    /// φ[τ index][mode position]
    pub phi: Vec<Vec<f64>>,
    pub upsilon: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub params: ProblemParams,
}

impl FourierTrace {
    /// Σ_j φ_j(τ)² ≤ H(τ)(1 + 1e−8) at every τ.
    pub fn parseval_holds(&self) -> bool {
        self.phi
            .iter()
            .zip(&self.h)
            .all(|(p, &h)| p.iter().map(|v| v * v).sum::<f64>() <= h * (1.0 + 1e-8))
    }

    /// Mode with the largest |φ_j| at the smallest τ; ties within 1e−9
    /// relative go to the smallest index. The flag reports a competitor
    /// from another multiplicity group within 10%.
    pub fn dominant_mode(&self) -> (usize, bool) {
        let row = &self.phi[0];
        let mut best = 0;
        for k in 1..row.len() {
            if row[k].abs() > row[best].abs() * (1.0 + 1e-9) {
                best = k;
            }
        }
        let flagged = (0..row.len())
            .any(|k| self.groups[k] != self.groups[best] && row[k].abs() >= 0.9 * row[best].abs());
        (self.modes[best], flagged)
    }

    /// Eigenpair indices sharing the multiplicity group of mode j.
    pub fn group_of(&self, j: usize) -> Vec<usize> {
        let Some(pos) = self.modes.iter().position(|&m| m == j) else {
            return Vec::new();
        };
        (0..self.modes.len())
            .filter(|&k| self.groups[k] == self.groups[pos])
            .map(|k| self.modes[k])
            .collect()
    }

    fn position(&self, j: usize) -> Result<usize> {
        self.modes
            .iter()
            .position(|&m| m == j)
            .ok_or_else(|| Error::OutOfRange { index: j, len: self.modes.len() })
    }

    /// Relative residual of −φ″ − ((N+1−2s)/τ)φ′ + (μ/τ²)φ − ζ with
    /// ζ = τ^{2s−N−1}Υ′, over τ indices 2..len−2 (derivatives by
    /// five-point differences in ln τ, so the τ grid must be geometric).
    pub fn ode_residual(&self, j: usize) -> Result<f64> {
        let pos = self.position(j)?;
        let n = self.taus.len();
        if n < 5 {
            return Err(Error::Invalid("need at least five radii".into()));
        }
        let step = (self.taus[1] / self.taus[0]).ln();
        for w in self.taus.windows(2) {
            if ((w[1] / w[0]).ln() - step).abs() > 1e-9 * step {
                return Err(Error::Invalid("radii are not geometric".into()));
            }
        }
        let dim = self.params.dim() as f64;
        let s = self.params.s();
        let p = dim + 1.0 - 2.0 * s;
        let f = |k: usize| self.phi[k][pos];
        let y = |k: usize| self.upsilon[k][pos];
        let (mut num, mut den) = (0.0, 0.0);
        for k in 2..n - 2 {
            let fx = (-f(k + 2) + 8.0 * f(k + 1) - 8.0 * f(k - 1) + f(k - 2)) / (12.0 * step);
            let fxx = (-f(k + 2) + 16.0 * f(k + 1) - 30.0 * f(k) + 16.0 * f(k - 1) - f(k - 2)) / (12.0 * step * step);
            let yx = (-y(k + 2) + 8.0 * y(k + 1) - 8.0 * y(k - 1) + y(k - 2)) / (12.0 * step);
            let source = self.taus[k].powf(2.0 * s - dim) * yx;
            let terms = [-fxx, (1.0 - p) * fx, self.mu[pos] * f(k), -source];
            num += terms.iter().sum::<f64>().powi(2);
            den += terms.iter().map(|t| t.abs()).sum::<f64>().powi(2);
        }
        Ok(if den > 0.0 { (num / den).sqrt() } else { 0.0 })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,j,phi_j,Upsilon_j\n");
        for (k, &t) in self.taus.iter().enumerate() {
            for (pos, &j) in self.modes.iter().enumerate() {
                let _ = writeln!(s, "{:.15e},{},{:.15e},{:.15e}", t, j, self.phi[k][pos], self.upsilon[k][pos]);
            }
        }
        s
    }
}

pub fn fourier_coeffs(field: &ScalarField, es: &EigenSystem, taus: &[f64]) -> Result<FourierTrace> {
    check_provenance(field, es)?;
    if taus.is_empty() {
        return Err(Error::Invalid("no radii given".into()));
    }
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    let an = Almgren::new(field);
    let nodal_mass = &field.forms().nodal_mass;
    let modes: Vec<usize> = (1..=es.len()).collect();
    let rows = taus
        .par_iter()
        .map(|&t| {
            let h = an.h(t)?;
            let mv = nodal_mass.mul_vec(&field.sphere_values(t)?);
            Ok((h, es.psi.iter().map(|p| dot(p, &mv)).collect::<Vec<f64>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let upsilon = match field {
        ScalarField::Grid(g) if !g.operator().perturbation().is_zero() => grid_upsilon(g, es, &taus)?,
        _ => vec![vec![0.0; es.len()]; taus.len()],
    };
    Ok(FourierTrace {
        modes,
        mu: es.mu.clone(),
        gamma: es.gamma.clone(),
        groups: es.groups.clone(),
        phi: rows.iter().map(|r| r.1.clone()).collect(),
        h: rows.iter().map(|r| r.0).collect(),
        upsilon,
        taus,
        params: *field.params(),
    })
}

/// Υ_j at the requested radii from exact per-cell moments on the shells,
/// linear in ln τ between shells.
fn grid_upsilon(g: &GridField, es: &EigenSystem, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    let op = g.operator();
    let radii = g.grid().radii();
    let cumulative: Vec<Vec<f64>> = es
        .psi_dofs
        .par_iter()
        .map(|psi| {
            let moments = op.cell_trace_moments(op.h_cells(), g.shell_dofs(), psi);
            let mut acc = vec![0.0; radii.len()];
            for (c, m) in moments.iter().enumerate() {
                acc[c + 1] = acc[c] + m;
            }
            acc
        })
        .collect();
    taus.iter()
        .map(|&t| {
            if t < radii[0] * (1.0 - 1e-12) || t > 1.0 + 1e-12 {
                return Err(Error::Domain(format!("radius {t} outside the grid")));
            }
            let k = radii.partition_point(|&x| x < t).clamp(1, radii.len() - 1);
            let w = ((t / radii[k - 1]).ln() / (radii[k] / radii[k - 1]).ln()).clamp(0.0, 1.0);
            Ok(cumulative.iter().map(|c| (1.0 - w) * c[k - 1] + w * c[k]).collect())
        })
        .collect()
}

/// Value at x of samples (t_k, f_k): power law between neighbours of one
/// sign, linear otherwise.
fn interpolate_sample(t: &[f64], f: &[f64], x: f64) -> Result<f64> {
    if let Some(k) = t.iter().position(|&v| (v - x).abs() <= 1e-12 * x) {
        return Ok(f[k]);
    }
    if x < t[0] || x > t[t.len() - 1] {
        return Err(Error::Domain(format!(
            "radius {x} outside the sampled range [{}, {}]",
            t[0],
            t[t.len() - 1]
        )));
    }
    let k = t.partition_point(|&v| v < x);
    let (a, b, fa, fb) = (t[k - 1], t[k], f[k - 1], f[k]);
    if fa * fb > 0.0 {
        let e = (fb / fa).ln() / (b / a).ln();
        Ok(fa * (x / a).powf(e))
    } else {
        Ok(fa + (fb - fa) * (x - a) / (b - a))
    }
}

/// ∫₀^R t^a Υ(t) dt from samples: trapezoid in ln t, with the part below the
/// first nonzero sample treated as a power law fitted to the first two.
fn weighted_moment(t: &[f64], ups: &[f64], a: f64, r: f64) -> Result<f64> {
    let mut nodes: Vec<(f64, f64)> = t.iter().zip(ups).filter(|(x, _)| **x < r * (1.0 - 1e-12)).map(|(&x, &u)| (x, u)).collect();
    let end = if let Some(k) = t.iter().position(|&v| (v - r).abs() <= 1e-12 * r) {
        ups[k]
    } else {
        let k = t.partition_point(|&v| v < r);
        if k == 0 || k == t.len() {
            return Err(Error::Domain(format!("radius {r} outside the sampled range")));
        }
        let w = (r / t[k - 1]).ln() / (t[k] / t[k - 1]).ln();
        (1.0 - w) * ups[k - 1] + w * ups[k]
    };
    nodes.push((r, end));
    let f: Vec<f64> = nodes.iter().map(|&(x, u)| x.powf(a + 1.0) * u).collect();
    let mut total = 0.0;
    for k in 1..nodes.len() {
        total += 0.5 * (f[k] + f[k - 1]) * (nodes[k].0 / nodes[k - 1].0).ln();
    }
    if f[0] != 0.0 {
        let divergent = || {
            Error::NonIntegrable(
                "the perturbation moment does not decay fast enough at 0 for the β integrals".into(),
            )
        };
        if nodes.len() < 2 || f[0] * f[1] <= 0.0 {
            return Err(divergent());
        }
        let alpha = (f[1] / f[0]).ln() / (nodes[1].0 / nodes[0].0).ln();
        if !(alpha > 0.0) {
            return Err(divergent());
        }
        total += f[0] / alpha;
    }
    Ok(total)
}

/// β_j = φ_j(R)/R^γ + ((N+γ−2s)/(N+2γ−2s))∫₀^R t^{−N−1+2s−γ}Υ_j
///       + (γR^{−N+2s−2γ}/(N+2γ−2s))∫₀^R t^{γ−1}Υ_j for every mode.
pub fn beta_coefficients(ft: &FourierTrace, gamma: f64, r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!("R must lie in (0,1), got {r}")));
    }
    let n = ft.params.dim() as f64;
    let s = ft.params.s();
    let denom = n + 2.0 * gamma - 2.0 * s;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("gamma = {gamma} gives N + 2γ − 2s ≤ 0")));
    }
    (0..ft.modes.len())
        .map(|pos| {
            let phi: Vec<f64> = ft.phi.iter().map(|row| row[pos]).collect();
            let ups: Vec<f64> = ft.upsilon.iter().map(|row| row[pos]).collect();
            let mut beta = interpolate_sample(&ft.taus, &phi, r)? / r.powf(gamma);
            if ups.iter().any(|&u| u != 0.0) {
                let i1 = weighted_moment(&ft.taus, &ups, -n - 1.0 + 2.0 * s - gamma, r)?;
                let i2 = weighted_moment(&ft.taus, &ups, gamma - 1.0, r)?;
                beta += (n + gamma - 2.0 * s) / denom * i1 + gamma * r.powf(-n + 2.0 * s - 2.0 * gamma) / denom * i2;
            }
            Ok(beta)
        })
        .collect()
}
