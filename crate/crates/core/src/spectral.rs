//! Eigenpairs of the weighted spherical problem with mixed Robin/Dirichlet
//! equator conditions, and the separated 1-D oracle for the full circle.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{smallest_eigenpairs, CsrMatrix, EigOptions, Triplets};
use crate::params::{gamma_from_mu, ProblemParams};
use crate::sphercap::{AssembledForms, HemisphereMesh, WeightRules};

/// Relative gap below which neighbouring eigenvalues share a multiplicity group.
pub const MULTIPLICITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub params: ProblemParams,
    pub mesh: HemisphereMesh,
    pub mu: Vec<f64>,
    /// γ_j from μ_j; NaN when μ_j falls below the guaranteed spectrum floor
    pub gamma: Vec<f64>,
    /// M-orthonormal eigenfunctions on all mesh nodes (zero on Dirichlet nodes)
    pub psi: Vec<Vec<f64>>,
    /// the same eigenfunctions on retained dofs
    pub psi_dofs: Vec<Vec<f64>>,
    /// multiplicity group index of each pair, starting at 0
    pub groups: Vec<usize>,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

/// The pencil matrix K − λκ_s B_ω.
pub fn pencil_matrix(forms: &AssembledForms, params: &ProblemParams) -> Result<CsrMatrix> {
    forms
        .stiffness
        .lin_comb(1.0, &forms.boundary_mass, -params.lambda() * params.kappa())
}

/// Default solver settings for the spherical pencil.
pub fn eig_options(forms: &AssembledForms, params: &ProblemParams) -> EigOptions {
    EigOptions {
        shift: 1.01 * params.spectrum_floor(),
        perm: Some(forms.mesh.band_permutation()),
        ..EigOptions::default()
    }
}

pub fn solve_eigs(forms: &AssembledForms, params: &ProblemParams, k: usize) -> Result<EigenSystem> {
    if (params.s() - forms.mesh.s()).abs() > 1e-15 || params.dim() != 2 {
        return Err(Error::Invalid("parameters do not match the assembled forms".into()));
    }
    let a = pencil_matrix(forms, params)?;
    let pairs = smallest_eigenpairs(&a, &forms.mass, k, &eig_options(forms, params))?;
    let mut warnings = pairs.warnings;
    let ones = vec![1.0; forms.mesh.n_dofs()];
    let m1 = forms.mass.mul_vec(&ones);
    let mut psi_dofs = pairs.vectors;
    for v in psi_dofs.iter_mut() {
        fix_sign(v, &m1);
    }
    let floor = params.spectrum_floor();
    let mut gamma = Vec::with_capacity(k);
    for (j, &mu) in pairs.values.iter().enumerate() {
        match gamma_from_mu(mu, params) {
            Ok(g) => gamma.push(g),
            Err(_) => {
                warnings.push(format!(
                    "mu_{} = {mu:.6e} lies below the floor {floor:.6e}; lambda is likely inadmissible",
                    j + 1
                ));
                gamma.push(f64::NAN);
            }
        }
    }
    let psi = psi_dofs.iter().map(|v| forms.mesh.expand(v)).collect();
    Ok(EigenSystem {
        params: *params,
        mesh: forms.mesh.clone(),
        groups: multiplicity_groups(&pairs.values),
        mu: pairs.values,
        gamma,
        psi,
        psi_dofs,
        residuals: pairs.residuals,
        warnings,
    })
}

/// Like [`solve_eigs`], but refuses λ ≥ Λ unless `allow_inadmissible`, in which
/// case the violation is reported on the warning channel.
pub fn solve_eigs_admissible(
    forms: &AssembledForms,
    params: &ProblemParams,
    k: usize,
    lambda_star: f64,
    allow_inadmissible: bool,
) -> Result<EigenSystem> {
    let inadmissible = params.lambda() >= lambda_star;
    if inadmissible && !allow_inadmissible {
        return Err(Error::Inadmissible {
            lambda: params.lambda(),
            lambda_star,
        });
    }
    let mut es = solve_eigs(forms, params, k)?;
    if inadmissible {
        es.warnings.insert(
            0,
            format!(
                "lambda = {} is not below the Hardy constant {lambda_star}; the spectrum may dip below the floor",
                params.lambda()
            ),
        );
    }
    Ok(es)
}

/// Positive weighted mean, or else a positive first entry of largest magnitude.
fn fix_sign(v: &mut [f64], mass_of_one: &[f64]) {
    let mean: f64 = v.iter().zip(mass_of_one).map(|(a, b)| a * b).sum();
    let flip = if mean.abs() >= 1e-8 {
        mean < 0.0
    } else {
        let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v.iter()
            .find(|x| x.abs() >= big * (1.0 - 1e-9))
            .is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Group sorted eigenvalues whose neighbours lie within 1e-6 (1 + |μ|).
pub fn multiplicity_groups(mu: &[f64]) -> Vec<usize> {
    let mut groups = Vec::with_capacity(mu.len());
    let mut g = 0;
    for (j, &m) in mu.iter().enumerate() {
        if j > 0 && (m - mu[j - 1]).abs() > MULTIPLICITY_TOL * (1.0 + m.abs()) {
            g += 1;
        }
        groups.push(g);
    }
    groups
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Distinct eigenvalues with their multiplicities.
    pub fn distinct(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for (j, &g) in self.groups.iter().enumerate() {
            if g == out.len() {
                out.push((self.mu[j], 1));
            } else {
                out[g].1 += 1;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,mu,gamma,multiplicity_group\n");
        for j in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{:.15e},{:.15e},{}",
                j + 1,
                self.mu[j],
                self.gamma[j],
                self.groups[j] + 1
            );
        }
        s
    }

    /// The homogeneous extension |z|^{γ_j} ψ_j(z/|z|), with j counted from 1.
    pub fn homogeneous_profile(&self, j: usize) -> Result<HomogeneousProfile<'_>> {
        if j == 0 || j > self.len() {
            return Err(Error::OutOfRange {
                index: j,
                len: self.len(),
            });
        }
        Ok(HomogeneousProfile {
            gamma: self.gamma[j - 1],
            psi: &self.psi[j - 1],
            mesh: &self.mesh,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HomogeneousProfile<'a> {
    pub gamma: f64,
    psi: &'a [f64],
    mesh: &'a HemisphereMesh,
}

impl HomogeneousProfile<'_> {
    /// Value at a point of the closed upper half-space. At the origin the
    /// value is 0 for γ > 0 and the pole value otherwise.
    pub fn eval(&self, z: &[f64; 3]) -> f64 {
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        if r == 0.0 {
            return if self.gamma > 0.0 {
                0.0
            } else {
                self.psi[self.mesh.pole()]
            };
        }
        let unit = [z[0] / r, z[1] / r, z[2] / r];
        r.powf(self.gamma) * self.mesh.interpolate_point(self.psi, &unit)
    }

    pub fn angular(&self, t: f64, theta: f64) -> f64 {
        self.mesh.interpolate(self.psi, t, theta)
    }
}

/// Eigenvalues of the separated problem for azimuthal index k on the full
/// circle:
/// −((sin t)^{1−2s} cos t f′)′ + k²(sin t)^{1−2s}(cos t)^{−1} f = μ (sin t)^{1−2s} cos t f,
/// Robin flux κ_s λ f(0) at the equator. Linear elements on n_t cells graded
/// quadratically toward t = 0; f vanishes at the pole for k ≥ 1.
pub fn oracle_full_circle_1d(params: &ProblemParams, k: i64, n_t: usize, count: usize) -> Result<Vec<f64>> {
    if k < 0 {
        return Err(Error::Domain(format!("azimuthal index must be ≥ 0, got {k}")));
    }
    if params.dim() != 2 {
        return Err(Error::Invalid("the separated oracle is for N = 2".into()));
    }
    if n_t < 4 {
        return Err(Error::Invalid(format!("need at least 4 cells, got {n_t}")));
    }
    let rules = WeightRules::new(params.s())?;
    let nodes: Vec<f64> = (0..=n_t)
        .map(|i| FRAC_PI_2 * (i as f64 / n_t as f64).powi(2))
        .collect();
    let k2 = (k * k) as f64;
    let free = if k == 0 { n_t + 1 } else { n_t };
    let mut kt = Triplets::new(free, free);
    let mut mt = Triplets::new(free, free);
    for i in 0..n_t {
        let (t0, t1) = (nodes[i], nodes[i + 1]);
        let h = t1 - t0;
        let cw = rules.cell(t0, t1);
        let pm = cw.mass.shape_products();
        let pk = cw.azimuthal.shape_products();
        let m0 = cw.mass.total();
        for a in 0..2 {
            for c in 0..2 {
                let (p, q) = (i + a, i + c);
                if p >= free || q >= free {
                    continue;
                }
                let sign = if a == c { 1.0 } else { -1.0 };
                kt.push(p, q, sign * m0 / (h * h) + k2 * pk[a][c]);
                mt.push(p, q, pm[a][c]);
            }
        }
    }
    kt.push(0, 0, -params.kappa() * params.lambda());
    let count = count.min(free);
    let opts = EigOptions {
        shift: 1.01 * params.spectrum_floor(),
        ..EigOptions::default()
    };
    Ok(smallest_eigenpairs(&kt.to_csr(), &mt.to_csr(), count, &opts)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::SphericalCap;
    use crate::sphercap::{assemble, build_mesh, weighted_product_integral};
    use std::f64::consts::PI;

    fn system(s: f64, lambda: f64, cap: SphericalCap, nt: usize, nth: usize, k: usize) -> EigenSystem {
        let p = ProblemParams::new(2, s, lambda, None).unwrap();
        let mesh = build_mesh(nt, nth, s, cap, 1.5).unwrap();
        let forms = assemble(&mesh, &p).unwrap();
        solve_eigs(&forms, &p, k).unwrap()
    }

    #[test]
    fn full_circle_constant_ground_state() {
        for &s in &[0.25, 0.5, 0.75] {
            let es = system(s, 0.0, SphericalCap::full_circle(), 8, 16, 3);
            assert!(es.mu[0].abs() < 1e-10);
            let psi = &es.psi[0];
            let c = psi[0];
            assert!(c > 0.0);
            assert!(psi.iter().all(|v| (v - c).abs() < 1e-8));
            assert!(es.gamma[0].abs() < 1e-8);
        }
    }

    #[test]
    fn orthonormal_and_normalized() {
        let es = system(0.5, 0.1, SphericalCap::new(PI, PI).unwrap(), 10, 20, 5);
        let mesh = &es.mesh;
        for i in 0..5 {
            for j in 0..5 {
                let v = weighted_product_integral(mesh, &es.psi[i], &es.psi[j]).unwrap();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-10);
            }
        }
        assert!(es.mu.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn oracle_anchors() {
        let p = ProblemParams::new(2, 0.5, 0.0, None).unwrap();
        let k0 = oracle_full_circle_1d(&p, 0, 400, 2).unwrap();
        assert!(k0[0].abs() < 1e-8, "{k0:?}");
        assert!((k0[1] - 6.0).abs() < 1e-3);
        let k1 = oracle_full_circle_1d(&p, 1, 400, 1).unwrap();
        assert!((k1[0] - 2.0).abs() < 1e-3);
        assert!(oracle_full_circle_1d(&p, -1, 400, 1).is_err());
        // s = 1/4: γ = 1 gives μ = 5/2, found in the k = 1 family
        let q = ProblemParams::new(2, 0.25, 0.0, None).unwrap();
        let k1 = oracle_full_circle_1d(&q, 1, 600, 1).unwrap();
        assert!((k1[0] - 2.5).abs() < 1e-3, "{}", k1[0]);
    }

    #[test]
    fn groups_and_csv() {
        assert_eq!(multiplicity_groups(&[0.0, 2.0, 2.0 + 1e-9, 6.0]), vec![0, 1, 1, 2]);
        let es = system(0.5, 0.0, SphericalCap::full_circle(), 8, 16, 3);
        let csv = es.to_csv();
        assert!(csv.starts_with("j,mu,gamma,multiplicity_group\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(es.homogeneous_profile(0).is_err());
        assert!(es.homogeneous_profile(4).is_err());
    }

    #[test]
    fn profile_homogeneity() {
        let es = system(0.5, 0.0, SphericalCap::new(PI, PI).unwrap(), 10, 20, 2);
        let prof = es.homogeneous_profile(1).unwrap();
        let z = [0.3, -0.5, 0.4];
        let n = (0.09f64 + 0.25 + 0.16).sqrt();
        let unit = [z[0] / n, z[1] / n, z[2] / n];
        for tau in [0.1, 0.5, 1.0] {
            let zz = [tau * z[0], tau * z[1], tau * z[2]];
            let expect = tau.powf(prof.gamma) * prof.eval(&z);
            assert!((prof.eval(&zz) - expect).abs() < 1e-12);
        }
        assert!((prof.eval(&unit) - prof.angular(0.4f64.asin().min(FRAC_PI_2), 0.0)).abs() < 1.0);
    }

    #[test]
    fn inadmissible_lambda_is_refused_or_flagged() {
        let p = ProblemParams::new(2, 0.5, 1.0, None).unwrap();
        let mesh = build_mesh(6, 12, 0.5, SphericalCap::full_circle(), 1.5).unwrap();
        let forms = assemble(&mesh, &p).unwrap();
        assert!(matches!(
            solve_eigs_admissible(&forms, &p, 2, 0.2285, false),
            Err(Error::Inadmissible { .. })
        ));
        let es = solve_eigs_admissible(&forms, &p, 2, 0.2285, true).unwrap();
        assert!(!es.warnings.is_empty());
    }
}
