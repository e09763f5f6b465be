use std::f64::consts::PI;
use std::sync::Arc;

use conefrac::almgren::{
    beta_coefficients, blowup, compute_h, default_radii, fourier_coeffs, frequency_trace, geometric_radii, Almgren,
    DEFAULT_R0,
};
use conefrac::cones::SphericalCap;
use conefrac::extension::{
    manufactured_field, solve_extension, zero_perturbation, ConstantPerturbation, GridField, HalfBallGrid,
    ScalarField, SolveOptions,
};
use conefrac::params::gamma_from_mu;
use conefrac::spectral::{solve_eigs, EigenSystem};
use conefrac::sphercap::{assemble, build_mesh};
use conefrac::ProblemParams;

fn half_system(n_t: usize, n_theta: usize, k: usize) -> EigenSystem {
    let params = ProblemParams::new(2, 0.5, 0.0, None).unwrap();
    let mesh = build_mesh(n_t, n_theta, 0.5, SphericalCap::centered_down(PI).unwrap(), 1.5).unwrap();
    solve_eigs(&assemble(&mesh, &params).unwrap(), &params, k).unwrap()
}

fn perturbed_solution(es: &EigenSystem, c: f64) -> GridField {
    let grid = HalfBallGrid::new(32, 1e-3, es.mesh.clone()).unwrap();
    solve_extension(&grid, &es.params, Arc::new(ConstantPerturbation(c)), &es.psi[0], &SolveOptions::default()).unwrap()
}

#[test]
fn two_mode_frequency_is_monotone_and_extrapolates_to_the_lower_order() {
    let es = half_system(16, 32, 4);
    let field: ScalarField = manufactured_field(&es, &[(1, 1.0), (2, 0.2)]).unwrap().into();
    let radii = default_radii(&field, DEFAULT_R0).unwrap();
    let ft = frequency_trace(&field, &radii, DEFAULT_R0).unwrap();
    for w in ft.ncal.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
    assert!((ft.gamma_hat() - es.gamma[0]).abs() < 1e-2, "{:?}", ft.fit);
    let brute = Almgren::new(&field).frequency(1e-3).unwrap();
    assert!((brute - es.gamma[0]).abs() < 1e-2);
    assert!(ft.above_lower_bound(&es.params));
}

#[test]
fn order_matches_the_eigenvalue_of_the_building_mode() {
    let es = half_system(16, 32, 4);
    for j in [2, 4] {
        let field: ScalarField = manufactured_field(&es, &[(j, 1.5)]).unwrap().into();
        let ft = frequency_trace(&field, &default_radii(&field, DEFAULT_R0).unwrap(), DEFAULT_R0).unwrap();
        let expected = gamma_from_mu(es.mu[j - 1], &es.params).unwrap();
        assert!((ft.gamma_hat() - expected).abs() < 1e-2);
    }
}

#[test]
fn boundary_mass_of_constants_is_the_weighted_area() {
    for s in [0.25, 0.75] {
        let params = ProblemParams::new(2, s, 0.0, None).unwrap();
        let mesh = build_mesh(12, 24, s, SphericalCap::full_circle(), 1.5).unwrap();
        let grid = HalfBallGrid::new(10, 1e-3, mesh).unwrap();
        let lid = vec![1.0; grid.mesh().n_nodes()];
        let field: ScalarField = solve_extension(&grid, &params, zero_perturbation(), &lid, &SolveOptions::default())
            .unwrap()
            .into();
        for r in [grid.radii()[3], 0.37, 1.0] {
            let h = compute_h(&field, r).unwrap();
            assert!((h - 2.0 * PI / (2.0 - 2.0 * s)).abs() < 1e-8, "{h}");
        }
    }
}

#[test]
fn boundary_mass_scales_with_the_field() {
    let es = half_system(12, 24, 3);
    let base = manufactured_field(&es, &[(1, 1.0), (3, -0.4)]).unwrap();
    let tau: f64 = 0.35;
    let betas: Vec<f64> = base.modes().iter().map(|m| m.beta * tau.powf(m.gamma)).collect();
    let rescaled: ScalarField = base.with_betas(&betas).into();
    let base: ScalarField = base.into();
    for r in [0.1, 0.5, 0.9] {
        let a = compute_h(&rescaled, r).unwrap();
        let b = compute_h(&base, tau * r).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }
}

#[test]
fn solver_output_satisfies_the_frequency_identities() {
    let es = half_system(24, 48, 4);
    let field: ScalarField = perturbed_solution(&es, 0.1).into();
    let an = Almgren::new(&field);
    let radii = default_radii(&field, DEFAULT_R0).unwrap();
    let mid = &radii[radii.len() / 4..3 * radii.len() / 4];
    for &r in mid {
        assert!(an.h_prime_residual(r).unwrap() <= 1e-2);
    }
    for &r in mid.iter().step_by(mid.len() / 5).take(5) {
        let p = an.pohozaev(r, 1e-2).unwrap();
        assert!(p.satisfied, "{p:?}");
    }
    let ft = frequency_trace(&field, &radii, DEFAULT_R0).unwrap();
    assert!(ft.above_lower_bound(&es.params));
}

#[test]
fn fourier_data_of_solver_output() {
    let es = half_system(24, 48, 6);
    let u = perturbed_solution(&es, 0.1);
    let taus = u.grid().radii()[1..].to_vec();
    let field: ScalarField = u.into();
    let ft = fourier_coeffs(&field, &es, &taus).unwrap();
    assert!(ft.parseval_holds());
    assert_eq!(ft.dominant_mode(), (1, false));
    assert!(ft.ode_residual(1).unwrap() <= 0.05);
    let betas: Vec<f64> = [0.3, 0.5, 0.7]
        .iter()
        .map(|&r| beta_coefficients(&ft, es.gamma[0], r).unwrap()[0])
        .collect();
    let spread = betas.iter().fold(0.0f64, |a, b| a.max((b - betas[0]).abs())) / betas[0].abs();
    assert!(spread < 0.05, "{betas:?}");
    // partial Parseval sums grow toward H from below
    for (row, &h) in ft.phi.iter().zip(&ft.h) {
        let mut partial = 0.0;
        for v in row {
            let next = partial + v * v;
            assert!(next >= partial && next <= h * (1.0 + 1e-8));
            partial = next;
        }
    }
}

#[test]
fn unperturbed_solutions_have_no_moments() {
    let es = half_system(12, 24, 3);
    let grid = HalfBallGrid::new(12, 1e-3, es.mesh.clone()).unwrap();
    let u = solve_extension(&grid, &es.params, zero_perturbation(), &es.psi[1], &SolveOptions::default()).unwrap();
    let taus = grid.radii()[4..].to_vec();
    let field: ScalarField = u.into();
    let ft = fourier_coeffs(&field, &es, &taus).unwrap();
    assert!(ft.upsilon.iter().flatten().all(|&v| v == 0.0));
    let b = blowup(&field, 0.3).unwrap();
    assert!((b.boundary_norm2 - 1.0).abs() < 1e-10);
    let off = b.off_group_boundary_fraction(&es, &[2]).unwrap();
    assert!(off < 0.05, "{off}");
}

#[test]
fn blowups_concentrate_on_the_leading_group() {
    let es = half_system(16, 32, 4);
    let field: ScalarField = manufactured_field(&es, &[(1, -1.0), (2, 0.5), (4, 0.5)]).unwrap().into();
    let fractions: Vec<f64> = geometric_radii(1e-3, 0.5, 5)
        .unwrap()
        .iter()
        .rev()
        .map(|&t| blowup(&field, t).unwrap().off_group_fraction(&[1]).unwrap())
        .collect();
    for w in fractions.windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(fractions[4] < 0.05);
    let b = blowup(&field, 1e-3).unwrap();
    assert!(b.h1_distance_to_mode(1, -1.0).unwrap() < b.h1_distance_to_mode(1, 1.0).unwrap());
}
