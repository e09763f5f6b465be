//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use conefrac::almgren::{
    beta_coefficients, blowup, default_radii, fourier_coeffs, frequency_trace, geometric_radii, Almgren, DEFAULT_R0,
};
use conefrac::cones::{smoothing_euler_defect, smoothing_offset, smoothing_profile, ConeProfile, SmoothedCone, SphericalCap};
use conefrac::extension::{
    manufactured_field, solve_extension, ConstantPerturbation, HalfBallGrid, ScalarField, SolveOptions,
};
use conefrac::hardy::{hardy_constant, hardy_scan, MeshSpec};
use conefrac::params::{hardy_constant_full_space, kappa_s};
use conefrac::spectral::{oracle_full_circle_1d, solve_eigs, EigenSystem};
use conefrac::sphercap::{assemble, build_mesh, AssembledForms};
use conefrac::ProblemParams;

const S_VALUES: [f64; 3] = [0.25, 0.5, 0.75];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(s: f64, lambda: f64) -> ProblemParams {
    ProblemParams::new(2, s, lambda, None).unwrap()
}

fn forms(s: f64, cap: SphericalCap, n_t: usize, n_theta: usize) -> AssembledForms {
    let p = params(s, 0.0);
    assemble(&build_mesh(n_t, n_theta, s, cap, MeshSpec::DEFAULT_GRADING).unwrap(), &p).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Every computed μ_j must lie above −(1−s)² for admissible λ.
struct FloorLog {
    systems: usize,
    worst: f64,
    violations: Vec<String>,
}

impl Default for FloorLog {
    fn default() -> Self {
        Self {
            systems: 0,
            worst: f64::INFINITY,
            violations: Vec::new(),
        }
    }
}

impl FloorLog {
    fn record(&mut self, es: &EigenSystem, label: &str) {
        let floor = es.params.spectrum_floor();
        self.systems += 1;
        for &m in &es.mu {
            let gap = m - floor;
            self.worst = self.worst.min(gap);
            if gap <= 0.0 {
                self.violations.push(format!("{label}: mu = {m} ≤ {floor}"));
            }
        }
    }
}

fn criterion_1() -> Outcome {
    // Γ(3/4) and Γ(1/4) to 20 digits
    let (g34, g14): (f64, f64) = (1.225_416_702_465_177_645_1, 3.625_609_908_221_908_311_9);
    let reference = 2.0 * (g34 / g14).powi(2);
    let k = kappa_s(0.5).unwrap();
    let lam = hardy_constant_full_space(&params(0.5, 0.0));
    let err = (lam - reference).abs();
    outcome(
        k == 1.0 && err <= 1e-10,
        format!("kappa_s(1/2) = {k}, Lambda(R^2) = {lam:.15}, |diff| = {err:.1e}"),
    )
}

fn criterion_2(log: &mut FloorLog) -> Outcome {
    let mut worst_full: f64 = 0.0;
    let mut worst_half: f64 = 0.0;
    for s in S_VALUES {
        let p = params(s, 0.0);
        let es = solve_eigs(&forms(s, SphericalCap::full_circle(), 96, 192), &p, 15).unwrap();
        log.record(&es, &format!("full s={s}"));
        // degree k carries k + 1 eigenfunctions; the mesh splits them slightly
        let ladder = (0..5).flat_map(|k| std::iter::repeat_n(k as f64 * (k as f64 + 2.0 - 2.0 * s), k + 1));
        for (got, exact) in es.mu.iter().zip(ladder) {
            let err = if exact == 0.0 { got.abs() } else { rel(*got, exact) };
            worst_full = worst_full.max(err);
        }
        let es = solve_eigs(&forms(s, SphericalCap::centered_down(PI).unwrap(), 96, 192), &p, 3).unwrap();
        log.record(&es, &format!("half s={s}"));
        let distinct = es.distinct();
        for k in 0..2 {
            let exact = (k as f64 + s) * (k as f64 + 2.0 - s);
            worst_half = worst_half.max(rel(distinct[k].0, exact));
        }
    }
    outcome(
        worst_full <= 0.01 && worst_half <= 0.02,
        format!("full circle worst rel err {worst_full:.2e} (≤ 1e-2), half circle {worst_half:.2e} (≤ 2e-2)"),
    )
}

fn criterion_3(log: &mut FloorLog) -> Outcome {
    let mut worst: f64 = 0.0;
    for lambda in [0.0, 0.1] {
        let p = params(0.5, lambda);
        let es = solve_eigs(&forms(0.5, SphericalCap::full_circle(), 96, 192), &p, 12).unwrap();
        log.record(&es, &format!("full s=0.5 lambda={lambda}"));
        for k in 0..3 {
            let oracle = oracle_full_circle_1d(&p, k, 800, 1).unwrap()[0];
            let nearest = es
                .mu
                .iter()
                .copied()
                .min_by(|a, b| (a - oracle).abs().total_cmp(&(b - oracle).abs()))
                .unwrap();
            let err = (nearest - oracle).abs() / oracle.abs().max(1e-8 / 5e-3);
            worst = worst.max(err);
        }
    }
    outcome(worst <= 5e-3, format!("worst rel diff {worst:.2e} over k in 0..=2, lambda in {{0, 0.1}} (≤ 5e-3)"))
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in [0.5, 0.75] {
        for arc in [PI, 1.5 * PI] {
            let f = forms(s, SphericalCap::centered_down(arc).unwrap(), 96, 192);
            let lam = hardy_constant(&f, &params(s, 0.0)).unwrap().lambda_star;
            let es = solve_eigs(&f, &params(s, lam), 1).unwrap();
            let target = -(1.0 - s) * (1.0 - s);
            worst = worst.max((es.mu[0] - target).abs());
        }
    }
    outcome(worst <= 1e-3, format!("max |mu_1(Lambda) + (1-s)^2| = {worst:.2e} (≤ 1e-3)"))
}

fn criterion_5() -> Outcome {
    let arcs = [PI / 2.0, PI, 1.5 * PI, 2.0 * PI];
    let mut min_margin = f64::INFINITY;
    let mut worst_final: f64 = 0.0;
    for s in S_VALUES {
        let p = params(s, 0.0);
        let scan = hardy_scan(&arcs, &p, MeshSpec::level(3), false).unwrap();
        min_margin = min_margin.min(scan.min_margin);
        let last = scan.rows.last().unwrap().lambda_star;
        worst_final = worst_final.max(rel(last, hardy_constant_full_space(&p)));
    }
    outcome(
        min_margin > 1e-4 && worst_final <= 0.02,
        format!("smallest decrease {min_margin:.3e} (> 1e-4), full-circle rel err {worst_final:.2e} (≤ 2e-2)"),
    )
}

fn criterion_6() -> Outcome {
    let (mut freq, mut ratio, mut resid): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for s in S_VALUES {
        let f = forms(s, SphericalCap::centered_down(PI).unwrap(), 24, 48);
        let es = solve_eigs(&f, &params(s, 0.0), 3).unwrap();
        for j in [1, 3] {
            let field: ScalarField = manufactured_field(&es, &[(j, 1.0)]).unwrap().into();
            let gamma = es.gamma[j - 1];
            let an = Almgren::new(&field);
            let radii = geometric_radii(1e-2, DEFAULT_R0, 40).unwrap();
            let h0 = an.h(radii[0]).unwrap() / radii[0].powf(2.0 * gamma);
            for &r in &radii {
                freq = freq.max((an.frequency(r).unwrap() - gamma).abs());
                ratio = ratio.max(rel(an.h(r).unwrap() / r.powf(2.0 * gamma), h0));
                resid = resid.max(an.h_prime_residual(r).unwrap());
            }
        }
    }
    outcome(
        freq <= 1e-6 && ratio <= 1e-8 && resid <= 1e-8,
        format!("|N - gamma| ≤ {freq:.1e}, H/r^(2 gamma) spread {ratio:.1e}, H' residual {resid:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let f = forms(0.5, SphericalCap::centered_down(PI).unwrap(), 24, 48);
    let es = solve_eigs(&f, &params(0.5, 0.0), 3).unwrap();
    let field: ScalarField = manufactured_field(&es, &[(1, 1.0), (2, 0.2)]).unwrap().into();
    let gap = es.gamma[1] - es.gamma[0];
    let ft = frequency_trace(&field, &default_radii(&field, DEFAULT_R0).unwrap(), DEFAULT_R0).unwrap();
    let err = (ft.gamma_hat() - es.gamma[0]).abs();
    let off = blowup(&field, 1e-2).unwrap().off_group_fraction(&[1]).unwrap();
    outcome(
        gap >= 0.3 && err <= 1e-2 && off <= 0.05,
        format!("gamma_2 - gamma_1 = {gap:.3}, |gamma_hat - gamma_1| = {err:.1e}, off-group fraction {off:.1e} at tau = 1e-2"),
    )
}

fn criterion_8() -> Outcome {
    let p = params(0.5, 0.0);
    let f = Arc::new(forms(0.5, SphericalCap::centered_down(PI).unwrap(), 48, 96));
    let es = solve_eigs(&f, &p, 6).unwrap();
    let grid = HalfBallGrid::new(32, 1e-3, f.mesh.clone()).unwrap();
    let u = solve_extension(&grid, &p, Arc::new(ConstantPerturbation(0.1)), &es.psi[0], &SolveOptions::default())
        .unwrap();
    let taus = u.grid().radii()[1..].to_vec();
    let field: ScalarField = u.into();
    let radii = default_radii(&field, DEFAULT_R0).unwrap();
    let trace = frequency_trace(&field, &radii, DEFAULT_R0).unwrap();
    let gamma_err = rel(trace.gamma_hat(), es.gamma[0]);
    let ft = fourier_coeffs(&field, &es, &taus).unwrap();
    let (j0, _) = ft.dominant_mode();
    let betas: Vec<f64> = [0.3, 0.5, 0.7]
        .iter()
        .map(|&r| beta_coefficients(&ft, es.gamma[j0 - 1], r).unwrap()[j0 - 1])
        .collect();
    let (lo, hi) = betas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (hi - lo) / hi.abs().max(lo.abs());
    let an = Almgren::new(&field);
    let mid = &radii[radii.len() / 4..3 * radii.len() / 4];
    let picks: Vec<f64> = (0..5).map(|k| mid[k * (mid.len() - 1) / 4]).collect();
    let poho = picks.iter().filter(|&&r| an.pohozaev(r, 1e-2).unwrap().satisfied).count();
    outcome(
        gamma_err <= 0.05 && spread <= 0.05 && poho == 5,
        format!(
            "gamma_hat {:.4} vs gamma_1 {:.4} (rel {gamma_err:.1e}), j0 = {j0}, beta spread {spread:.1e}, Pohozaev {poho}/5",
            trace.gamma_hat(),
            es.gamma[0]
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    for n in [8usize, 16, 32, 64] {
        let n2 = (n * n) as f64;
        let b = 3.0 / (2.0 * n2);
        for i in 0..10_000 {
            let t = 4.0 * i as f64 / (10_000.0 * n2) + if i % 2 == 1 { i as f64 * 1e-4 } else { 0.0 };
            let f = smoothing_profile(n, t);
            if t <= 1.0 / n2 && f != 0.0 {
                failures.push(format!("n={n}: f_n({t}) = {f} ≠ 0"));
            }
            if t >= 2.0 / n2 && f != t - b {
                failures.push(format!("n={n}: f_n({t}) ≠ t - 3/(2n²)"));
            }
            let e = smoothing_euler_defect(n, t);
            if !(-b <= e && e <= 0.0) || smoothing_offset(n, t).abs() > b {
                failures.push(format!("n={n}: bound violated at t = {t}"));
            }
        }
        let sc = SmoothedCone::new(ConeProfile::planar(1.0, 1.0).unwrap(), n).unwrap();
        let bound = 3.0 / (4.0 * n as f64);
        for i in 0..1000 {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / 1000.0;
            let x = x.signum() * x.abs().powi(3);
            let m = sc.starshape_margin(&sc.boundary_point(&[x])).unwrap();
            if m < bound {
                failures.push(format!("n={n}: star-shape margin {m} at x' = {x}"));
            }
        }
        for i in 0..10_000 {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / 10_000.0;
            if sc.cone_gap(&[x]) < bound {
                failures.push(format!("n={n}: containment margin below 3/(4n) at x' = {x}"));
            }
        }
    }
    let detail = match failures.first() {
        None => "f_n identities exact, bounds hold, margins ≥ 3/(4n) for n in {8, 16, 32, 64}".to_string(),
        Some(f) => format!("{} failures, first: {f}", failures.len()),
    };
    outcome(failures.is_empty(), detail)
}

fn criterion_10(log: &FloorLog) -> Outcome {
    let mut log_extra = FloorLog::default();
    for s in S_VALUES {
        for arc in [PI, 1.5 * PI, 2.0 * PI] {
            let cap = if arc == 2.0 * PI { SphericalCap::full_circle() } else { SphericalCap::centered_down(arc).unwrap() };
            let f = forms(s, cap, 24, 48);
            let lam = hardy_constant(&f, &params(s, 0.0)).unwrap().lambda_star;
            for frac in [0.5, 0.95] {
                let es = solve_eigs(&f, &params(s, frac * lam), 4).unwrap();
                log_extra.record(&es, &format!("s={s} arc={arc:.3} lambda={:.4}", frac * lam));
            }
        }
    }
    let systems = log.systems + log_extra.systems;
    let violations: Vec<&String> = log.violations.iter().chain(&log_extra.violations).collect();
    let worst = log.worst.min(log_extra.worst);
    outcome(
        violations.is_empty(),
        match violations.first() {
            None => format!("{systems} eigen systems, smallest mu_j + (1-s)^2 = {worst:.3e}"),
            Some(v) => format!("{} violations, first: {v}", violations.len()),
        },
    )
}

fn main() {
    let mut log = FloorLog::default();
    let checks: Vec<(&str, Box<dyn FnOnce(&mut FloorLog) -> Outcome>)> = vec![
        ("closed-form constants", Box::new(|_| criterion_1())),
        ("spectral anchors", Box::new(criterion_2)),
        ("1-D/2-D oracle agreement", Box::new(criterion_3)),
        ("Hardy duality", Box::new(|_| criterion_4())),
        ("Hardy monotonicity", Box::new(|_| criterion_5())),
        ("Almgren exactness on pure profiles", Box::new(|_| criterion_6())),
        ("blow-up classification", Box::new(|_| criterion_7())),
        ("end-to-end vanishing order", Box::new(|_| criterion_8())),
        ("geometry certificates", Box::new(|_| criterion_9())),
        ("spectrum floor", Box::new(|l| criterion_10(l))),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let o = check(&mut log);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}: {name}: {} [{:.1} s]", k + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
