//! One function per task. Each returns its artifacts in memory so the
//! caller controls where (and whether) they are written.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use serde_json::{json, Value};

use conefrac::almgren::{
    beta_coefficients, blowup, default_radii, fourier_coeffs, frequency_trace, geometric_radii, Almgren,
    FrequencyTrace, SMALLEST_RADIUS,
};
use conefrac::cones::{cap_of_cone, SmoothedCone, SphericalCap};
use conefrac::extension::{
    dominant_mode_inner_data, manufactured_field_with_forms, solve_with_operator, write_field, ConstantPerturbation,
    ExtensionOperator, FieldHeader, FnPerturbation, GridField, HalfBallGrid, InnerBoundary, Perturbation,
    ScalarField, SolveOptions,
};
use conefrac::hardy::{hardy_constant, hardy_scan, hardy_with_richardson, HardyResult, MeshSpec};
use conefrac::params::hardy_constant_full_space;
use conefrac::spectral::{solve_eigs_admissible, EigenSystem};
use conefrac::sphercap::{assemble, build_mesh, AssembledForms, HemisphereMesh};
use conefrac::ProblemParams;

use crate::config::{FieldSource, RunConfig, SolveSettings, TaskConfig};
use crate::expr::Bindings;
use crate::plot::{Plot, Series};

/// Pohozaev tolerance, relative to the larger side.
pub const POHOZAEV_TOL: f64 = 1e-2;
/// Mesh level of the admissibility pre-pass.
pub const PREPASS_LEVEL: u32 = 1;

pub struct TaskOutput {
    pub artifacts: Vec<(String, Vec<u8>)>,
    /// task-specific manifest entries
    pub details: Value,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub enum TaskError {
    /// bad input only detectable once the geometry exists
    Config(String),
    Numerical(conefrac::Error),
}

impl From<conefrac::Error> for TaskError {
    fn from(e: conefrac::Error) -> Self {
        TaskError::Numerical(e)
    }
}

type TaskResult<T> = Result<T, TaskError>;

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cap_json(cap: &SphericalCap) -> Value {
    json!({ "start": cap.start(), "length": cap.length() })
}

pub fn cap_of(cfg: &RunConfig) -> TaskResult<SphericalCap> {
    let profile = cfg.cone.profile()?;
    Ok(cap_of_cone(&profile)?)
}

/// Λ on the coarse pre-pass mesh; λ at or above it is a configuration error.
pub fn admissibility_prepass(params: &ProblemParams, cap: SphericalCap) -> TaskResult<f64> {
    let spec = MeshSpec::level(PREPASS_LEVEL);
    let lambda_star = hardy_constant(&spec.forms(params, cap)?, params)?.lambda_star;
    if params.lambda() >= lambda_star {
        return Err(TaskError::Config(format!(
            "[params] lambda: lambda = {} is not admissible; the Hardy constant of the cap is {lambda_star:.6} \
             (mesh level {PREPASS_LEVEL}, {}x{} cells)",
            params.lambda(),
            spec.n_t,
            spec.n_theta
        )));
    }
    Ok(lambda_star)
}

fn sphere_forms(cfg: &RunConfig, cap: SphericalCap) -> TaskResult<Arc<AssembledForms>> {
    let m = &cfg.mesh;
    let mesh = build_mesh(m.nt, m.ntheta, cfg.params.s(), cap, m.grading)?;
    Ok(Arc::new(assemble(&mesh, &cfg.params)?))
}

fn eigen_system(cfg: &RunConfig, forms: &AssembledForms, count: usize, lambda_star: f64) -> TaskResult<EigenSystem> {
    Ok(solve_eigs_admissible(forms, &cfg.params, count, lambda_star, false)?)
}

pub fn eig(cfg: &RunConfig, count: usize, lambda_star: f64) -> TaskResult<TaskOutput> {
    let cap = cap_of(cfg)?;
    let forms = sphere_forms(cfg, cap)?;
    let es = eigen_system(cfg, &forms, count, lambda_star)?;
    let floor = cfg.params.spectrum_floor();
    let distinct: Vec<Value> = es
        .distinct()
        .iter()
        .map(|&(mu, m)| json!({ "mu": mu, "multiplicity": m }))
        .collect();
    let report = json!({
        "mu": es.mu,
        "gamma": es.gamma.iter().map(|&g| num(g)).collect::<Vec<_>>(),
        "multiplicity_group": es.groups.iter().map(|g| g + 1).collect::<Vec<_>>(),
        "distinct": distinct,
        "residuals": es.residuals,
        "spectrum_floor": floor,
        "above_floor": es.mu.iter().all(|&m| m > floor),
        "lambda_star_prepass": lambda_star,
        "cap": cap_json(&cap),
        "warnings": es.warnings,
    });
    let pts: Vec<(f64, f64)> = es.mu.iter().enumerate().map(|(j, &m)| ((j + 1) as f64, m)).collect();
    let n = es.len() as f64;
    let svg = Plot::new("Eigenvalue ladder", "j", "mu_j")
        .add(Series::line("mu_j", pts).with_markers())
        .add(Series::line("floor -(N-2s)^2/4", vec![(1.0, floor), (n.max(2.0), floor)]).dashed())
        .render();
    Ok(TaskOutput {
        artifacts: vec![
            ("eigenvalues.csv".into(), es.to_csv().into_bytes()),
            ("eig.json".into(), pretty(&report)),
            ("ladder.svg".into(), svg.into_bytes()),
        ],
        details: json!({ "eig_count": count, "residual_max": es.residuals.iter().fold(0.0f64, |a, &b| a.max(b)) }),
        warnings: es.warnings.clone(),
    })
}

fn mesh_spec(cfg: &RunConfig) -> MeshSpec {
    MeshSpec {
        n_t: cfg.mesh.nt,
        n_theta: cfg.mesh.ntheta,
        grading: cfg.mesh.grading,
    }
}

fn hardy_json(r: &HardyResult) -> Value {
    json!({
        "lambda_star": r.lambda_star,
        "richardson": r.richardson,
        "mesh_level": r.mesh_level,
        "n_t": r.n_t,
        "n_theta": r.n_theta,
        "cap": cap_json(&r.cap),
        "s": r.s,
    })
}

pub fn hardy(cfg: &RunConfig, richardson: bool) -> TaskResult<TaskOutput> {
    let cap = cap_of(cfg)?;
    let spec = mesh_spec(cfg);
    let res = if richardson {
        hardy_with_richardson(&cfg.params, cap, spec)?
    } else {
        hardy_constant(&spec.forms(&cfg.params, cap)?, &cfg.params)?
    };
    let mut report = hardy_json(&res);
    report["full_space"] = json!(hardy_constant_full_space(&cfg.params));
    let warnings = if richardson && res.richardson.is_none() {
        vec!["mesh cannot be coarsened; no Richardson estimate".to_string()]
    } else {
        Vec::new()
    };
    Ok(TaskOutput {
        artifacts: vec![("hardy.json".into(), pretty(&report))],
        details: json!({ "richardson": richardson }),
        warnings,
    })
}

pub fn scan(cfg: &RunConfig, arcs: &[f64], richardson: bool, margin: f64) -> TaskResult<TaskOutput> {
    let table = hardy_scan(arcs, &cfg.params, mesh_spec(cfg), richardson)?;
    let full = hardy_constant_full_space(&cfg.params);
    let last = table.rows.last().expect("nonempty scan");
    let full_circle = (last.arc_length - TAU).abs() < 1e-12;
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "arc_length": r.arc_length,
                "lambda_star": r.lambda_star,
                "mesh_level": r.mesh_level,
                "richardson": r.richardson,
            })
        })
        .collect();
    let report = json!({
        "rows": rows,
        "min_margin": num(table.min_margin),
        "margin": margin,
        "strictly_decreasing": table.strictly_decreasing(margin),
        "full_space": full,
        "full_circle_relative_error": full_circle.then(|| (last.lambda_star - full).abs() / full),
    });
    let mut plot = Plot::new("Hardy constant vs arc length", "arc length", "Lambda")
        .add(Series::line("Lambda", table.rows.iter().map(|r| (r.arc_length, r.lambda_star)).collect()).with_markers());
    let rich: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter_map(|r| Some((r.arc_length, r.richardson?)))
        .collect();
    if !rich.is_empty() {
        plot = plot.add(Series::line("Richardson", rich).dashed());
    }
    let mut warnings = Vec::new();
    if !table.strictly_decreasing(margin) {
        warnings.push(format!(
            "Hardy constants do not decrease by more than {margin} between consecutive arcs (smallest step {:e})",
            table.min_margin
        ));
    }
    Ok(TaskOutput {
        artifacts: vec![
            ("scan.csv".into(), table.to_csv().into_bytes()),
            ("scan.json".into(), pretty(&report)),
            ("scan.svg".into(), plot.render().into_bytes()),
        ],
        details: json!({ "richardson": richardson, "margin": margin }),
        warnings,
    })
}

fn perturbation(cfg: &RunConfig) -> Arc<dyn Perturbation> {
    match cfg.h.expr.constant() {
        Some(c) => Arc::new(ConstantPerturbation(c)),
        None => {
            let f = cfg.h.expr.compile();
            Arc::new(FnPerturbation::new(move |x: [f64; 2]| f(&Bindings::planar(x))))
        }
    }
}

fn lid_values(cfg: &RunConfig, mesh: &HemisphereMesh, es: &EigenSystem, mode: usize) -> TaskResult<(Vec<f64>, String)> {
    match &cfg.lid {
        None => Ok((es.psi[mode - 1].clone(), format!("psi_{mode}"))),
        Some(src) => {
            let values = (0..mesh.n_nodes())
                .map(|node| {
                    let (t, theta) = mesh.coords(node);
                    src.expr
                        .evaluate(&Bindings::spherical(theta, t))
                        .map_err(|e| TaskError::Config(format!("[expressions] lid: {e}")))
                })
                .collect::<TaskResult<Vec<f64>>>()?;
            Ok((values, src.text.clone()))
        }
    }
}

struct Solved {
    field: GridField,
    es: EigenSystem,
    lid_source: String,
    dominant_mode: Option<usize>,
}

/// Extension solve: Neumann data on the inner shell when h ≢ 0, otherwise
/// the dominant homogeneous mode of the lid data.
fn solve_field(cfg: &RunConfig, settings: &SolveSettings, lambda_star: f64) -> TaskResult<Solved> {
    let cap = cap_of(cfg)?;
    let forms = sphere_forms(cfg, cap)?;
    let es = eigen_system(cfg, &forms, settings.eig_count, lambda_star)?;
    let (lid, lid_source) = lid_values(cfg, &forms.mesh, &es, settings.lid_mode)?;
    let h = perturbation(cfg);
    let grid = HalfBallGrid::new(cfg.mesh.nr, cfg.mesh.rmin, forms.mesh.clone())?;
    let (inner, dominant_mode) = if h.is_zero() {
        let (data, j) = dominant_mode_inner_data(&es, &lid, cfg.mesh.rmin)?;
        (InnerBoundary::Dirichlet(data), Some(j))
    } else {
        (InnerBoundary::Neumann, None)
    };
    let op = ExtensionOperator::with_forms(grid, forms, &cfg.params, h)?;
    let opts = SolveOptions {
        inner,
        tol: settings.tol,
        max_iter: settings.max_iter,
    };
    let field = solve_with_operator(Arc::new(op), &lid, &opts)?;
    Ok(Solved {
        field,
        es,
        lid_source,
        dominant_mode,
    })
}

pub fn solve_ext(cfg: &RunConfig, settings: &SolveSettings, lambda_star: f64) -> TaskResult<TaskOutput> {
    let Solved {
        field,
        es: _,
        lid_source,
        dominant_mode,
    } = solve_field(cfg, settings, lambda_star)?;
    let mut bin = Vec::new();
    write_field(&mut bin, &field)?;
    let header = FieldHeader::of(&field);
    let radii = field.grid().radii().to_vec();
    let inner = field.inner_condition();
    let iterations = field.iterations();
    let residual = field.residual();
    let scalar: ScalarField = field.into();
    let an = Almgren::new(&scalar);
    let mut csv = String::from("shell,r,H,D,Ncal\n");
    for (i, &r) in radii.iter().enumerate().skip(1) {
        let (h, d) = (an.h(r)?, an.d(r)?);
        let _ = writeln!(csv, "{i},{r:.15e},{h:.15e},{d:.15e},{:.15e}", r * d / h);
    }
    let report = json!({
        "iterations": iterations,
        "relative_residual": residual,
        "inner_condition": inner,
        "dominant_mode": dominant_mode,
        "lid": lid_source,
        "h": cfg.h.text,
        "header": {
            "n_r": header.n_r,
            "n_t": header.n_t,
            "n_theta": header.n_theta,
            "s": header.s,
            "lambda": header.lambda,
            "r_min": header.r_min,
            "grading": header.grading,
            "cap_start": header.cap_start,
            "cap_length": header.cap_length,
        },
        "values": header.value_count(),
    });
    Ok(TaskOutput {
        artifacts: vec![
            ("field.bin".into(), bin),
            ("solve.json".into(), pretty(&report)),
            ("shells.csv".into(), csv.into_bytes()),
        ],
        details: json!({
            "tol": settings.tol,
            "max_iter": settings.max_iter,
            "inner_condition": inner,
            "lid": lid_source,
        }),
        warnings: Vec::new(),
    })
}

pub struct FrequencySettings<'a> {
    pub field: &'a FieldSource,
    pub solve: &'a SolveSettings,
    pub r0: f64,
    pub radii: usize,
    pub taus: &'a [f64],
    pub beta_radii: &'a [f64],
}

fn trace_json(ft: &FrequencyTrace) -> Value {
    let f = &ft.fit;
    json!({
        "gamma_hat": num(f.gamma_hat),
        "error_bar": num(f.error_bar),
        "c": num(f.c),
        "delta": num(f.delta),
        "delta_fixed": f.delta_fixed,
        "condition": num(f.condition),
        "fallback": f.fallback,
        "n_points": f.n_points,
    })
}

pub fn frequency(cfg: &RunConfig, fs: &FrequencySettings<'_>, lambda_star: f64) -> TaskResult<TaskOutput> {
    let mut warnings = Vec::new();
    let (field, es, source): (ScalarField, EigenSystem, Value) = match fs.field {
        FieldSource::Manufactured(modes) => {
            let cap = cap_of(cfg)?;
            let forms = sphere_forms(cfg, cap)?;
            let es = eigen_system(cfg, &forms, fs.solve.eig_count, lambda_star)?;
            if cfg.h.expr.constant() != Some(0.0) {
                warnings.push("h is ignored for manufactured fields".into());
            }
            let field = manufactured_field_with_forms(&es, forms, modes)?;
            let modes: Vec<Value> = modes.iter().map(|&(j, b)| json!({ "j": j, "beta": b })).collect();
            (field.into(), es, json!({ "kind": "manufactured", "modes": modes }))
        }
        FieldSource::Solve => {
            let s = solve_field(cfg, fs.solve, lambda_star)?;
            let info = json!({
                "kind": "solve",
                "lid": s.lid_source,
                "inner_condition": s.field.inner_condition(),
                "iterations": s.field.iterations(),
                "relative_residual": s.field.residual(),
            });
            (s.field.into(), s.es, info)
        }
    };

    let radii = match &field {
        ScalarField::Modal(_) => geometric_radii(SMALLEST_RADIUS, fs.r0, fs.radii)?,
        ScalarField::Grid(_) => default_radii(&field, fs.r0)?,
    };
    let trace = frequency_trace(&field, &radii, fs.r0)?;
    if !trace.above_lower_bound(&cfg.params) {
        warnings.push(format!(
            "frequency drops below the bound -(N-2s)/2 (minimum {})",
            trace.min_frequency()
        ));
    }

    let fourier_taus = match &field {
        ScalarField::Modal(_) => geometric_radii(SMALLEST_RADIUS, 0.95, fs.radii.max(8))?,
        ScalarField::Grid(g) => g.grid().radii()[1..].to_vec(),
    };
    let ft = fourier_coeffs(&field, &es, &fourier_taus)?;
    let (j0, flagged) = ft.dominant_mode();
    if flagged {
        warnings.push(format!("dominant mode {j0} has a competitor from another eigenvalue group within 10%"));
    }
    let gamma0 = es.gamma[j0 - 1];
    let betas = fs
        .beta_radii
        .iter()
        .map(|&r| Ok(beta_coefficients(&ft, gamma0, r)?[j0 - 1]))
        .collect::<TaskResult<Vec<f64>>>()?;
    let bmax = betas.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let bmin = betas.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let bscale = betas.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let spread = if bscale > 0.0 { (bmax - bmin) / bscale } else { 0.0 };

    let an = Almgren::new(&field);
    let mid = &radii[radii.len() / 4..(3 * radii.len() / 4).max(radii.len() / 4 + 1)];
    let mut poho_csv = String::from("r,lhs,rhs,tol,satisfied,green_residual\n");
    let mut all_satisfied = true;
    for &r in mid {
        let p = an.pohozaev(r, POHOZAEV_TOL)?;
        all_satisfied &= p.satisfied;
        let _ = writeln!(
            poho_csv,
            "{:.15e},{:.15e},{:.15e},{:.15e},{},{:.15e}",
            p.r, p.lhs, p.rhs, p.tol, p.satisfied, p.green_residual
        );
    }
    if !all_satisfied {
        warnings.push("the Pohozaev inequality fails at some radius".into());
    }

    let group = ft.group_of(j0);
    let blowups = fs
        .taus
        .iter()
        .map(|&tau| {
            let b = blowup(&field, tau)?;
            let off = match &field {
                ScalarField::Modal(_) => b.off_group_fraction(&group)?,
                ScalarField::Grid(_) => b.off_group_boundary_fraction(&es, &group)?,
            };
            Ok(json!({ "tau": tau, "h_tau": b.h_tau, "off_group_fraction": off }))
        })
        .collect::<TaskResult<Vec<Value>>>()?;

    let report = json!({
        "gamma_hat": num(trace.gamma_hat()),
        "gamma_j0": num(gamma0),
        "j0": j0,
        "j0_flagged": flagged,
        "group": group,
        "beta": fs.beta_radii.iter().zip(&betas).map(|(&r, &b)| json!({ "R": r, "beta": b })).collect::<Vec<_>>(),
        "betah_R_spread": spread,
        "fit": trace_json(&trace),
        "min_frequency": num(trace.min_frequency()),
        "above_lower_bound": trace.above_lower_bound(&cfg.params),
        "parseval_holds": ft.parseval_holds(),
        "pohozaev_satisfied": all_satisfied,
        "blowup": blowups,
        "field": source,
        "eigenvalues": es.mu,
    });
    let gamma_line = vec![(radii[0], gamma0), (*radii.last().unwrap(), gamma0)];
    let svg = Plot::new("Almgren frequency", "r", "N(r)")
        .log_x()
        .add(Series::line("N(r)", trace.radii.iter().copied().zip(trace.ncal.iter().copied()).collect()).with_markers())
        .add(Series::line(&format!("gamma_{j0}"), gamma_line).dashed())
        .render();
    Ok(TaskOutput {
        artifacts: vec![
            ("frequency.csv".into(), trace.to_csv().into_bytes()),
            ("fourier.csv".into(), ft.to_csv().into_bytes()),
            ("pohozaev.csv".into(), poho_csv.into_bytes()),
            ("frequency.json".into(), pretty(&report)),
            ("frequency.svg".into(), svg.into_bytes()),
        ],
        details: json!({
            "r0": fs.r0,
            "radii": radii.len(),
            "pohozaev_tol": POHOZAEV_TOL,
            "solve_tol": fs.solve.tol,
            "max_iter": fs.solve.max_iter,
            "field": source["kind"],
        }),
        warnings,
    })
}

/// Boundary abscissae concentrated near the vertex, where f_n bends.
fn boundary_samples(samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|i| {
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / samples as f64;
            u.signum() * u.abs().powi(3)
        })
        .collect()
}

pub fn smooth_cone(cfg: &RunConfig, n: usize, samples: usize) -> TaskResult<TaskOutput> {
    let sc = SmoothedCone::new(cfg.cone.profile()?, n)?;
    let bound = 3.0 / (4.0 * n as f64);
    let mut csv = String::from("x,psi,star_margin,cone_gap\n");
    let (mut min_star, mut min_gap) = (f64::INFINITY, f64::INFINITY);
    for x in boundary_samples(samples) {
        let p = sc.boundary_point(&[x]);
        let star = sc.starshape_margin(&p)?;
        let gap = sc.cone_gap(&[x]);
        min_star = min_star.min(star);
        min_gap = min_gap.min(gap);
        let _ = writeln!(csv, "{x:.15e},{:.15e},{star:.15e},{gap:.15e}", p[1]);
    }
    let report = json!({
        "n": n,
        "samples": samples,
        "bound": bound,
        "min_star_margin": min_star,
        "min_cone_gap": min_gap,
        "star_margin_ok": min_star >= bound,
        "cone_gap_ok": min_gap >= bound,
    });
    let mut warnings = Vec::new();
    if min_star < bound || min_gap < bound {
        warnings.push(format!("a margin falls below 3/(4n) = {bound}"));
    }
    Ok(TaskOutput {
        artifacts: vec![
            ("smooth_cone.csv".into(), csv.into_bytes()),
            ("smooth_cone.json".into(), pretty(&report)),
        ],
        details: json!({ "n": n, "samples": samples }),
        warnings,
    })
}

pub fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn run_task(cfg: &RunConfig, lambda_star: Option<f64>) -> TaskResult<TaskOutput> {
    let ls = || lambda_star.expect("pre-pass ran");
    match &cfg.task {
        TaskConfig::Eig { count } => eig(cfg, *count, ls()),
        TaskConfig::Hardy { richardson } => hardy(cfg, *richardson),
        TaskConfig::Scan {
            arcs,
            richardson,
            margin,
        } => scan(cfg, arcs, *richardson, *margin),
        TaskConfig::Frequency {
            field,
            solve,
            r0,
            radii,
            taus,
            beta_radii,
        } => frequency(
            cfg,
            &FrequencySettings {
                field,
                solve,
                r0: *r0,
                radii: *radii,
                taus,
                beta_radii,
            },
            ls(),
        ),
        TaskConfig::SolveExt { solve } => solve_ext(cfg, solve, ls()),
        TaskConfig::SmoothCone { n, samples } => smooth_cone(cfg, *n, *samples),
    }
}
