use std::fs;
use std::path::Path;

use conefrac_cli::config::TaskKind;
use conefrac_cli::manifest::sha256_hex;
use conefrac_cli::{main_with_args, run, CliError, RunRequest, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK};
use serde_json::Value;

fn request(task: TaskKind, config: &str, out: &Path) -> RunRequest {
    RunRequest {
        task,
        config_text: config.into(),
        out_dir: out.to_path_buf(),
        threads: 1,
        mesh_level: None,
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_SOLVE: &str = "[params]\ns = 0.5\n[cone]\npreset = half\n[mesh]\nnt = 16\nntheta = 32\nnr = 16\n\
                           [expressions]\nh = 0.1 * (1 + x1^2)\n[task]\nfield = solve\n";

#[test]
fn half_plane_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[params]\ns = 0.5\nlambda = 0\n[cone]\npreset = half\n[task]\ncount = 4\n";
    run(&request(TaskKind::Eig, cfg, dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("eigenvalues.csv")).unwrap();
    let mu: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!((mu[0] / 0.75 - 1.0).abs() < 0.01, "{mu:?}");
    assert!((mu[1] / 3.75 - 1.0).abs() < 0.01, "{mu:?}");
    let report = json(&dir.path().join("eig.json"));
    assert_eq!(report["above_floor"], Value::Bool(true));
    assert!(fs::read_to_string(dir.path().join("ladder.svg")).unwrap().contains("<polyline"));
}

#[test]
fn manufactured_frequency_recovers_the_lower_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[params]\ns = 0.5\n[cone]\npreset = half\n[mesh]\nnt = 24\nntheta = 48\n[task]\nmodes = 1:1, 3:0.2\n";
    run(&request(TaskKind::Frequency, cfg, dir.path())).unwrap();
    let report = json(&dir.path().join("frequency.json"));
    let gamma_hat = report["gamma_hat"].as_f64().unwrap();
    let gamma1 = report["gamma_j0"].as_f64().unwrap();
    assert_eq!(report["j0"], 1);
    assert!((gamma_hat - gamma1).abs() < 1e-2);
    assert!((gamma_hat - 0.5).abs() < 1e-2);
    for name in ["frequency.csv", "fourier.csv", "pohozaev.csv", "frequency.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn smoothed_wedge_is_star_shaped_with_margin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[params]\ns = 0.5\n[cone]\ng_plus = 1\ng_minus = 1\n[task]\nn = 12\nsamples = 1000\n";
    run(&request(TaskKind::SmoothCone, cfg, dir.path())).unwrap();
    let report = json(&dir.path().join("smooth_cone.json"));
    assert!(report["min_star_margin"].as_f64().unwrap() >= 3.0 / 48.0);
    assert!(report["min_cone_gap"].as_f64().unwrap() >= 3.0 / 48.0);
    let rows = fs::read_to_string(dir.path().join("smooth_cone.csv")).unwrap().lines().count();
    assert_eq!(rows, 1001);
}

#[test]
fn single_threaded_runs_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&request(TaskKind::Frequency, SMALL_SOLVE, a.path())).unwrap();
    run(&request(TaskKind::Frequency, SMALL_SOLVE, b.path())).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for name in names {
        let x = fs::read(a.path().join(&name)).unwrap();
        let y = fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn manifest_records_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut req = request(TaskKind::SolveExt, &SMALL_SOLVE.replace("field = solve\n", ""), dir.path());
    req.threads = 2;
    run(&req).unwrap();
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["task"], "solve-ext");
    assert_eq!(m["threads"], 2);
    assert_eq!(m["config_sha256"], sha256_hex(req.config_text.as_bytes()));
    assert_eq!(m["tolerances"]["task"]["inner_condition"], "neumann");
    assert!(m["admissibility"]["lambda_star"].as_f64().unwrap() > 0.0);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for o in outputs {
        let bytes = fs::read(dir.path().join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], sha256_hex(&bytes));
    }
    let field = fs::read(dir.path().join("field.bin")).unwrap();
    let (header, values) = conefrac::extension::read_field(&field[..]).unwrap();
    assert_eq!(header.n_r, 16);
    assert_eq!(values.len(), header.value_count());
}

#[test]
fn inadmissible_lambda_reports_the_hardy_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[params]\ns = 0.5\nlambda = 2\n[cone]\npreset = half\n";
    let err = run(&request(TaskKind::Eig, cfg, dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    let msg = err.to_string();
    assert!(msg.contains("Hardy constant of the cap is 0.81"), "{msg}");
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    fs::write(path("ok.ini"), "[params]\ns = 0.5\n[cone]\ng_plus = 1\ng_minus = 1\n").unwrap();
    fs::write(path("bad.ini"), "[params]\ns = 1.5\n[cone]\npreset = half\n").unwrap();
    fs::write(path("stall.ini"), SMALL_SOLVE.replace("field = solve\n", "max_iter = 1\n")).unwrap();
    fs::write(path("file"), "").unwrap();

    let code = |args: &[&str]| {
        let mut all = vec!["conefrac".to_string()];
        all.extend(args.iter().map(|s| s.to_string()));
        main_with_args(all)
    };
    assert_eq!(code(&["smooth-cone", "--config", &path("ok.ini"), "--out", &path("o1")]), EXIT_OK);
    assert_eq!(code(&["eig", "--config", &path("bad.ini"), "--out", &path("o2")]), EXIT_CONFIG);
    assert_eq!(code(&["eig", "--config", &path("missing.ini")]), EXIT_CONFIG);
    assert_eq!(code(&["egi", "--config", &path("ok.ini")]), EXIT_CONFIG);
    assert_eq!(code(&["eig"]), EXIT_CONFIG);
    assert_eq!(code(&["solve-ext", "--config", &path("stall.ini"), "--out", &path("o3")]), EXIT_NUMERICAL);
    assert_eq!(code(&["smooth-cone", "--config", &path("ok.ini"), "--out", &path("file")]), EXIT_IO);
}

#[test]
fn mesh_level_overrides_the_mesh_block() {
    let cfg = conefrac_cli::load_config(TaskKind::Hardy, "[params]\ns = 0.5\n[cone]\npreset = full\n", Some(1)).unwrap();
    assert_eq!((cfg.mesh.nt, cfg.mesh.ntheta, cfg.mesh.nr), (24, 48, 16));
    assert!(matches!(
        conefrac_cli::load_config(TaskKind::Hardy, "[params]\ns = 0.5\n[cone]\npreset = full\n", Some(9)),
        Err(CliError::Config(_))
    ));
}
