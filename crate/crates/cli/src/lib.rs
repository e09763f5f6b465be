//! Command-line front-end: reads a run configuration, executes one task and
//! writes CSV/JSON/SVG artifacts plus a manifest into the output directory.

pub mod config;
pub mod expr;
pub mod manifest;
pub mod plot;
pub mod tasks;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use crate::config::{parse_config, RunConfig, TaskKind};
use crate::tasks::{TaskError, TaskOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("task {task} failed: {source}")]
    Numerical {
        task: TaskKind,
        #[source]
        source: conefrac::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "conefrac", version, about = "Spectral, Hardy and frequency diagnostics for fractional problems on cones")]
struct Args {
    /// eig | hardy | scan | frequency | solve-ext | smooth-cone
    task: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// worker threads; outputs are bit-reproducible only with 1
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// replace the [mesh] sizes by 12·2^L × 24·2^L cells and 8·2^L shells
    #[arg(long)]
    mesh_level: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub task: TaskKind,
    pub config_text: String,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub mesh_level: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Validated configuration with the mesh-level override applied.
pub fn load_config(task: TaskKind, text: &str, mesh_level: Option<u32>) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(text, Some(task)).map_err(|e| CliError::Config(e.to_string().trim_end().into()))?;
    if let Some(level) = mesh_level {
        if level > 6 {
            return Err(CliError::Config(format!("--mesh-level {level} is above the supported maximum 6")));
        }
        cfg.mesh = cfg.mesh.at_level(level);
    }
    Ok(cfg)
}

fn compute(cfg: &RunConfig) -> Result<(TaskOutput, Option<f64>), CliError> {
    let task = cfg.task.kind();
    let lift = |e: TaskError| match e {
        TaskError::Config(m) => CliError::Config(m),
        TaskError::Numerical(source) => CliError::Numerical { task, source },
    };
    let lambda_star = if task.needs_admissible_lambda() {
        let cap = tasks::cap_of(cfg).map_err(lift)?;
        Some(tasks::admissibility_prepass(&cfg.params, cap).map_err(lift)?)
    } else {
        None
    };
    let out = tasks::run_task(cfg, lambda_star).map_err(lift)?;
    Ok((out, lambda_star))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run(req: &RunRequest) -> Result<RunSummary, CliError> {
    if req.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let cfg = load_config(req.task, &req.config_text, req.mesh_level)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} threads: {e}", req.threads)))?;
    let (out, lambda_star) = pool.install(|| compute(&cfg))?;

    fs::create_dir_all(&req.out_dir).map_err(|source| CliError::Io {
        path: req.out_dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    for (name, bytes) in &out.artifacts {
        let path = req.out_dir.join(name);
        write(&path, bytes)?;
        files.push(path);
    }
    let manifest = manifest::build(&manifest::ManifestInput {
        config_text: &req.config_text,
        config: &cfg,
        mesh_level: req.mesh_level,
        threads: req.threads,
        lambda_star,
        details: &out.details,
        warnings: &out.warnings,
        outputs: &out.artifacts,
    });
    let path = req.out_dir.join("manifest.json");
    write(&path, &tasks::pretty(&manifest))?;
    files.push(path);
    Ok(RunSummary {
        files,
        warnings: out.warnings,
    })
}

/// Entry point behind the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let Some(task) = TaskKind::from_name(&args.task) else {
        let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        eprintln!("error: unknown task '{}'{}", args.task, config::suggestion(&args.task, &names));
        return EXIT_CONFIG;
    };
    let config_text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let req = RunRequest {
        task,
        config_text,
        out_dir: args.out,
        threads: args.threads,
        mesh_level: args.mesh_level,
    };
    match run(&req) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for f in &summary.files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
