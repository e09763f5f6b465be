//! Reproducibility manifest written next to every run's artifacts.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct ManifestInput<'a> {
    pub config_text: &'a str,
    pub config: &'a RunConfig,
    pub mesh_level: Option<u32>,
    pub threads: usize,
    pub lambda_star: Option<f64>,
    pub details: &'a Value,
    pub warnings: &'a [String],
    pub outputs: &'a [(String, Vec<u8>)],
}

/// No timestamps or paths, so identical runs give identical manifests.
pub fn build(m: &ManifestInput<'_>) -> Value {
    let cfg = m.config;
    let p = &cfg.params;
    let cap = crate::tasks::cap_of(cfg).ok();
    let outputs: Vec<Value> = m
        .outputs
        .iter()
        .map(|(name, bytes)| json!({ "file": name, "bytes": bytes.len(), "sha256": sha256_hex(bytes) }))
        .collect();
    json!({
        "task": cfg.task.kind().name(),
        "config_sha256": sha256_hex(m.config_text.as_bytes()),
        "params": {
            "dim": p.dim(),
            "s": p.s(),
            "lambda": p.lambda(),
            "p": p.p(),
            "kappa_s": p.kappa(),
        },
        "cone": {
            "spec": cfg.cone.describe(),
            "cap": cap.map(|c| json!({ "start": c.start(), "length": c.length() })),
        },
        "mesh": {
            "nt": cfg.mesh.nt,
            "ntheta": cfg.mesh.ntheta,
            "grading": cfg.mesh.grading,
            "nr": cfg.mesh.nr,
            "rmin": cfg.mesh.rmin,
            "mesh_level": m.mesh_level,
        },
        "expressions": {
            "h": cfg.h.text,
            "lid": cfg.lid.as_ref().map(|l| l.text.clone()),
        },
        "admissibility": m.lambda_star.map(|l| json!({
            "lambda_star": l,
            "mesh_level": crate::tasks::PREPASS_LEVEL,
        })),
        "tolerances": {
            "multiplicity": conefrac::spectral::MULTIPLICITY_TOL,
            "task": m.details,
        },
        "versions": {
            "conefrac-cli": env!("CARGO_PKG_VERSION"),
            "conefrac-core": conefrac::VERSION,
        },
        "threads": m.threads,
        "warnings": m.warnings,
        "outputs": outputs,
    })
}
