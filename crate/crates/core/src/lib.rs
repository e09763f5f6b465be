//! Numerical toolkit for fractional Hardy operators on cones: spherical-cap
//! eigenproblems, Hardy constants, Caffarelli–Silvestre extensions, and
//! Almgren frequency diagnostics.

pub mod almgren;
pub mod cones;
pub mod error;
pub mod extension;
pub mod hardy;
pub mod linalg;
pub mod params;
pub mod quadrature;
pub mod sphercap;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
pub use params::ProblemParams;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
