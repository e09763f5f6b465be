//! Hypographical cones, their equatorial caps, and the smoothed cones and
//! approximating domains used for the star-shapedness certificates.
//!
//! A cone is the region below the graph of a 1-homogeneous function
//! `phi(x') = |x'| g(x'/|x'|)`. In the plane, `g` reduces to the two numbers
//! `g(+1)` and `g(-1)`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::adaptive_gk;

/// Absolute tolerance for deciding that a point lies on a boundary.
pub const BOUNDARY_TOL: f64 = 1e-10;

type ProfileFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum ConeKind {
    Planar { g_plus: f64, g_minus: f64 },
    FullPlane,
    General { dim: usize, g: ProfileFn, max_abs: f64 },
}

/// A cone `{x_N < phi(x')}` described by its profile `g` on S^{N-2}.
#[derive(Clone)]
pub struct ConeProfile {
    kind: ConeKind,
}

impl fmt::Debug for ConeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ConeKind::Planar { g_plus, g_minus } => f
                .debug_struct("ConeProfile")
                .field("g_plus", g_plus)
                .field("g_minus", g_minus)
                .finish(),
            ConeKind::FullPlane => f.write_str("ConeProfile(full plane)"),
            ConeKind::General { dim, max_abs, .. } => f
                .debug_struct("ConeProfile")
                .field("dim", dim)
                .field("max_abs", max_abs)
                .finish_non_exhaustive(),
        }
    }
}

impl ConeProfile {
    /// Planar cone below the graph with slopes `g_plus` for x1 > 0 and
    /// `g_minus` for x1 < 0.
    pub fn planar(g_plus: f64, g_minus: f64) -> Result<Self> {
        if !g_plus.is_finite() || !g_minus.is_finite() {
            return Err(Error::Degenerate(format!(
                "profile values must be finite (g+ = {g_plus}, g- = {g_minus})"
            )));
        }
        Ok(Self {
            kind: ConeKind::Planar { g_plus, g_minus },
        })
    }

    /// The lower half-plane `x2 < 0`.
    pub fn half_plane() -> Self {
        Self {
            kind: ConeKind::Planar {
                g_plus: 0.0,
                g_minus: 0.0,
            },
        }
    }

    /// The whole plane (no graph constraint).
    pub fn full_plane() -> Self {
        Self {
            kind: ConeKind::FullPlane,
        }
    }

    /// A cone in R^dim with profile `g` on S^{dim-2}; `max_abs` must bound |g|.
    /// Only profile-level operations are available for these.
    pub fn general<F>(dim: usize, max_abs: f64, g: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim < 2 || !max_abs.is_finite() || max_abs < 0.0 {
            return Err(Error::Invalid(format!(
                "general cone needs dim ≥ 2 and a finite bound (dim={dim}, M={max_abs})"
            )));
        }
        Ok(Self {
            kind: ConeKind::General {
                dim,
                g: Arc::new(g),
                max_abs,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ConeKind::Planar { .. } | ConeKind::FullPlane => 2,
            ConeKind::General { dim, .. } => *dim,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self.kind, ConeKind::FullPlane)
    }

    /// g evaluated at a unit direction of R^{N-1}.
    pub fn g(&self, dir: &[f64]) -> f64 {
        match &self.kind {
            ConeKind::Planar { g_plus, g_minus } => {
                if dir[0] >= 0.0 {
                    *g_plus
                } else {
                    *g_minus
                }
            }
            ConeKind::FullPlane => f64::INFINITY,
            ConeKind::General { g, .. } => g(dir),
        }
    }

    /// M = max |g| over S^{N-2}.
    pub fn max_abs(&self) -> f64 {
        match &self.kind {
            ConeKind::Planar { g_plus, g_minus } => g_plus.abs().max(g_minus.abs()),
            ConeKind::FullPlane => f64::INFINITY,
            ConeKind::General { max_abs, .. } => *max_abs,
        }
    }

    /// phi(x') = |x'| g(x'/|x'|).
    pub fn phi(&self, xp: &[f64]) -> f64 {
        let norm = euclid(xp);
        if norm == 0.0 {
            return if self.is_full() { f64::INFINITY } else { 0.0 };
        }
        let dir: Vec<f64> = xp.iter().map(|v| v / norm).collect();
        norm * self.g(&dir)
    }

    /// Open-cone membership of x = (x', x_N).
    pub fn contains(&self, x: &[f64]) -> bool {
        let n = x.len();
        if self.is_full() {
            return true;
        }
        x[n - 1] < self.phi(&x[..n - 1])
    }

    fn planar_slopes(&self) -> Result<(f64, f64)> {
        match &self.kind {
            ConeKind::Planar { g_plus, g_minus } => Ok((*g_plus, *g_minus)),
            _ => Err(Error::Invalid(
                "operation requires a planar cone given by two slopes".into(),
            )),
        }
    }
}

/// A closed-open arc [start, start + length) of the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCap {
    start: f64,
    length: f64,
}

impl SphericalCap {
    pub fn new(start: f64, length: f64) -> Result<Self> {
        if !(length > 0.0 && length <= TAU + 1e-12) || !start.is_finite() {
            return Err(Error::Degenerate(format!(
                "arc length must lie in (0, 2π], got {length}"
            )));
        }
        Ok(Self {
            start: start.rem_euclid(TAU),
            length: length.min(TAU),
        })
    }

    pub fn full_circle() -> Self {
        Self {
            start: 0.0,
            length: TAU,
        }
    }

    /// Arc of the given length centered on the downward direction 3π/2.
    pub fn centered_down(length: f64) -> Result<Self> {
        Self::new(1.5 * PI - 0.5 * length, length)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_full(&self) -> bool {
        self.length >= TAU
    }

    /// Position of the angle measured from the arc start, in [0, 2π).
    fn offset(&self, theta: f64) -> f64 {
        (theta - self.start).rem_euclid(TAU)
    }

    /// Membership with the half-open convention: start belongs, end does not.
    pub fn contains(&self, theta: f64) -> bool {
        self.is_full() || self.offset(theta) < self.length
    }

    /// Membership in the open arc (start, end); on the full circle every angle.
    pub fn contains_open(&self, theta: f64) -> bool {
        if self.is_full() {
            return true;
        }
        let o = self.offset(theta);
        o > 1e-12 && o < self.length - 1e-12
    }
}

/// The equatorial cap spanned by a planar cone.
pub fn cap_of_cone(cone: &ConeProfile) -> Result<SphericalCap> {
    if cone.is_full() {
        return Ok(SphericalCap::full_circle());
    }
    let (gp, gm) = cone.planar_slopes()?;
    // boundary rays through (1, g+) and (-1, g-); the cone lies below them
    let a = PI - gm.atan();
    let b = TAU + gp.atan();
    SphericalCap::new(a, b - a)
}

/// Euclidean distance from x to the boundary of a planar cone.
pub fn distance_to_boundary(cone: &ConeProfile, x: &[f64]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    if cone.is_full() {
        return Err(Error::Degenerate("the full plane has no boundary".into()));
    }
    let (gp, gm) = cone.planar_slopes()?;
    let scale = euclid(x).max(1.0);
    if x[1] > cone.phi(&x[..1]) + BOUNDARY_TOL * scale {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies outside the closed cone",
            x[0], x[1]
        )));
    }
    let ray = |dx: f64, dy: f64| {
        let norm = dx.hypot(dy);
        let (ex, ey) = (dx / norm, dy / norm);
        let proj = x[0] * ex + x[1] * ey;
        if proj <= 0.0 {
            x[0].hypot(x[1])
        } else {
            (x[0] * ey - x[1] * ex).abs()
        }
    };
    Ok(ray(1.0, gp).min(ray(-1.0, gm)))
}

// ---------------------------------------------------------------------------
// smoothing profile f_n

/// Logistic-type transition σ(u) = e(u) / (e(u) + e(1-u)), e(u) = exp(-1/u).
pub fn transition(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        1.0 / (1.0 + (1.0 / u - 1.0 / (1.0 - u)).exp())
    }
}

/// The mollifier ζ(τ) = σ(τ - 1): 0 on [0,1], 1 on [2,∞).
pub fn mollifier(tau: f64) -> f64 {
    transition(tau - 1.0)
}

/// G(u) = ∫_0^u σ, evaluated on [0, 1/2] by quadrature and on (1/2, 1] via
/// the symmetry σ(1-u) = 1 - σ(u).
fn transition_integral(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u <= 0.5 {
        adaptive_gk(transition, 0.0, u, 1e-15).expect("smooth integrand")
    } else if u < 1.0 {
        u - 0.5 + transition_integral(1.0 - u)
    } else {
        u - 0.5
    }
}

/// Scaled deviation n^2 (f_n(t) - t), with every branch evaluated so that the
/// bound [-3/2, 0] holds in floating point.
fn scaled_offset(n2: f64, t: f64) -> f64 {
    let v = n2 * t;
    if v <= 1.0 {
        -v
    } else if v >= 2.0 {
        -1.5
    } else {
        let u = v - 1.0;
        if u <= 0.5 {
            transition_integral(u) - (1.0 + u)
        } else {
            transition_integral(1.0 - u) - 1.5
        }
    }
}

/// f_n(t) = ∫_{1/n²}^t ζ(n² σ) dσ.
pub fn smoothing_profile(n: usize, t: f64) -> f64 {
    let n2 = (n * n) as f64;
    let v = n2 * t;
    if v <= 1.0 {
        0.0
    } else if v >= 2.0 {
        t - 1.5 / n2
    } else {
        transition_integral(v - 1.0) / n2
    }
}

/// f_n'(t) = ζ(n² t).
pub fn smoothing_derivative(n: usize, t: f64) -> f64 {
    mollifier((n * n) as f64 * t)
}

/// f_n(t) - t.
pub fn smoothing_offset(n: usize, t: f64) -> f64 {
    let n2 = (n * n) as f64;
    scaled_offset(n2, t) / n2
}

/// f_n(t) - t f_n'(t).
pub fn smoothing_euler_defect(n: usize, t: f64) -> f64 {
    let n2 = (n * n) as f64;
    let v = n2 * t;
    let scaled = if v <= 1.0 {
        0.0
    } else if v >= 2.0 {
        -1.5
    } else {
        let u = v - 1.0;
        if u <= 0.5 {
            transition_integral(u) - (1.0 + u) * transition(u)
        } else {
            // G(u) - (1+u)σ(u) rewritten with σ(u) = 1 - σ(1-u)
            transition_integral(1.0 - u) + (1.0 + u) * transition(1.0 - u) - 1.5
        }
    };
    scaled / n2
}

/// Smallest admissible smoothing index n0 = ceil(6M).
pub fn min_smoothing_index(cone: &ConeProfile) -> usize {
    (6.0 * cone.max_abs()).ceil().max(1.0) as usize
}

/// The smoothed cone C_n = {x_N < psi_n(x')}, psi_n(x') = 1/n + f_n(|x'|) g(x'/|x'|).
#[derive(Debug, Clone)]
pub struct SmoothedCone {
    cone: ConeProfile,
    n: usize,
}

impl SmoothedCone {
    pub fn new(cone: ConeProfile, n: usize) -> Result<Self> {
        if cone.is_full() {
            return Err(Error::Invalid("the full plane has no graph to smooth".into()));
        }
        let n0 = min_smoothing_index(&cone);
        if n < n0 {
            return Err(Error::Domain(format!(
                "smoothing index n = {n} is below n0 = ceil(6M) = {n0}"
            )));
        }
        Ok(Self { cone, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cone(&self) -> &ConeProfile {
        &self.cone
    }

    fn split(xp: &[f64]) -> (f64, Vec<f64>) {
        let t = euclid(xp);
        let dir = if t > 0.0 {
            xp.iter().map(|v| v / t).collect()
        } else {
            let mut d = vec![0.0; xp.len()];
            d[0] = 1.0;
            d
        };
        (t, dir)
    }

    pub fn psi(&self, xp: &[f64]) -> f64 {
        let (t, dir) = Self::split(xp);
        1.0 / self.n as f64 + smoothing_profile(self.n, t) * self.cone.g(&dir)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let n = x.len();
        x[n - 1] < self.psi(&x[..n - 1])
    }

    /// psi_n(x') - phi(x'); bounded below by 3/(4n) for n ≥ n0.
    pub fn cone_gap(&self, xp: &[f64]) -> f64 {
        let (t, dir) = Self::split(xp);
        1.0 / self.n as f64 + smoothing_offset(self.n, t) * self.cone.g(&dir)
    }

    /// ∇F(x)·x for F(x) = x_N - psi_n(x'), at a point of ∂C_n.
    pub fn starshape_margin(&self, x: &[f64]) -> Result<f64> {
        let n = x.len();
        let psi = self.psi(&x[..n - 1]);
        if (x[n - 1] - psi).abs() > BOUNDARY_TOL {
            return Err(Error::Domain(format!(
                "point is not on the smoothed boundary (x_N - psi_n = {:e})",
                x[n - 1] - psi
            )));
        }
        let (t, dir) = Self::split(&x[..n - 1]);
        Ok(1.0 / self.n as f64 + self.cone.g(&dir) * smoothing_euler_defect(self.n, t))
    }

    /// The boundary point of C_n above x'.
    pub fn boundary_point(&self, xp: &[f64]) -> Vec<f64> {
        let mut p = xp.to_vec();
        p.push(self.psi(xp));
        p
    }
}

/// Where a point of R^{N+1} sits relative to the approximating domain Ω_n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Interior,
    /// flat part on the thin space t = 0
    Sigma,
    /// spherical lid |z| = R0
    Tau,
    /// lateral graph boundary
    Gamma,
    Exterior,
}

/// Ω_n = {x_N < psi_n(x') + (n/3) f_n(t)} ∩ B⁺_{R0}.
#[derive(Debug, Clone)]
pub struct ApproxDomain {
    smoothed: SmoothedCone,
    r0: f64,
}

impl ApproxDomain {
    pub fn new(smoothed: SmoothedCone, r0: f64) -> Result<Self> {
        if !(r0 > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {r0}")));
        }
        Ok(Self { smoothed, r0 })
    }

    pub fn radius(&self) -> f64 {
        self.r0
    }

    pub fn smoothed(&self) -> &SmoothedCone {
        &self.smoothed
    }

    /// G(z) = x_N - psi_n(x') - (n/3) f_n(t), for z = (x', x_N, t).
    pub fn level(&self, z: &[f64]) -> f64 {
        let m = z.len();
        let n = self.smoothed.n;
        z[m - 2]
            - self.smoothed.psi(&z[..m - 2])
            - n as f64 / 3.0 * smoothing_profile(n, z[m - 1])
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.classify(z) == Region::Interior
    }

    pub fn classify(&self, z: &[f64]) -> Region {
        let m = z.len();
        let t = z[m - 1];
        let radius = euclid(z);
        let g = self.level(z);
        if t < -BOUNDARY_TOL || radius > self.r0 + BOUNDARY_TOL {
            return Region::Exterior;
        }
        if t.abs() <= BOUNDARY_TOL {
            return if g < 0.0 && radius < self.r0 {
                Region::Sigma
            } else {
                Region::Exterior
            };
        }
        if g.abs() <= BOUNDARY_TOL && radius < self.r0 + BOUNDARY_TOL {
            return Region::Gamma;
        }
        if g > 0.0 {
            return Region::Exterior;
        }
        if (radius - self.r0).abs() <= BOUNDARY_TOL {
            Region::Tau
        } else {
            Region::Interior
        }
    }

    /// z·∇G(z) at a point of the lateral boundary, returned as
    /// (unnormalized, normalized by |∇G|). The unnormalized value is bounded
    /// below by 1/(4n) for n ≥ n0.
    pub fn gamma_normal_dot(&self, z: &[f64]) -> Result<(f64, f64)> {
        if self.classify(z) != Region::Gamma {
            return Err(Error::Domain("point is not on the lateral boundary".into()));
        }
        let m = z.len();
        let n = self.smoothed.n;
        let nf = n as f64;
        let xp = &z[..m - 2];
        let t = z[m - 1];
        let (rho, dir) = SmoothedCone::split(xp);
        let g = self.smoothed.cone.g(&dir);
        let raw = 1.0 / nf
            + g * smoothing_euler_defect(n, rho)
            + nf / 3.0 * smoothing_euler_defect(n, t);
        // |∇G|² = |∇psi_n|² + 1 + (n/3)² f_n'(t)², with the planar gradient of psi_n
        let grad_psi = if self.smoothed.cone.dim() == 2 {
            let sign = if xp[0] >= 0.0 { 1.0 } else { -1.0 };
            sign * smoothing_derivative(n, rho) * g
        } else {
            // radial part only; exact for profiles constant on S^{N-2}
            smoothing_derivative(n, rho) * g
        };
        let df = nf / 3.0 * smoothing_derivative(n, t);
        let norm = (grad_psi * grad_psi + 1.0 + df * df).sqrt();
        Ok((raw, raw / norm))
    }

    /// The lateral boundary point above (x', t).
    pub fn gamma_point(&self, xp: &[f64], t: f64) -> Vec<f64> {
        let n = self.smoothed.n;
        let mut z = xp.to_vec();
        z.push(self.smoothed.psi(xp) + n as f64 / 3.0 * smoothing_profile(n, t));
        z.push(t);
        z
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn caps_of_presets() {
        let half = cap_of_cone(&ConeProfile::half_plane()).unwrap();
        assert!((half.length() - PI).abs() < 1e-14);
        assert!((half.start() - PI).abs() < 1e-14);
        let full = cap_of_cone(&ConeProfile::full_plane()).unwrap();
        assert!(full.is_full());
        let wedge = cap_of_cone(&ConeProfile::planar(1.0, 1.0).unwrap()).unwrap();
        assert!((wedge.length() - 1.5 * PI).abs() < 1e-14);
        assert!(ConeProfile::planar(f64::INFINITY, 1.0).is_err());
        assert!(SphericalCap::new(0.0, 0.0).is_err());
    }

    #[test]
    fn cap_membership_matches_cone_by_sampling() {
        for &(gp, gm) in &[(1.0, 1.0), (0.0, 0.0), (-0.5, 2.0), (3.0, -1.0)] {
            let cone = ConeProfile::planar(gp, gm).unwrap();
            let cap = cap_of_cone(&cone).unwrap();
            let mut inside = 0usize;
            let samples = 100_000;
            for i in 0..samples {
                let th = (i as f64 + 0.5) / samples as f64 * TAU;
                let x = [th.cos(), th.sin()];
                let in_cone = cone.contains(&x);
                assert_eq!(in_cone, cap.contains(th), "g=({gp},{gm}) θ={th}");
                inside += in_cone as usize;
            }
            let measured = inside as f64 / samples as f64 * TAU;
            assert!((measured - cap.length()).abs() < 1e-3);
        }
    }

    #[test]
    fn half_open_convention() {
        let cap = SphericalCap::new(PI, PI).unwrap();
        assert!(cap.contains(PI));
        assert!(!cap.contains(TAU));
        assert!(!cap.contains_open(PI));
        assert!(cap.contains_open(1.5 * PI));
    }

    #[test]
    fn distance_examples() {
        let half = ConeProfile::half_plane();
        assert!((distance_to_boundary(&half, &[0.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(distance_to_boundary(&half, &[0.3, 0.0]).unwrap(), 0.0);
        assert!(distance_to_boundary(&half, &[0.0, 1.0]).is_err());
        let wedge = ConeProfile::planar(1.0, 1.0).unwrap();
        // on the boundary ray
        assert!(distance_to_boundary(&wedge, &[2.0, 2.0]).unwrap() < 1e-15);
        // straight down the nearest boundary point is the vertex
        let d = distance_to_boundary(&wedge, &[0.0, -1.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        let d = distance_to_boundary(&wedge, &[3.0, 0.0]).unwrap();
        assert!((d - 3.0 * 0.5f64.sqrt()).abs() < 1e-14);
        assert!(distance_to_boundary(&ConeProfile::full_plane(), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn smoothing_exact_regimes() {
        assert_eq!(smoothing_profile(10, 0.005), 0.0);
        assert!((smoothing_profile(10, 0.05) - 0.035).abs() < 1e-16);
        assert_eq!(smoothing_derivative(10, 0.005), 0.0);
        assert_eq!(smoothing_derivative(10, 0.05), 1.0);
        // continuity at both junctions
        let n = 10usize;
        let n2 = 100.0;
        assert!(smoothing_profile(n, 1.0 / n2 + 1e-12).abs() < 1e-12);
        assert!((smoothing_profile(n, 2.0 / n2 - 1e-12) - (2.0 / n2 - 1.5 / n2)).abs() < 1e-12);
        // ∫_1^2 ζ = 1/2
        let half = adaptive_gk(mollifier, 1.0, 2.0, 1e-15).unwrap();
        assert!((half - 0.5).abs() < 1e-14);
    }

    #[test]
    fn smoothing_matches_independent_quadrature() {
        let n = 7usize;
        let n2 = 49.0;
        for i in 1..40 {
            let t = 1.0 / n2 + i as f64 / 40.0 / n2;
            let direct = adaptive_gk(|x| mollifier(n2 * x), 1.0 / n2, t, 1e-16).unwrap();
            assert!((smoothing_profile(n, t) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn starshape_half_plane_and_vertex() {
        let sc = SmoothedCone::new(ConeProfile::half_plane(), 10).unwrap();
        let p = sc.boundary_point(&[0.5]);
        assert!((sc.starshape_margin(&p).unwrap() - 0.1).abs() < 1e-15);
        let wedge = SmoothedCone::new(ConeProfile::planar(1.0, 1.0).unwrap(), 12).unwrap();
        let p0 = wedge.boundary_point(&[0.0]);
        assert_eq!(wedge.starshape_margin(&p0).unwrap(), 1.0 / 12.0);
        assert!(wedge.starshape_margin(&[0.0, 0.5]).is_err());
        assert!(SmoothedCone::new(ConeProfile::planar(1.0, 1.0).unwrap(), 5).is_err());
    }

    #[test]
    fn omega_classification() {
        let sc = SmoothedCone::new(ConeProfile::half_plane(), 40).unwrap();
        let ad = ApproxDomain::new(sc, 0.8).unwrap();
        assert_eq!(ad.classify(&[0.0, -0.4, 0.4]), Region::Interior);
        let z = ad.gamma_point(&[0.1], 0.001);
        assert_eq!(ad.classify(&z), Region::Gamma);
        let (raw, normed) = ad.gamma_normal_dot(&z).unwrap();
        assert!(raw >= 1.0 / 160.0 && normed > 0.0);
        assert_eq!(ad.classify(&[0.0, -0.2, 0.0]), Region::Sigma);
        assert_eq!(ad.classify(&[0.0, 0.0, 0.8]), Region::Tau);
        assert_eq!(ad.classify(&[0.0, 0.0, 0.9]), Region::Exterior);
        assert_eq!(ad.classify(&[0.0, 0.5, 0.01]), Region::Exterior);
    }

    #[test]
    fn general_profile_formula_level() {
        // a circular cone in R^3 with constant g
        let cone = ConeProfile::general(3, 0.5, |_| -0.5).unwrap();
        assert_eq!(cone.dim(), 3);
        assert!((cone.phi(&[0.6, 0.8]) + 0.5).abs() < 1e-15);
        let sc = SmoothedCone::new(cone, 3).unwrap();
        let p = sc.boundary_point(&[0.3, 0.4]);
        assert!(sc.starshape_margin(&p).unwrap() >= 0.75 / 3.0);
    }

    proptest! {
        #[test]
        fn phi_is_homogeneous(gp in -3.0f64..3.0, gm in -3.0f64..3.0, x in -5.0f64..5.0, a in 0.01f64..100.0) {
            let cone = ConeProfile::planar(gp, gm).unwrap();
            let lhs = cone.phi(&[a * x]);
            let rhs = a * cone.phi(&[x]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn distance_is_homogeneous(gp in -3.0f64..3.0, gm in -3.0f64..3.0, th in 0.0f64..1.0, rad in 0.01f64..10.0, a in 0.01f64..100.0) {
            let cone = ConeProfile::planar(gp, gm).unwrap();
            let cap = cap_of_cone(&cone).unwrap();
            let ang = cap.start() + th * cap.length();
            let x = [rad * ang.cos(), rad * ang.sin()];
            let d1 = distance_to_boundary(&cone, &x).unwrap();
            let d2 = distance_to_boundary(&cone, &[a * x[0], a * x[1]]).unwrap();
            prop_assert!((d2 - a * d1).abs() <= 1e-12 * (a * d1).max(1e-300) + 1e-15 * a * rad);
        }

        #[test]
        fn euler_identity_for_phi(gp in -3.0f64..3.0, gm in -3.0f64..3.0, x in 0.1f64..5.0, neg in proptest::bool::ANY) {
            let cone = ConeProfile::planar(gp, gm).unwrap();
            let x = if neg { -x } else { x };
            let h = 1e-5;
            let d = (cone.phi(&[x + h]) - cone.phi(&[x - h])) / (2.0 * h);
            prop_assert!((d * x - cone.phi(&[x])).abs() < 1e-6);
        }
    }
}
