//! Problem parameters and the closed-form maps between spherical eigenvalues,
//! vanishing orders and Hardy constants.

use crate::error::{Error, Result};
use crate::special::gamma;

/// Tolerance on the radicand of [`gamma_from_mu`] below which it is clamped to 0.
pub const RADICAND_TOL: f64 = 1e-12;

/// Scalar parameters of the problem. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    dim: usize,
    s: f64,
    lambda: f64,
    kappa: f64,
    p: f64,
}

impl ProblemParams {
    /// Builds a parameter set. `p` defaults to `10 N / (2s)` when `None`.
    pub fn new(dim: usize, s: f64, lambda: f64, p: Option<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Domain(format!("dimension must be ≥ 2, got {dim}")));
        }
        let kappa = kappa_s(s)?;
        if !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
        }
        let p_min = dim as f64 / (2.0 * s);
        let p = p.unwrap_or(10.0 * p_min);
        if !(p > p_min) {
            return Err(Error::Domain(format!(
                "potential exponent p = {p} must exceed N/(2s) = {p_min}"
            )));
        }
        Ok(Self {
            dim,
            s,
            lambda,
            kappa,
            p,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// A copy with a different Hardy coefficient.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    /// (N - 2s) / 2.
    pub fn half_gap(&self) -> f64 {
        0.5 * (self.dim as f64 - 2.0 * self.s)
    }

    /// Lower end of the spectrum, -((N - 2s)/2)^2.
    pub fn spectrum_floor(&self) -> f64 {
        -self.half_gap().powi(2)
    }

    /// 1 - 2s, exponent of the degenerate weight.
    pub fn weight_exponent(&self) -> f64 {
        1.0 - 2.0 * self.s
    }

    /// Remainder exponent 2s - N/p used when fitting frequency traces.
    pub fn remainder_exponent(&self) -> f64 {
        2.0 * self.s - self.dim as f64 / self.p
    }
}

/// κ_s = Γ(1-s) / (2^{2s-1} Γ(s)).
pub fn kappa_s(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s must lie in (0,1), got {s}")));
    }
    Ok(gamma(1.0 - s) / (2f64.powf(2.0 * s - 1.0) * gamma(s)))
}

/// γ = sqrt(((N-2s)/2)^2 + μ) - (N-2s)/2.
pub fn gamma_from_mu(mu: f64, params: &ProblemParams) -> Result<f64> {
    let c = params.half_gap();
    let radicand = c * c + mu;
    if radicand < -RADICAND_TOL || !radicand.is_finite() {
        return Err(Error::Domain(format!(
            "mu = {mu} lies below the spectrum floor {}",
            -c * c
        )));
    }
    Ok(radicand.max(0.0).sqrt() - c)
}

/// μ = γ (γ + N - 2s).
pub fn mu_from_gamma(gamma: f64, params: &ProblemParams) -> f64 {
    gamma * (gamma + 2.0 * params.half_gap())
}

/// Best constant of the fractional Hardy inequality on the whole space,
/// 2^{2s} Γ²((N+2s)/4) / Γ²((N-2s)/4).
pub fn hardy_constant_full_space(params: &ProblemParams) -> f64 {
    let n = params.dim as f64;
    let s = params.s;
    let ratio = gamma((n + 2.0 * s) / 4.0) / gamma((n - 2.0 * s) / 4.0);
    2f64.powf(2.0 * s) * ratio * ratio
}

/// An eigenvalue together with its vanishing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEigenPairing {
    pub mu: f64,
    pub gamma: f64,
    pub dim: usize,
    pub s: f64,
}

impl OrderEigenPairing {
    pub fn from_mu(mu: f64, params: &ProblemParams) -> Result<Self> {
        if mu <= params.spectrum_floor() - RADICAND_TOL {
            return Err(Error::Domain(format!(
                "mu = {mu} must exceed {}",
                params.spectrum_floor()
            )));
        }
        Ok(Self {
            mu,
            gamma: gamma_from_mu(mu, params)?,
            dim: params.dim,
            s: params.s,
        })
    }

    pub fn from_gamma(gamma: f64, params: &ProblemParams) -> Result<Self> {
        if gamma < -params.half_gap() {
            return Err(Error::Domain(format!(
                "gamma = {gamma} must be ≥ -(N-2s)/2 = {}",
                -params.half_gap()
            )));
        }
        Ok(Self {
            mu: mu_from_gamma(gamma, params),
            gamma,
            dim: params.dim,
            s: params.s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize, s: f64) -> ProblemParams {
        ProblemParams::new(n, s, 0.0, None).unwrap()
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa_s(0.5).unwrap(), 1.0);
        // 30-digit reference values
        assert!((kappa_s(0.25).unwrap() - 0.477_988_797_486_124_995_364).abs() < 1e-12);
        assert!((kappa_s(0.75).unwrap() - 2.092_099_240_106_203_297_904).abs() < 1e-12);
        assert!(kappa_s(0.0).is_err());
        assert!(kappa_s(1.0).is_err());
        assert!(kappa_s(f64::NAN).is_err());
    }

    #[test]
    fn gamma_mu_examples() {
        let p = params(2, 0.5);
        assert_eq!(gamma_from_mu(0.0, &p).unwrap(), 0.0);
        assert!((gamma_from_mu(2.0, &p).unwrap() - 1.0).abs() < 1e-14);
        assert!((gamma_from_mu(0.75, &p).unwrap() - 0.5).abs() < 1e-14);
        let floor = p.spectrum_floor();
        assert!((gamma_from_mu(floor, &p).unwrap() + p.half_gap()).abs() < 1e-14);
        assert!(gamma_from_mu(floor - 1e-6, &p).is_err());

        assert_eq!(mu_from_gamma(0.0, &p), 0.0);
        assert!((mu_from_gamma(1.5, &p) - 3.75).abs() < 1e-14);
        assert!((mu_from_gamma(1.0, &params(3, 0.5)) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn hardy_full_space_examples() {
        let v = hardy_constant_full_space(&params(2, 0.5));
        assert!((v - 0.228_473_290_522_231_812_687).abs() < 1e-12);
        let v = hardy_constant_full_space(&params(4, 0.5));
        assert!((v - 1.094_219_807_613_238_319_418).abs() < 1e-12);
        // decreasing in s for N = 2
        let lo = hardy_constant_full_space(&params(2, 0.25));
        let hi = hardy_constant_full_space(&params(2, 0.75));
        assert!((lo - 0.517_929_895_225_838_917_989).abs() < 1e-12);
        assert!((hi - 0.059_166_573_711_041_089_316).abs() < 1e-12);
        assert!(lo > hi);
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(1, 0.5, 0.0, None).is_err());
        assert!(ProblemParams::new(2, 1.2, 0.0, None).is_err());
        assert!(ProblemParams::new(2, 0.5, 0.0, Some(1.5)).is_err());
        let p = ProblemParams::new(2, 0.5, 0.0, None).unwrap();
        assert_eq!(p.p(), 20.0);
        assert!(OrderEigenPairing::from_mu(-2.0, &p).is_err());
        let pair = OrderEigenPairing::from_gamma(1.5, &p).unwrap();
        assert!((pair.mu - 3.75).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip(s in 0.01f64..0.99, n in 2usize..6, u in 0.0f64..1.0) {
            let p = params(n, s);
            let floor = p.spectrum_floor();
            let mu = floor + (100.0 - floor) * u.max(1e-9);
            let g = gamma_from_mu(mu, &p).unwrap();
            let back = mu_from_gamma(g, &p);
            prop_assert!((back - mu).abs() <= 1e-10 * mu.abs().max(1.0));
        }

        #[test]
        fn gamma_increasing(s in 0.01f64..0.99, a in 0.0f64..50.0, d in 1e-6f64..10.0) {
            let p = params(2, s);
            let mu0 = p.spectrum_floor() + a;
            prop_assert!(gamma_from_mu(mu0 + d, &p).unwrap() > gamma_from_mu(mu0, &p).unwrap());
        }

        #[test]
        fn kappa_positive(s in 1e-4f64..0.9999) {
            prop_assert!(kappa_s(s).unwrap() > 0.0);
        }
    }
}
